"""Parity benchmark, delayed-parity memory capacity and their readout protocol.

Time is divided into periods of length ``T``; period ``k`` covers
``[kT, (k+1)T)`` and carries one random bit. A run is laid out as::

    [washout][training][eval washout][evaluation]

and the envelope samples of each block are used for the stated purpose only.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import DriveConfig, InputSignal
from .network import NetworkInstance
from .readout import (EnvelopeMatrix, ReadoutModel, SimulationConfig, SubsectionLayout,
                      accumulate_statistics, readout, simulate_envelopes, train_sections)


class InsufficientHistory(ValueError):
    pass


class InvalidProbability(ValueError):
    pass


@dataclass(frozen=True)
class ParityTaskConfig:
    period: float = 65.0
    order: int = 3
    train_periods: int = 359
    eval_periods: int = 500
    washout_periods: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be > 0, got {self.period}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.train_periods < 1 or self.eval_periods < 1 or self.washout_periods < 0:
            raise ValueError("train/eval periods must be >= 1 and washout >= 0")

    @property
    def total_periods(self):
        return 2 * self.washout_periods + self.train_periods + self.eval_periods

    @property
    def train_range(self):
        start = self.washout_periods
        return range(start, start + self.train_periods)

    @property
    def eval_range(self):
        start = 2 * self.washout_periods + self.train_periods
        return range(start, start + self.eval_periods)


class BinaryInput(InputSignal):
    """±1 bit stream, constant on each input period."""

    def __init__(self, bits, period, task: ParityTaskConfig | None = None):
        bits = np.asarray(bits, dtype=np.float64)
        super().__init__(period * np.arange(len(bits) + 1), bits, "piecewise_constant")
        self.bits = bits
        self.period = float(period)
        self.task = task

    def period_index(self, times):
        k = np.floor(np.asarray(times) / self.period + 1e-9).astype(np.int64)
        return np.clip(k, 0, len(self.bits) - 1)


def generate_binary_input(config: ParityTaskConfig) -> BinaryInput:
    """Independent uniform ±1 bits, one per period, from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    bits = rng.choice(np.array([-1.0, 1.0]), size=config.total_periods)
    return BinaryInput(bits, config.period, config)


def parity_target(bits, n: int, k: int, delay: int = 1) -> int:
    """Product of the ``n`` bits ending ``delay`` periods before period ``k``.

    ``delay=1`` is the n-th order parity (the bits strictly preceding k);
    ``delay=0`` includes the current bit.
    """
    lo = k - delay - n + 1
    if lo < 0 or k - delay >= len(bits):
        raise InsufficientHistory(f"period {k} lacks {n} bits of history at delay {delay}")
    return int(np.prod(bits[lo:k - delay + 1]))


def parity_targets(bits, n: int, delay: int = 1) -> np.ndarray:
    """Vector of :func:`parity_target` over all periods (NaN without history)."""
    bits = np.asarray(bits, dtype=np.float64)
    out = np.full(len(bits), np.nan)
    first = n + delay - 1
    if first >= len(bits):
        return out
    # windowed product of ±1 values through a cumulative sign count
    neg = np.concatenate([[0], np.cumsum(bits < 0)])
    k = np.arange(first, len(bits))
    count = neg[k - delay + 1] - neg[k - delay - n + 1]
    out[first:] = np.where(count % 2, -1.0, 1.0)
    return out


@dataclass
class ParityModel:
    readout: ReadoutModel
    order: int
    delay: int = 1


@dataclass
class ParityResult:
    decisions: np.ndarray
    truths: np.ndarray
    integrals: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.decisions = np.asarray(self.decisions)
        self.truths = np.asarray(self.truths)
        if self.decisions.shape != self.truths.shape:
            raise ValueError("decisions and truths must have equal length")

    @property
    def trials(self):
        return len(self.truths)

    @property
    def successes(self):
        return int(np.sum(self.decisions == self.truths))

    @property
    def success_prob(self):
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def ci(self):
        return wilson_interval(self.successes, self.trials)


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def _columns(envelopes: EnvelopeMatrix, signal: BinaryInput, periods):
    k = signal.period_index(envelopes.times)
    periods = np.asarray(list(periods))
    mask = (k >= periods.min()) & (k <= periods.max())
    return mask, k


def _default_layout(n):
    return SubsectionLayout.contiguous(n, 10) if n % 10 == 0 else SubsectionLayout(((0, n),))


def train_parity_tasks(envelopes: EnvelopeMatrix, signal: BinaryInput, tasks, layout=None,
                       ridge="auto", periods=None):
    """Fit one readout per ``(order, delay)`` task from a single Gram matrix.

    ``periods`` defaults to the training block of ``signal.task``.
    """
    tasks = [tuple(t) for t in tasks]
    layout = layout or _default_layout(envelopes.n)
    periods = periods if periods is not None else signal.task.train_range
    mask, k = _columns(envelopes, signal, periods)
    targets = np.stack([parity_targets(signal.bits, n, d)[k[mask]] for n, d in tasks], axis=1)
    if np.isnan(targets).any():
        raise InsufficientHistory("training periods start before enough input history")
    gram, cross = accumulate_statistics(envelopes.values[:, mask], targets)
    solved = train_sections(gram, cross, layout, ridge)
    return {
        (n, d): ParityModel(ReadoutModel(layout, [w[:, j] for w in solved], ridge), n, d)
        for j, (n, d) in enumerate(tasks)
    }


def train_parity(envelopes: EnvelopeMatrix, signal: BinaryInput, n: int, layout=None,
                 ridge="auto", *, delay=1, periods=None) -> ParityModel:
    """Ridge-fit section weights to the ±1 parity target held over each period."""
    return train_parity_tasks(envelopes, signal, [(n, delay)], layout, ridge, periods)[(n, delay)]


def evaluate_parity(model: ParityModel, envelopes: EnvelopeMatrix, signal: BinaryInput,
                    periods=None) -> ParityResult:
    """Average the section outputs, integrate over each period, decide by sign.

    A zero integral decides +1.
    """
    periods = np.asarray(list(periods if periods is not None else signal.task.eval_range))
    mask, k = _columns(envelopes, signal, periods)
    y = readout(model.readout, envelopes.values[:, mask]).mean(axis=0)
    dt = envelopes.interval if len(envelopes) > 1 else 1.0
    integrals = np.bincount(k[mask] - periods.min(), weights=y * dt,
                            minlength=len(periods))[periods - periods.min()]
    decisions = np.where(integrals >= 0, 1, -1)
    truths = parity_targets(signal.bits, model.order, model.delay)[periods]
    if np.isnan(truths).any():
        raise InsufficientHistory("evaluation periods start before enough input history")
    return ParityResult(decisions, truths.astype(int), integrals)


def mutual_information(p) -> float:
    """Bits carried by a balanced binary decision that is right with probability p."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability(f"probability must lie in [0, 1], got {p}")
    total = 0.0
    for q in (p, 1.0 - p):
        if q > 0:
            total += q * np.log2(2.0 * q)
    return total


def memory_capacity(success_probs) -> float:
    """Sum of :func:`mutual_information` over delays 0..4 of the delayed P3 task."""
    return float(sum(mutual_information(p) for p in success_probs))


# ---------------------------------------------------------------------------
# End-to-end runs


@dataclass
class ParityRun:
    signal: BinaryInput
    envelopes: EnvelopeMatrix


def simulate_parity(instance: NetworkInstance, drive: DriveConfig, task: ParityTaskConfig,
                    sim: SimulationConfig = SimulationConfig(), *, signal=None,
                    after_training: NetworkInstance | None = None) -> ParityRun:
    """Drive the network with a fresh bit stream and return its envelopes.

    With ``after_training`` the network is swapped for that instance at the
    end of the training block (state and filter memory carry over).
    """
    signal = signal or generate_binary_input(task)
    dt = sim.step(drive, task.period)
    filt = sim.filter_for(drive, task.period)
    t_end = task.total_periods * task.period
    kw = dict(chunk_records=sim.chunk_records, bound=sim.bound)
    if after_training is None:
        env, _, _ = simulate_envelopes(instance, drive, signal, (0.0, t_end), dt,
                                       sim.record_stride, sim.decimation, filt, **kw)
        return ParityRun(signal, env)
    t_switch = task.train_range.stop * task.period
    first, state, extractor = simulate_envelopes(instance, drive, signal, (0.0, t_switch), dt,
                                                 sim.record_stride, sim.decimation, filt, **kw)
    second, _, _ = simulate_envelopes(after_training, drive, signal, (t_switch, t_end), dt,
                                      sim.record_stride, sim.decimation, filt,
                                      initial=state, extractor=extractor, **kw)
    return ParityRun(signal, EnvelopeMatrix.concatenate([first, second]))


class ParityCheckpoint:
    """Network state at the end of the training block, reusable for several
    post-training continuations."""

    def __init__(self, instance, drive, task, sim, signal=None):
        self.drive, self.task, self.sim = drive, task, sim
        self.signal = signal or generate_binary_input(task)
        self.dt = sim.step(drive, task.period)
        self.filt = sim.filter_for(drive, task.period)
        self.t_switch = task.train_range.stop * task.period
        self.train_env, self._state, self._extractor = simulate_envelopes(
            instance, drive, self.signal, (0.0, self.t_switch), self.dt, sim.record_stride,
            sim.decimation, self.filt, chunk_records=sim.chunk_records, bound=sim.bound)

    def continue_with(self, instance) -> ParityRun:
        t_end = self.task.total_periods * self.task.period
        rest, _, _ = simulate_envelopes(
            instance, self.drive, self.signal, (self.t_switch, t_end), self.dt,
            self.sim.record_stride, self.sim.decimation, self.filt,
            initial=self._state.copy(), extractor=copy.deepcopy(self._extractor),
            chunk_records=self.sim.chunk_records, bound=self.sim.bound)
        return ParityRun(self.signal, EnvelopeMatrix.concatenate([self.train_env, rest]))


PARITY_TASKS = ((3, 1), (4, 1), (5, 1))
DELAY_TASKS = tuple((3, d) for d in range(5))


def task_label(task):
    n, d = task
    return f"P{n}" if d == 1 else f"P{n}_delay{d}"


def score_run(run: ParityRun, tasks, layout=None, ridge="auto", models=None):
    """Train (unless ``models`` is given) and evaluate every task on one run."""
    if models is None:
        models = train_parity_tasks(run.envelopes, run.signal, tasks, layout, ridge)
    return {t: evaluate_parity(models[t], run.envelopes, run.signal) for t in tasks}, models


def parity_benchmark(instance, drive, task: ParityTaskConfig,
                     sim: SimulationConfig = SimulationConfig(), *, orders=(3, 4, 5),
                     delays=range(5), layout=None, ridge="auto"):
    """Full parity + memory-capacity run on one bit stream.

    Returns a dict with a :class:`ParityResult` per task label and the
    memory capacity in bits.
    """
    tasks = sorted({(n, 1) for n in orders} | {(3, d) for d in delays})
    run = simulate_parity(instance, drive, task, sim)
    results, _ = score_run(run, tasks, layout, ridge)
    summary = {task_label(t): r for t, r in results.items()}
    if delays:
        summary["memory_capacity"] = memory_capacity(
            [results[(3, d)].success_prob for d in delays])
    return summary

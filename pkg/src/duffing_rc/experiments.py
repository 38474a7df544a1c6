"""Parameter sweeps, disorder robustness and training-replica statistics.

Every work item (a grid cell, a replica) derives its own seeds from one
master seed and a counter key, so results do not depend on the order in
which items run or on how many worker processes share them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import DriveConfig, NumericalBlowup
from .network import NetworkConfig, PerturbationSpec, build_network, perturb_network
from .parity import (ParityCheckpoint, ParityTaskConfig, memory_capacity,
                     score_run, simulate_parity, task_label, wilson_interval)
from .readout import SimulationConfig, SolveFailure, SubsectionLayout

log = logging.getLogger(__name__)


def derive_seed(master: int, *key) -> int:
    """Child seed for the work item named by ``key`` (ints or strings)."""
    words = tuple(k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode())
                  for k in key)
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(w) for w in words))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ParityExperiment:
    """Everything needed to run the parity protocol on one network."""

    network: NetworkConfig = NetworkConfig()
    drive: DriveConfig = DriveConfig()
    task: ParityTaskConfig = ParityTaskConfig()
    sim: SimulationConfig = SimulationConfig()
    orders: tuple = (3, 4, 5)
    sections: int = 10
    ridge: object = "auto"

    def layout(self):
        return SubsectionLayout.contiguous(self.network.n_oscillators, self.sections)

    def tasks(self, delays=()):
        return sorted({(n, 1) for n in self.orders} | {(3, d) for d in delays})


def spec_hash(obj) -> str:
    """Short stable digest of a dataclass tree, used in result file names."""
    text = json.dumps(asdict(obj), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _pool_map(fn, items, workers):
    """Ordered map, in-process when ``workers <= 1``."""
    if workers is None or workers <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, items)


def _result_rows(base, results):
    rows = []
    for label, r in results.items():
        lo, hi = r.ci
        rows.append({**base, "task": label, "trials": r.trials, "successes": r.successes,
                     "success_prob": r.success_prob, "ci_low": lo, "ci_high": hi,
                     "status": "ok", "error": ""})
    return rows


class _CsvLog:
    """Append-only long-format CSV that remembers which work items it holds."""

    def __init__(self, path, fields, key_fields):
        self.path = Path(path)
        self.fields = fields
        self.key_fields = key_fields
        self.rows = []
        if self.path.exists():
            with open(self.path, newline="") as fh:
                self.rows = list(csv.DictReader(fh))
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.DictWriter(fh, fields).writeheader()

    def key(self, row):
        return tuple(str(row[k]) for k in self.key_fields)

    def done(self):
        return {self.key(r) for r in self.rows}

    def extend(self, rows):
        with open(self.path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, self.fields)
            for row in rows:
                writer.writerow({k: _fmt(row.get(k, "")) for k in self.fields})
        self.rows.extend({k: str(_fmt(row.get(k, ""))) for k in self.fields} for row in rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# Global A-T sweep


@dataclass(frozen=True)
class SweepSpec:
    a_values: tuple = tuple(np.round(np.linspace(0.4, 1.2, 8), 6))
    t_values: tuple = tuple(np.round(np.linspace(30.0, 130.0, 8), 6))
    replicas: int = 1
    base: ParityExperiment = ParityExperiment()
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a_values", tuple(float(a) for a in self.a_values))
        object.__setattr__(self, "t_values", tuple(float(t) for t in self.t_values))
        if not self.a_values or not self.t_values:
            raise ValueError("a_values and t_values must be nonempty")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")


SWEEP_FIELDS = ["A", "T", "replica", "task", "trials", "successes", "success_prob",
                "ci_low", "ci_high", "status", "error"]


def _sweep_cell(item):
    spec, a, t, r = item
    base = spec.base
    seed = derive_seed(spec.master_seed, "sweep", repr(a), repr(t), r)
    key = {"A": a, "T": t, "replica": r}
    try:
        instance = build_network(base.network)
        drive = replace(base.drive, amplitude=a)
        task = replace(base.task, period=t, seed=seed)
        run = simulate_parity(instance, drive, task, base.sim)
        results, _ = score_run(run, base.tasks(), base.layout(), base.ridge)
        return _result_rows(key, {task_label(k): v for k, v in results.items()})
    except (NumericalBlowup, SolveFailure, ValueError) as exc:
        log.warning("sweep cell A=%g T=%g replica %d failed: %s", a, t, r, exc)
        return [{**key, "task": "", "status": "failed",
                 "error": f"{type(exc).__name__}: {exc}"}]


@dataclass
class ResultGrid:
    """Replica-pooled success probabilities on an ``A x T`` grid.

    ``prob[label]`` etc. have shape ``(len(A), len(T))``; failed or missing
    cells are NaN.
    """

    a_values: tuple
    t_values: tuple
    prob: dict
    ci_low: dict
    ci_high: dict
    failures: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, a_values, t_values, rows):
        shape = (len(a_values), len(t_values))
        labels = sorted({r["task"] for r in rows if r["status"] == "ok"})
        succ = {lab: np.zeros(shape) for lab in labels}
        trials = {lab: np.zeros(shape) for lab in labels}
        ia = {float(a): i for i, a in enumerate(a_values)}
        it = {float(t): i for i, t in enumerate(t_values)}
        failures = []
        for r in rows:
            pos = ia[float(r["A"])], it[float(r["T"])]
            if r["status"] != "ok":
                failures.append((float(r["A"]), float(r["T"]), int(r["replica"]), r["error"]))
                continue
            succ[r["task"]][pos] += float(r["successes"])
            trials[r["task"]][pos] += float(r["trials"])
        prob, lo, hi = {}, {}, {}
        for lab in labels:
            with np.errstate(invalid="ignore"):
                prob[lab] = succ[lab] / trials[lab]
            bounds = np.array([[wilson_interval(s, n) if n else (np.nan, np.nan)
                                for s, n in zip(srow, nrow)]
                               for srow, nrow in zip(succ[lab], trials[lab])])
            lo[lab], hi[lab] = bounds[..., 0], bounds[..., 1]
        return cls(tuple(a_values), tuple(t_values), prob, lo, hi, failures)

    def to_json(self):
        return {
            "A": list(self.a_values), "T": list(self.t_values),
            "success_prob": {k: v.tolist() for k, v in self.prob.items()},
            "ci_low": {k: v.tolist() for k, v in self.ci_low.items()},
            "ci_high": {k: v.tolist() for k, v in self.ci_high.items()},
            "failures": [list(f) for f in self.failures],
        }


def run_sweep(spec: SweepSpec, output_dir=None, workers: int = 1) -> ResultGrid:
    """Run every ``(A, T, replica)`` cell, skipping cells already on disk.

    With ``output_dir`` rows are appended to ``sweep_<hash>.csv`` as cells
    finish (in a fixed order), so an interrupted sweep resumes where it
    stopped; a JSON summary is written at the end.
    """
    items = [(spec, a, t, r) for a in spec.a_values for t in spec.t_values
             for r in range(spec.replicas)]
    if output_dir is None:
        rows = [row for cell in _pool_map(_sweep_cell, items, workers) for row in cell]
        return ResultGrid.from_rows(spec.a_values, spec.t_values, rows)

    stem = Path(output_dir) / f"sweep_{spec_hash(spec)}"
    book = _CsvLog(stem.with_suffix(".csv"), SWEEP_FIELDS, ("A", "T", "replica"))
    done = book.done()
    todo = [it for it in items if (str(_fmt(it[1])), str(_fmt(it[2])), str(it[3])) not in done]
    log.info("sweep: %d cells, %d already done", len(items), len(items) - len(todo))
    for rows in _pool_map(_sweep_cell, todo, workers):
        book.extend(rows)
    grid = ResultGrid.from_rows(spec.a_values, spec.t_values, book.rows)
    stem.with_suffix(".json").write_text(json.dumps(grid.to_json(), indent=1))
    return grid


# ---------------------------------------------------------------------------
# Disorder robustness


@dataclass(frozen=True)
class RobustnessSpec:
    parameter: str = "Q"
    sigma_values: tuple = (0.0, 1e-3, 1e-2, 1e-1)
    placement: str = "post_training"
    replicas: int = 8
    base: ParityExperiment = ParityExperiment()
    master_seed: int = 0

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma_values)
        object.__setattr__(self, "sigma_values", sig)
        if not sig or any(s < 0 for s in sig) or list(sig) != sorted(sig):
            raise ValueError("sigma_values must be nonempty, >= 0 and sorted")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        # validates parameter and placement
        PerturbationSpec(self.parameter, 0.0, 0, self.placement)


ROBUSTNESS_FIELDS = ["parameter", "placement", "sigma", "replica", "task", "trials",
                     "successes", "success_prob", "ci_low", "ci_high", "status", "error"]


def _robustness_replica(item):
    spec, r = item
    base = spec.base
    # the same disorder pattern z is reused for every sigma of a replica
    task = replace(base.task, seed=derive_seed(spec.master_seed, "robustness-input", r))
    z_seed = derive_seed(spec.master_seed, "robustness-z", spec.parameter, r)
    nominal = build_network(base.network)
    tasks, layout = base.tasks(), base.layout()
    rows = []

    def record(sigma, fn):
        key = {"parameter": spec.parameter, "placement": spec.placement,
               "sigma": sigma, "replica": r}
        try:
            results = fn()
            rows.extend(_result_rows(key, {task_label(k): v for k, v in results.items()}))
        except (NumericalBlowup, SolveFailure, ValueError) as exc:
            rows.append({**key, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})

    def perturbed(sigma):
        pert = PerturbationSpec(spec.parameter, sigma, z_seed, spec.placement)
        return perturb_network(nominal, base.drive, pert)

    if spec.placement == "pre_training":
        for sigma in spec.sigma_values:
            def pre(sigma=sigma):
                inst, drive = perturbed(sigma)
                return score_run(simulate_parity(inst, drive, task, base.sim),
                                 tasks, layout, base.ridge)[0]
            record(sigma, pre)
        return rows

    checkpoint = ParityCheckpoint(nominal, base.drive, task, base.sim)
    _, models = score_run(checkpoint.continue_with(nominal), tasks, layout, base.ridge)
    for sigma in spec.sigma_values:
        record(sigma, lambda sigma=sigma: score_run(
            checkpoint.continue_with(perturbed(sigma)[0]), tasks, models=models)[0])
    return rows


@dataclass
class RobustnessCurve:
    """Mean success probability against sigma for one task label."""

    sigma: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    replicas: np.ndarray


def robustness_curves(rows, sigma_values):
    """Replica mean, std and pooled Wilson interval per sigma and task."""
    out = {}
    labels = sorted({r["task"] for r in rows if r["status"] == "ok"})
    for lab in labels:
        cols = {k: [] for k in ("mean", "std", "ci_low", "ci_high", "replicas")}
        for s in sigma_values:
            sel = [r for r in rows if r["status"] == "ok" and r["task"] == lab
                   and float(r["sigma"]) == s]
            p = np.array([float(r["success_prob"]) for r in sel])
            k = sum(int(r["successes"]) for r in sel)
            n = sum(int(r["trials"]) for r in sel)
            lo, hi = wilson_interval(k, n) if n else (np.nan, np.nan)
            cols["mean"].append(p.mean() if len(p) else np.nan)
            cols["std"].append(p.std(ddof=1) if len(p) > 1 else 0.0)
            cols["ci_low"].append(lo)
            cols["ci_high"].append(hi)
            cols["replicas"].append(len(p))
        out[lab] = RobustnessCurve(np.array(sigma_values), *(np.array(cols[k]) for k in
                                   ("mean", "std", "ci_low", "ci_high", "replicas")))
    return out


def run_robustness(spec: RobustnessSpec, output_dir=None, workers: int = 1):
    """Success probability against perturbation strength.

    ``pre_training``: perturb, then train and evaluate. ``post_training``:
    train on the nominal network, swap in the perturbed one after the
    training block and evaluate with the frozen weights. Returns
    ``{task_label: RobustnessCurve}``.
    """
    items = [(spec, r) for r in range(spec.replicas)]
    if output_dir is None:
        rows = [row for rep in _pool_map(_robustness_replica, items, workers) for row in rep]
        return robustness_curves(rows, spec.sigma_values)
    stem = Path(output_dir) / f"robustness_{spec.parameter}_{spec.placement}_{spec_hash(spec)}"
    book = _CsvLog(stem.with_suffix(".csv"), ROBUSTNESS_FIELDS, ("replica",))
    done = book.done()
    todo = [it for it in items if (str(it[1]),) not in done]
    for rows in _pool_map(_robustness_replica, todo, workers):
        book.extend(rows)
    curves = robustness_curves(book.rows, spec.sigma_values)
    stem.with_suffix(".json").write_text(json.dumps(
        {lab: {k: np.asarray(v).tolist() for k, v in asdict(c).items()}
         for lab, c in curves.items()}, indent=1))
    return curves


# ---------------------------------------------------------------------------
# Training replicas


@dataclass
class ReplicaStats:
    values: np.ndarray
    mean: float
    std: float
    p10: float


def percentile10(values) -> float:
    """10th percentile with linear interpolation between order statistics."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), 10))


def _replica(item):
    base, seed, delays = item
    instance = build_network(base.network)
    task = replace(base.task, seed=int(seed))
    results, _ = score_run(simulate_parity(instance, base.drive, task, base.sim),
                           base.tasks(delays), base.layout(), base.ridge)
    out = {task_label(k): v.success_prob for k, v in results.items()}
    if delays:
        out["memory_capacity"] = memory_capacity([results[(3, d)].success_prob
                                                  for d in delays])
    return out


def run_training_replicas(count: int, base: ParityExperiment = ParityExperiment(),
                          seeds=None, master_seed: int = 0, delays=(), workers: int = 1):
    """Retrain the fixed network on ``count`` independent bit streams.

    Returns ``({label: ReplicaStats}, per_replica_dicts)``.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if seeds is None:
        seeds = [derive_seed(master_seed, "replica", r) for r in range(count)]
    seeds = list(seeds)[:count]
    if len(seeds) < count:
        raise ValueError(f"need {count} seeds, got {len(seeds)}")
    per = list(_pool_map(_replica, [(base, s, tuple(delays)) for s in seeds], workers))
    summary = {}
    for lab in per[0]:
        v = np.array([p[lab] for p in per])
        summary[lab] = ReplicaStats(v, float(v.mean()), float(v.std(ddof=1)), percentile10(v))
    return summary, per


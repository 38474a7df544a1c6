"""Envelope demodulation, streaming normal equations and linear readouts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, signal

from .dynamics import DriveConfig, InputSignal, State, default_dt, integrate, n_steps


class InvalidCutoff(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class SolveFailure(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# Butterworth low-pass design


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Digital low-pass realised as cascaded second-order sections.

    ``cutoff`` is in cycles per sample of the (decimated) sample rate.
    ``sos`` rows are ``[b0, b1, b2, 1, a1, a2]`` as used by ``scipy.signal``.
    """

    order: int
    cutoff: float
    sos: np.ndarray

    @property
    def numerator(self):
        return np.trim_zeros(signal.sos2tf(self.sos)[0], "b")

    @property
    def denominator(self):
        return np.trim_zeros(signal.sos2tf(self.sos)[1], "b")

    def poles(self):
        return np.concatenate([np.roots(row[3:]) for row in self.sos])

    def response(self, freqs):
        """Complex response at ``freqs`` (cycles/sample)."""
        z = np.exp(2j * np.pi * np.asarray(freqs, dtype=float))
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h *= (b0 + b1 / z + b2 / z ** 2) / (1.0 + a1 / z + a2 / z ** 2)
        return h


def design_lowpass(order: int, cutoff: float) -> FilterCoefficients:
    """Butterworth low-pass by the bilinear transform with frequency prewarping.

    Each section is scaled to unit DC gain, so the cascade has DC gain 1 and
    gain ``1/sqrt(2)`` at ``cutoff``.
    """
    if not 0.0 < cutoff < 0.5:
        raise InvalidCutoff(f"cutoff must lie in (0, 0.5) cycles/sample, got {cutoff}")
    order = int(order)
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")

    warped = 2.0 * np.tan(np.pi * cutoff)  # analog cutoff for s = 2 (z - 1) / (z + 1)
    k = np.arange(order)
    analog = warped * np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))
    digital = (2.0 + analog) / (2.0 - analog)

    sections = []
    upper = digital[digital.imag > 1e-14]
    for p in upper:
        a1, a2 = -2.0 * p.real, abs(p) ** 2
        g = (1.0 + a1 + a2) / 4.0
        sections.append((abs(p), [g, 2 * g, g, 1.0, a1, a2]))
    if order % 2:
        p = digital[np.argmin(abs(digital.imag))].real
        g = (1.0 - p) / 2.0
        sections.append((abs(p), [g, g, 0.0, 1.0, -p, 0.0]))
    # poles nearest the unit circle go last
    sections.sort(key=lambda item: item[0])
    sos = np.array([row for _, row in sections])
    return FilterCoefficients(order, float(cutoff), sos)


def envelope_cutoff(timescale: float, sample_interval: float, cycles: float = 0.6) -> float:
    """Normalised cutoff placing ``cycles`` oscillations in one ``timescale``.

    With the default the cutoff angular frequency is ``6 pi / (5 timescale)``.
    """
    return cycles * sample_interval / timescale


@dataclass(frozen=True)
class SimulationConfig:
    """Integration and envelope-extraction settings.

    ``dt=None`` picks 64 steps per drive cycle, rounded so that the input
    period is a whole number of steps. ``cutoff=None`` sets the envelope
    cutoff to ``cutoff_cycles`` cycles per input period.
    """

    dt: float | None = None
    record_stride: int = 2
    decimation: int = 10
    filter_order: int = 7
    cutoff: float | None = None
    cutoff_cycles: float = 0.6
    chunk_records: int = 4000
    bound: float = 1e6

    def step(self, drive: DriveConfig, period: float) -> float:
        dt = self.dt if self.dt is not None else default_dt(drive)
        return period / max(1, round(period / dt))

    def filter_for(self, drive: DriveConfig, timescale: float, cycles: float | None = None):
        """Envelope filter for signals varying on ``timescale``.

        ``cycles`` overrides :attr:`cutoff_cycles`; an explicit
        :attr:`cutoff` overrides both.
        """
        interval = self.step(drive, timescale) * self.record_stride * self.decimation
        cutoff = self.cutoff
        if cutoff is None:
            cutoff = envelope_cutoff(timescale, interval,
                                     self.cutoff_cycles if cycles is None else cycles)
        return design_lowpass(self.filter_order, cutoff)



# ---------------------------------------------------------------------------
# Envelopes


@dataclass
class EnvelopeMatrix:
    """``values[i, j]`` is the envelope of oscillator i at ``times[j]``."""

    values: np.ndarray
    times: np.ndarray

    @property
    def n(self):
        return self.values.shape[0]

    def __len__(self):
        return self.values.shape[1]

    @property
    def interval(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else np.nan

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        return cls(np.concatenate([p.values for p in parts], axis=1),
                   np.concatenate([p.times for p in parts]))


def check_aliasing(drive: DriveConfig, sample_interval: float, cutoff: float):
    """Raise if the 2*Omega demodulation image folds into the passband."""
    f2 = 2.0 * drive.omega_drive / (2.0 * np.pi) * sample_interval
    folded = abs(f2 - np.round(f2))
    if folded <= 2.0 * cutoff:
        raise ValueError(
            f"2*Omega image aliases to {folded:.4g} cycles/sample, inside the "
            f"filter passband (cutoff {cutoff:.4g}); change dt or record_stride")


class EnvelopeExtractor:
    """Causal, chunkable demodulator: multiply by cos(Omega t), keep every
    ``decimation``-th sample, low-pass filter.

    Filter state and the decimation phase persist across :meth:`process`
    calls, so feeding a trajectory in pieces gives the same result as
    feeding it whole.
    """

    def __init__(self, drive: DriveConfig, decimation: int, filt: FilterCoefficients):
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.drive = drive
        self.decimation = int(decimation)
        self.filt = filt
        self._zi = None
        self._seen = 0
        self._checked = False

    def process(self, traj) -> EnvelopeMatrix:
        if not self._checked and len(traj.times):
            check_aliasing(self.drive, traj.dt_record * self.decimation, self.filt.cutoff)
            self._checked = True
        first = (-(self._seen + 1)) % self.decimation
        keep = slice(first, None, self.decimation)
        self._seen += len(traj.times)
        times = traj.times[keep]
        mixed = traj.positions[:, keep] * np.cos(self.drive.omega_drive * times)
        if self._zi is None:
            self._zi = np.zeros((self.filt.sos.shape[0], traj.positions.shape[0], 2))
        if mixed.shape[1] == 0:
            return EnvelopeMatrix(mixed, times)
        values, self._zi = signal.sosfilt(self.filt.sos, mixed, axis=1, zi=self._zi)
        return EnvelopeMatrix(values, times)


def extract_envelopes(traj, drive: DriveConfig, decimation: int,
                      filt: FilterCoefficients) -> EnvelopeMatrix:
    return EnvelopeExtractor(drive, decimation, filt).process(traj)


def stream_envelopes(instance, drive, u: InputSignal, t_span, dt, record_stride,
                     decimation, filt, *, initial: State | None = None,
                     extractor: EnvelopeExtractor | None = None,
                     chunk_records: int = 4000, bound: float = 1e6):
    """Integrate and demodulate chunk by chunk.

    Yields ``(envelope_chunk, state, extractor)`` after each chunk; the
    raw trajectory is never held in full.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    steps = n_steps((t0, t1), dt)
    chunk = chunk_records * record_stride * decimation
    extractor = extractor or EnvelopeExtractor(drive, decimation, filt)
    state = initial
    done = 0
    while done < steps:
        k = min(chunk, steps - done)
        start = t0 + done * dt
        traj = integrate(instance, drive, u, (start, start + k * dt), dt,
                         record_stride, initial=state, bound=bound)
        state = traj.final_state
        done += k
        yield extractor.process(traj), state, extractor


def simulate_envelopes(instance, drive, u: InputSignal, t_span, dt, record_stride,
                       decimation, filt, *, initial: State | None = None,
                       extractor: EnvelopeExtractor | None = None,
                       chunk_records: int = 4000, bound: float = 1e6):
    """Run :func:`stream_envelopes` to completion and join the chunks.

    Returns ``(envelopes, final_state, extractor)``; pass the last two back
    in to continue the same run (possibly with a different instance).
    """
    extractor = extractor or EnvelopeExtractor(drive, decimation, filt)
    state = initial if initial is not None else State.rest(instance.n, float(t_span[0]))
    parts = []
    for part, state, extractor in stream_envelopes(
            instance, drive, u, t_span, dt, record_stride, decimation, filt,
            initial=initial, extractor=extractor, chunk_records=chunk_records, bound=bound):
        parts.append(part)
    env = EnvelopeMatrix.concatenate(parts) if parts else EnvelopeMatrix(
        np.zeros((instance.n, 0)), np.zeros(0))
    return env, state, extractor


# ---------------------------------------------------------------------------
# Normal-equation statistics


class GramAccumulator:
    """Running ``sum_j c_j c_j^T`` kept as a packed upper triangle."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._iu = np.triu_indices(self.dim)
        self.packed = np.zeros(len(self._iu[0]))
        self.count = 0

    def add(self, block):
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[0] != self.dim:
            raise DimensionMismatch(f"column length {block.shape[0]} != {self.dim}")
        self.packed += (block @ block.T)[self._iu]
        self.count += block.shape[1]
        return self

    def merge(self, other: "GramAccumulator"):
        if other.dim != self.dim:
            raise DimensionMismatch("cannot merge accumulators of different size")
        out = GramAccumulator(self.dim)
        out.packed = self.packed + other.packed
        out.count = self.count + other.count
        return out

    __add__ = merge

    def matrix(self, index=None):
        full = np.zeros((self.dim, self.dim))
        full[self._iu] = self.packed
        full = full + np.triu(full, 1).T
        if index is not None:
            full = full[np.ix_(index, index)]
        return full


class CrossAccumulator:
    """Running ``sum_j c_j y_j^T`` for one or several targets."""

    def __init__(self, dim: int, n_targets: int = 1):
        self.dim = int(dim)
        self.values = np.zeros((self.dim, int(n_targets)))
        self.count = 0

    def add(self, block, targets):
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[:, None]
        targets = np.asarray(targets, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        if block.shape[0] != self.dim:
            raise DimensionMismatch(f"column length {block.shape[0]} != {self.dim}")
        if targets.shape != (block.shape[1], self.values.shape[1]):
            raise DimensionMismatch(
                f"targets shape {targets.shape} does not match "
                f"({block.shape[1]}, {self.values.shape[1]})")
        self.values += block @ targets
        self.count += block.shape[1]
        return self

    def merge(self, other: "CrossAccumulator"):
        if other.values.shape != self.values.shape:
            raise DimensionMismatch("cannot merge accumulators of different shape")
        out = CrossAccumulator(self.dim, self.values.shape[1])
        out.values = self.values + other.values
        out.count = self.count + other.count
        return out

    __add__ = merge


def accumulate_statistics(envelopes, targets, *, chunk: int = 8192):
    """Build Gram and cross accumulators from a column stream.

    ``envelopes`` is either an ``(N, M)`` array or an iterable of columns;
    ``targets`` has length M (or shape ``(M, K)`` for K targets).
    """
    if isinstance(envelopes, np.ndarray) and envelopes.ndim == 2:
        targets = np.asarray(targets, dtype=np.float64)
        k = 1 if targets.ndim == 1 else targets.shape[1]
        gram, cross = GramAccumulator(envelopes.shape[0]), CrossAccumulator(envelopes.shape[0], k)
        if targets.shape[0] != envelopes.shape[1]:
            raise DimensionMismatch("one target value per envelope column is required")
        for j in range(0, envelopes.shape[1], chunk):
            gram.add(envelopes[:, j:j + chunk])
            cross.add(envelopes[:, j:j + chunk], targets[j:j + chunk])
        return gram, cross
    gram = cross = None
    for column, y in zip(envelopes, targets):
        column = np.asarray(column, dtype=np.float64)
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if gram is None:
            gram, cross = GramAccumulator(len(column)), CrossAccumulator(len(column), len(y))
        gram.add(column)
        cross.add(column, y[None, :])
    if gram is None:
        raise ValueError("empty stream")
    return gram, cross


def default_ridge(gram_matrix) -> float:
    """Scale-aware Tikhonov parameter: 1e-6 of the mean diagonal.

    An all-zero Gram matrix (silent reservoir) gets 1, which yields zero weights.
    """
    scale = float(np.trace(gram_matrix)) / gram_matrix.shape[0]
    return 1e-6 * scale if scale > 0 else 1.0


def solve_weights(gram, cross, ridge="auto", index=None):
    """Solve ``(G + ridge I) w = c`` by Cholesky factorisation.

    ``gram`` may be a :class:`GramAccumulator` or a dense matrix, ``cross``
    a :class:`CrossAccumulator` or an array. ``index`` restricts the solve to
    a subset of oscillators. Returns an array shaped like the cross term.
    """
    g = gram.matrix(index) if isinstance(gram, GramAccumulator) else np.asarray(gram, float)
    c = cross.values if isinstance(cross, CrossAccumulator) else np.asarray(cross, float)
    if index is not None:
        if not isinstance(gram, GramAccumulator):
            g = g[np.ix_(index, index)]
        c = c[index]
    if g.shape[0] != g.shape[1] or g.shape[0] != c.shape[0]:
        raise DimensionMismatch(f"gram {g.shape} incompatible with cross {c.shape}")
    if isinstance(ridge, str):
        ridge = default_ridge(g)
    if not ridge > 0:
        raise ValueError(f"ridge must be > 0, got {ridge}")
    try:
        factor = linalg.cho_factor(g + ridge * np.eye(g.shape[0]), lower=False)
    except linalg.LinAlgError as exc:
        raise SolveFailure(f"regularised Gram matrix is not positive definite: {exc}") from exc
    w = linalg.cho_solve(factor, c)
    if not np.all(np.isfinite(w)):
        raise SolveFailure("non-finite readout weights")
    return w


# ---------------------------------------------------------------------------
# Sections and readout models


@dataclass(frozen=True)
class SubsectionLayout:
    """Groups of contiguous oscillators, as ``(start, length)`` with 0-based starts."""

    sections: tuple

    def __post_init__(self):
        secs = tuple((int(s), int(l)) for s, l in self.sections)
        if not secs:
            raise ValueError("layout needs at least one section")
        for s, l in secs:
            if s < 0 or l < 1:
                raise ValueError(f"invalid section ({s}, {l})")
        object.__setattr__(self, "sections", secs)

    @classmethod
    def contiguous(cls, n: int, count: int):
        if n % count:
            raise ValueError(f"{n} oscillators do not split into {count} equal sections")
        size = n // count
        return cls(tuple((k * size, size) for k in range(count)))

    @classmethod
    def overlapping(cls, n: int, length: int, step: int):
        return cls(tuple((s, length) for s in range(0, n - length + 1, step)))

    def __len__(self):
        return len(self.sections)

    def indices(self, k):
        s, l = self.sections[k]
        return np.arange(s, s + l)

    @property
    def extent(self):
        return max(s + l for s, l in self.sections)

    def check(self, n):
        if self.extent > n:
            raise DimensionMismatch(f"layout reaches oscillator {self.extent}, network has {n}")


@dataclass
class ReadoutModel:
    layout: SubsectionLayout
    weights: list
    ridge: object = "auto"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if len(self.weights) != len(self.layout):
            raise DimensionMismatch("one weight vector per section is required")
        for (s, l), w in zip(self.layout.sections, self.weights):
            if w.shape != (l,):
                raise DimensionMismatch(f"section of length {l} has weights of shape {w.shape}")

    def save(self, path):
        doc = {
            "format": "duffing_rc.readout",
            "version": 1,
            "ridge": self.ridge,
            "sections": [list(s) for s in self.layout.sections],
            "weights": [w.tolist() for w in self.weights],
            "meta": self.meta,
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "duffing_rc.readout" or doc.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 readout model")
        return cls(SubsectionLayout(tuple(map(tuple, doc["sections"]))),
                   doc["weights"], doc["ridge"], doc.get("meta", {}))


def train_sections(gram, cross, layout: SubsectionLayout, ridge="auto"):
    """Independent ridge fits per section; returns ``(n_sections, ...)`` weight lists.

    With K targets in ``cross`` each entry has shape ``(length, K)``.
    """
    layout.check(gram.dim if isinstance(gram, GramAccumulator) else gram.shape[0])
    return [solve_weights(gram, cross, ridge, layout.indices(k)) for k in range(len(layout))]


def readout(model: ReadoutModel, envelopes) -> np.ndarray:
    """Per-section outputs ``y_s(t_j) = sum_{i in s} w_i chi_i(t_j)``."""
    values = envelopes.values if isinstance(envelopes, EnvelopeMatrix) else np.asarray(envelopes)
    if model.layout.extent > values.shape[0]:
        raise DimensionMismatch(
            f"layout needs {model.layout.extent} envelope rows, got {values.shape[0]}")
    return np.stack([w @ values[s:s + l]
                     for (s, l), w in zip(model.layout.sections, model.weights)])

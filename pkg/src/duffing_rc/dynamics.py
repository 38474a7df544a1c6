"""Equations of motion of the driven Duffing chain and a fixed-step RK4 integrator.

Each oscillator obeys

    x_i'' = -(w0_i/Q_i) x_i' - w0_i^2 x_i - beta_i x_i^3
            + A a_i [1 + delta_i u(t)] cos(W t)
            + w1_i^2 (x_{i-1} - 2 x_i + x_{i+1})

with free ends (one-neighbour coupling at i = 1 and i = N). ``a_i`` is the
per-oscillator amplitude scale (1 unless perturbed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .network import NetworkInstance

#: Integration steps per drive period used when no step is given.
STEPS_PER_CYCLE = 64


class NumericalBlowup(RuntimeError):
    """Raised when a position leaves the allowed range or becomes non-finite."""

    def __init__(self, time, bound):
        super().__init__(f"|x| exceeded {bound:g} (or became non-finite) at t={time:.6g}")
        self.time = time
        self.bound = bound


@dataclass(frozen=True)
class DriveConfig:
    amplitude: float = 0.8
    omega_drive: float = 1.14

    def __post_init__(self):
        if not self.omega_drive > 0:
            raise ValueError(f"omega_drive must be > 0, got {self.omega_drive}")

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega_drive


def default_dt(drive: DriveConfig) -> float:
    return drive.period / STEPS_PER_CYCLE


class InputSignal:
    """Piecewise-constant scalar input ``u(t)``.

    ``edges`` holds K+1 strictly increasing breakpoints and ``values`` the K
    levels; the signal equals ``values[k]`` on ``[edges[k], edges[k+1])`` and
    0 outside ``[edges[0], edges[-1])``. Uniformly sampled data is stored the
    same way (zero-order hold).
    """

    def __init__(self, edges, values, kind="piecewise_constant"):
        edges = np.asarray(edges, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if edges.ndim != 1 or values.ndim != 1 or len(edges) != len(values) + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if len(values) and not np.all(np.diff(edges) > 0):
            raise ValueError("breakpoint times must be strictly increasing")
        if kind not in ("piecewise_constant", "sampled"):
            raise ValueError(f"unknown input kind {kind!r}")
        self.edges = edges
        self.values = values
        self.kind = kind

    @classmethod
    def piecewise_constant(cls, edges, values):
        return cls(edges, values, "piecewise_constant")

    @classmethod
    def sampled(cls, samples, interval, t0=0.0):
        samples = np.asarray(samples, dtype=np.float64)
        edges = t0 + interval * np.arange(len(samples) + 1)
        return cls(edges, samples, "sampled")

    @classmethod
    def zero(cls):
        return cls(np.array([0.0]), np.array([]))

    @property
    def extent(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if len(self.values) == 0:
            return np.zeros_like(t)
        k = np.searchsorted(self.edges, t, side="right") - 1
        inside = (k >= 0) & (k < len(self.values))
        return np.where(inside, self.values[np.clip(k, 0, len(self.values) - 1)], 0.0)


@dataclass
class State:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    @classmethod
    def rest(cls, n, time=0.0):
        return cls(np.zeros(n), np.zeros(n), float(time))

    def copy(self):
        return State(self.position.copy(), self.velocity.copy(), self.time)


@dataclass
class Trajectory:
    """Positions sampled every ``dt_record``; ``positions[i, j] = x_i(times[j])``."""

    times: np.ndarray
    positions: np.ndarray
    dt_record: float
    final_state: State | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.positions.shape[1]


def _coupling(x):
    lap = np.zeros_like(x)
    if len(x) > 1:
        lap[:-1] += x[1:] - x[:-1]
        lap[1:] += x[:-1] - x[1:]
    return lap


def rhs(state: State, u_value: float, instance: NetworkInstance, drive: DriveConfig):
    """Time derivative ``(x', x'')`` of the chain at ``state``."""
    x, v = state.position, state.velocity
    w0 = instance.omega0
    forcing = (drive.amplitude * instance.amp_scale * (1.0 + instance.delta * u_value)
               * np.cos(drive.omega_drive * state.time))
    acc = (-(w0 / instance.quality) * v - w0 ** 2 * x - instance.beta * x ** 3
           + forcing + instance.omega1 ** 2 * _coupling(x))
    return v.copy(), acc


@numba.njit(cache=True)
def _accel(x, v, u, c, damp, stiff, beta, amp, delta, w1sq, out):
    n = x.size
    for i in range(n):
        if n == 1:
            lap = 0.0
        elif i == 0:
            lap = x[1] - x[0]
        elif i == n - 1:
            lap = x[n - 2] - x[n - 1]
        else:
            lap = x[i - 1] - 2.0 * x[i] + x[i + 1]
        xi = x[i]
        out[i] = (-damp[i] * v[i] - stiff[i] * xi - beta[i] * xi * xi * xi
                  + amp[i] * (1.0 + delta[i] * u) * c + w1sq[i] * lap)


@numba.njit(cache=True)
def _rk4(x, v, t0, dt, nsteps, stride, omega, u_half,
         damp, stiff, beta, amp, delta, w1sq, bound, out):
    """Advance (x, v) in place; returns the failing step index or -1."""
    n = x.size
    a1 = np.empty(n)
    a2 = np.empty(n)
    a3 = np.empty(n)
    a4 = np.empty(n)
    xt = np.empty(n)
    vt = np.empty(n)
    v2 = np.empty(n)
    v3 = np.empty(n)
    h = 0.5 * dt
    col = 0
    for s in range(nsteps):
        t = t0 + s * dt
        c0 = np.cos(omega * t)
        ch = np.cos(omega * (t + h))
        c1 = np.cos(omega * (t + dt))
        _accel(x, v, u_half[2 * s], c0, damp, stiff, beta, amp, delta, w1sq, a1)
        for i in range(n):
            xt[i] = x[i] + h * v[i]
            vt[i] = v[i] + h * a1[i]
        _accel(xt, vt, u_half[2 * s + 1], ch, damp, stiff, beta, amp, delta, w1sq, a2)
        for i in range(n):
            v2[i] = vt[i]
            xt[i] = x[i] + h * v2[i]
            vt[i] = v[i] + h * a2[i]
        _accel(xt, vt, u_half[2 * s + 1], ch, damp, stiff, beta, amp, delta, w1sq, a3)
        for i in range(n):
            v3[i] = vt[i]
            xt[i] = x[i] + dt * v3[i]
            vt[i] = v[i] + dt * a3[i]
        _accel(xt, vt, u_half[2 * s + 2], c1, damp, stiff, beta, amp, delta, w1sq, a4)
        failed = False
        for i in range(n):
            x[i] += dt / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + vt[i])
            v[i] += dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
            if not abs(x[i]) <= bound:
                failed = True
        if failed:
            return s
        if (s + 1) % stride == 0 and col < out.shape[1]:
            for i in range(n):
                out[i, col] = x[i]
            col += 1
    return -1


def n_steps(t_span, dt) -> int:
    t0, t1 = t_span
    steps = int(round((t1 - t0) / dt))
    if steps < 0 or abs(steps * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError(f"time span {t1 - t0} is not a whole number of steps of {dt}")
    return steps


def integrate(instance: NetworkInstance, drive: DriveConfig, signal: InputSignal,
              t_span, dt: float, record_stride: int = 1, initial: State | None = None,
              bound: float = 1e6) -> Trajectory:
    """Classical fixed-step RK4 from ``t_span[0]`` to ``t_span[1]``.

    Positions are recorded after every ``record_stride`` steps, so the first
    column is at ``t0 + record_stride*dt``. ``u`` is evaluated at the exact
    stage times. Raises :class:`NumericalBlowup` when ``|x_i| > bound``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    t0 = float(t_span[0])
    steps = n_steps(t_span, dt)
    n = instance.n
    state = State.rest(n, t0) if initial is None else initial.copy()
    if state.position.shape != (n,) or state.velocity.shape != (n,):
        raise ValueError("initial state does not match the network size")
    if not (np.all(np.isfinite(state.position)) and np.all(np.isfinite(state.velocity))):
        raise ValueError("initial state must be finite")
    x = np.ascontiguousarray(state.position, dtype=np.float64)
    v = np.ascontiguousarray(state.velocity, dtype=np.float64)

    u_half = signal(t0 + 0.5 * dt * np.arange(2 * steps + 1))
    w0 = instance.omega0
    m = steps // record_stride
    out = np.empty((n, m))
    failed = _rk4(x, v, t0, dt, steps, record_stride, drive.omega_drive,
                  np.ascontiguousarray(u_half),
                  np.ascontiguousarray(w0 / instance.quality), np.ascontiguousarray(w0 * w0),
                  instance.beta, drive.amplitude * instance.amp_scale, instance.delta,
                  np.ascontiguousarray(instance.omega1 ** 2), float(bound), out)
    if failed >= 0:
        raise NumericalBlowup(t0 + (failed + 1) * dt, bound)
    times = t0 + dt * record_stride * np.arange(1, m + 1)
    return Trajectory(times, out, dt * record_stride, State(x, v, t0 + steps * dt))


# Binary matrix format: little-endian header then float64 data column by column.
#   magic b"DRCM" | version u32 | rows u64 | cols u64 | dt_record f64 | t_first f64
_HEADER = struct.Struct("<4sIQQdd")
_MAGIC = b"DRCM"


def write_matrix(path, times, values, dt_record):
    """Write an N x M sample matrix (trajectory or envelopes) to ``path``."""
    values = np.asarray(values, dtype="<f8")
    rows, cols = values.shape
    t_first = float(times[0]) if cols else 0.0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, rows, cols, float(dt_record), t_first))
        fh.write(np.asfortranarray(values).tobytes(order="F"))


def read_matrix(path):
    """Inverse of :func:`write_matrix`; returns ``(times, values, dt_record)``."""
    raw = Path(path).read_bytes()
    magic, version, rows, cols, dt_record, t_first = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 matrix file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    values = data.reshape((rows, cols), order="F").copy()
    times = t_first + dt_record * np.arange(cols)
    return times, values, dt_record


def write_trajectory(path, traj: Trajectory):
    write_matrix(path, traj.times, traj.positions, traj.dt_record)


def read_trajectory(path) -> Trajectory:
    times, values, dt_record = read_matrix(path)
    return Trajectory(times, values, dt_record)


def write_csv(path, times, values):
    """Debug export: one row per sample, ``t, x_1, ..., x_N``."""
    values = np.asarray(values)
    header = "t," + ",".join(f"x{i + 1}" for i in range(values.shape[0]))
    np.savetxt(path, np.column_stack([times, values.T]), delimiter=",",
               header=header, comments="", fmt="%.17g")

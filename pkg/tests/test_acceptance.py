"""Acceptance suite: one PASS/FAIL line per criterion.

Every test runs the full-size configuration. The lines are collected by
``conftest.py`` and repeated in the terminal summary.
"""

import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from duffing_rc.cli import main
from duffing_rc.dynamics import DriveConfig, InputSignal, State, default_dt, integrate
from duffing_rc.experiments import ParityExperiment, RobustnessSpec, run_robustness, \
    run_training_replicas
from duffing_rc.network import NetworkConfig, NetworkInstance, build_network
from duffing_rc.parity import ParityTaskConfig, mutual_information, parity_benchmark
from duffing_rc.readout import accumulate_statistics, design_lowpass, solve_weights
from duffing_rc.speech import SpeechPipelineConfig, load_manifest, run_speech_benchmark

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
SPEECH_ENV = "DUFFING_RC_SPEECH_MANIFEST"

PARITY_FLOORS = {"P3": 0.95, "P4": 0.80, "P5": 0.55}
MC_FLOOR = 2.5
REPLICA_COUNT = 25
REPLICA_P10_FLOOR = 0.70
Q_DROP_LIMIT = 0.05
SPEECH_MIN_SPEAKERS = 5
SPEECH_ACCURACY_FLOOR = 0.5


@pytest.fixture(scope="module")
def benchmark():
    task = ParityTaskConfig(train_periods=359, eval_periods=500)
    return parity_benchmark(build_network(NetworkConfig()), DriveConfig(), task,
                            orders=(3, 4, 5), delays=range(5))


def test_1_parity_reproduction(benchmark, criterion):
    parts = []
    ok = True
    for label, floor in PARITY_FLOORS.items():
        r = benchmark[label]
        ok &= r.success_prob >= floor
        parts.append(f"{label}={r.success_prob:.3f} (>= {floor}, n={r.trials})")
    assert criterion(1, "parity reproduction", ok, ", ".join(parts))


def test_2_memory_capacity(benchmark, criterion):
    probs = [benchmark["P3_delay0"].success_prob] + \
        [benchmark["P3"].success_prob] + \
        [benchmark[f"P3_delay{d}"].success_prob for d in (2, 3, 4)]
    mi = [mutual_information(p) for p in probs]
    mc = benchmark["memory_capacity"]
    monotone = all(b <= a + 1e-12 for a, b in zip(mi, mi[1:]))
    ok = mc >= MC_FLOOR and monotone
    detail = (f"MC={mc:.3f} bits (>= {MC_FLOOR}), MI by delay="
              f"[{', '.join(f'{m:.3f}' for m in mi)}], nonincreasing={monotone}")
    assert criterion(2, "memory capacity", ok, detail)


def test_3_training_replicas(criterion):
    stats, _ = run_training_replicas(REPLICA_COUNT, ParityExperiment(), master_seed=0)
    p4 = stats["P4"]
    ok = p4.p10 >= REPLICA_P10_FLOOR
    detail = (f"{REPLICA_COUNT} replicas, P4 10th percentile={p4.p10:.3f} "
              f"(>= {REPLICA_P10_FLOOR}), mean={p4.mean:.3f}, std={p4.std:.3f}")
    assert criterion(3, "training-replica robustness", ok, detail)


def test_4_post_training_robustness(criterion):
    q = run_robustness(RobustnessSpec("Q", (0.0, 0.1), "post_training", 8))["P3"]
    drop = q.mean[0] - q.mean[1]
    q_ok = drop < Q_DROP_LIMIT
    sigmas = (1e-3, 1e-2, 1e-1)
    w = run_robustness(RobustnessSpec("omega0", sigmas, "post_training", 8))
    steps = []
    w_ok = True
    for label in ("P3", "P4", "P5"):
        c = w[label]
        # each mean may not rise above the previous interval, and the ends must decrease
        within = all(c.mean[k + 1] <= c.ci_high[k] for k in range(len(sigmas) - 1))
        falls = c.mean[-1] < c.mean[0]
        w_ok &= within and falls
        steps.append(f"{label}=[{', '.join(f'{m:.3f}' for m in c.mean)}]")
    detail = (f"Q: P3 {q.mean[0]:.3f} -> {q.mean[1]:.3f}, drop={drop:.3f} "
              f"(< {Q_DROP_LIMIT}); omega0 means at sigma={list(sigmas)}: {', '.join(steps)}")
    assert criterion(4, "post-training robustness", q_ok and w_ok, detail)


def test_5_speech_pipeline(criterion):
    manifest = os.environ.get(SPEECH_ENV)
    if not manifest or not Path(manifest).exists():
        detail = (f"no spoken-digit corpus available; set {SPEECH_ENV} to a "
                  "path,label,speaker CSV manifest to run this criterion")
        assert criterion(5, "speech pipeline", False, detail)
    utterances = load_manifest(manifest)
    speakers = len({u.speaker for u in utterances})
    config = SpeechPipelineConfig()
    config = replace(config, train_count=min(config.train_count, int(0.8 * len(utterances))))
    report = run_speech_benchmark(utterances, NetworkConfig(), config)
    conf = report.confusion
    cols = conf.matrix[:, ~np.isnan(conf.matrix).any(axis=0)].sum(axis=0)
    col_err = float(np.max(np.abs(cols - 1.0)))
    ok = (speakers >= SPEECH_MIN_SPEAKERS and conf.accuracy >= SPEECH_ACCURACY_FLOOR
          and col_err <= 1e-12)
    detail = (f"{len(utterances)} utterances, {speakers} speakers "
              f"(>= {SPEECH_MIN_SPEAKERS}), accuracy={conf.accuracy:.3f} "
              f"(>= {SPEECH_ACCURACY_FLOOR}), max |column sum - 1|={col_err:.1e}")
    assert criterion(5, "speech pipeline", ok, detail)


# --- criterion 6: numerical core -------------------------------------------

def _single(quality, omega0=1.3):
    return NetworkInstance.uniform(1, beta=0.0, omega0=omega0, quality=quality, omega1=0.0)


def _free_decay(t, omega0, quality):
    g = omega0 / (2 * quality)
    wd = np.sqrt(omega0 ** 2 - g ** 2)
    return np.exp(-g * t) * (np.cos(wd * t) + g / wd * np.sin(wd * t))


def test_6a_rk4_order(criterion):
    errors = []
    for steps in (200, 400, 800):
        traj = integrate(_single(5.0), DriveConfig(amplitude=0.0), InputSignal.zero(),
                         (0.0, 20.0), 20.0 / steps, initial=State(np.ones(1), np.zeros(1)))
        errors.append(abs(traj.final_state.position[0] - _free_decay(20.0, 1.3, 5.0)))
    ratios = [float(a / b) for a, b in zip(errors, errors[1:])]
    ok = all(abs(r / 16.0 - 1.0) <= 0.2 for r in ratios)
    detail = f"error ratios per halving={[round(r, 2) for r in ratios]} (16 +- 20%)"
    assert criterion("6a", "RK4 fourth-order convergence", ok, detail)


def test_6b_steady_state_amplitude(criterion):
    w0, q, a, om = 1.3, 60.0, 0.8, 1.14
    drive = DriveConfig(amplitude=a, omega_drive=om)
    dt = default_dt(drive)
    settle = 64 * int(np.ceil(40 * 2 * q / w0 / drive.period))
    traj = integrate(_single(q, w0), drive, InputSignal.zero(), (0.0, (settle + 64) * dt), dt)
    measured = np.abs(traj.positions[0, -64:]).max()
    analytic = a / np.hypot(w0 ** 2 - om ** 2, w0 * om / q)
    rel = abs(measured / analytic - 1.0)
    assert criterion("6b", "driven linear steady state", rel <= 0.01,
                     f"relative error={rel:.2e} (<= 1e-2)")


def test_6c_ridge_oracle(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in (1, 5, 40, 400):
        xi = rng.normal(size=(n, 3 * n + 10))
        y = rng.normal(size=xi.shape[1])
        ridge = 1e-3 * n
        g, c = accumulate_statistics(xi, y)
        w = solve_weights(g, c, ridge)[:, 0]
        oracle = np.linalg.solve(xi @ xi.T + ridge * np.eye(n), xi @ y)
        worst = max(worst, np.linalg.norm(w - oracle) / np.linalg.norm(oracle))
    assert criterion("6c", "ridge solve vs normal equations", worst <= 1e-8,
                     f"max relative error={worst:.1e} (<= 1e-8)")


def test_6d_streaming_gram(criterion):
    rng = np.random.default_rng(1)
    xi = rng.normal(size=(400, 3000))
    g, _ = accumulate_statistics(xi, np.zeros(3000), chunk=137)
    dense = xi @ xi.T
    rel = np.max(np.abs(g.matrix() - dense)) / np.max(np.abs(dense))
    assert criterion("6d", "streaming Gram vs dense", rel <= 1e-12,
                     f"relative error={rel:.1e} (<= 1e-12)")


def test_6e_butterworth_gains(criterion):
    worst = 0.0
    for cutoff in (0.001, 0.01, 0.1, 0.4):
        filt = design_lowpass(7, cutoff)
        worst = max(worst, abs(abs(filt.response(0.0)) - 1.0),
                    abs(abs(filt.response(cutoff)) - 1 / np.sqrt(2)))
    assert criterion("6e", "Butterworth DC and cutoff gain", worst <= 1e-6,
                     f"max gain error={worst:.1e} (<= 1e-6)")


def test_6f_echo_state(criterion):
    inst = build_network(NetworkConfig())
    drive = DriveConfig()
    period = 65.0
    washout = 50
    dt = period / round(period / default_dt(drive))
    bits = np.random.default_rng(1).choice([-1.0, 1.0], washout)
    sig = InputSignal.piecewise_constant(period * np.arange(washout + 1), bits)
    rng = np.random.default_rng(2)
    span = (0.0, washout * period)
    a = integrate(inst, drive, sig, span, dt, record_stride=1000)
    b = integrate(inst, drive, sig, span, dt, record_stride=1000,
                  initial=State(rng.normal(size=400), rng.normal(size=400)))
    diff = np.max(np.abs(a.final_state.position - b.final_state.position))
    assert criterion("6f", "echo-state probe", diff < 1e-6,
                     f"max |dx| after {washout}T washout={diff:.1e} (< 1e-6)")


def test_7_determinism(tmp_path, criterion, capsys):
    out = tmp_path / "run"
    assert main(["run", str(ROOT / "configs" / "parity.yaml"), "--output", str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["run", str(out / "resolved_config.yaml")]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    capsys.readouterr()
    # manifest.json records wall-clock timings and is excluded
    compared = sorted(set(first) - {"manifest.json"})
    differing = [n for n in compared if first[n] != second.get(n)]
    ok = not differing and set(first) == set(second)
    detail = (f"{len(compared)} result files compared bit-for-bit, "
              f"differing={differing or 'none'}")
    assert criterion(7, "determinism from resolved config", ok, detail)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duffing_rc.dynamics import (DriveConfig, InputSignal, NumericalBlowup, State,
                                 Trajectory, default_dt, integrate, n_steps, read_matrix,
                                 read_trajectory, rhs, write_csv, write_matrix,
                                 write_trajectory)
from duffing_rc.network import NetworkConfig, NetworkInstance, build_network

ZERO = InputSignal.zero()


def single(quality=60.0, omega0=1.3, beta=0.0):
    return NetworkInstance.uniform(1, beta=beta, omega0=omega0, quality=quality, omega1=0.0)


def free_decay(t, omega0, quality):
    """x(t) for x(0)=1, v(0)=0 of the damped linear oscillator."""
    g = omega0 / (2 * quality)
    wd = np.sqrt(omega0 ** 2 - g ** 2)
    return np.exp(-g * t) * (np.cos(wd * t) + g / wd * np.sin(wd * t))


def test_rk4_fourth_order_convergence():
    inst = single(quality=5.0)
    drive = DriveConfig(amplitude=0.0)
    t_end = 20.0
    errors = []
    for steps in (200, 400, 800):
        dt = t_end / steps
        traj = integrate(inst, drive, ZERO, (0.0, t_end), dt,
                         initial=State(np.ones(1), np.zeros(1)))
        errors.append(abs(traj.final_state.position[0] - free_decay(t_end, 1.3, 5.0)))
    for coarse, fine in zip(errors, errors[1:]):
        assert coarse / fine == pytest.approx(16.0, rel=0.2)


def test_driven_linear_steady_state_amplitude():
    w0, q, a, om = 1.3, 60.0, 0.8, 1.14
    inst = single(quality=q, omega0=w0)
    drive = DriveConfig(amplitude=a, omega_drive=om)
    dt = default_dt(drive)
    # 40 ring-down times, then one drive period of samples
    settle = 64 * int(np.ceil(40 * 2 * q / w0 / drive.period))
    traj = integrate(inst, drive, ZERO, (0.0, (settle + 64) * dt), dt)
    measured = np.abs(traj.positions[0, -64:]).max()
    analytic = a / np.hypot(w0 ** 2 - om ** 2, w0 * om / q)
    assert measured == pytest.approx(analytic, rel=0.01)


def test_free_decay_envelope():
    inst = single()
    dt = 0.01
    traj = integrate(inst, DriveConfig(amplitude=0.0), ZERO, (0.0, 200.0), dt,
                     initial=State(np.ones(1), np.zeros(1)))
    expected = free_decay(traj.times, 1.3, 60.0)
    np.testing.assert_allclose(traj.positions[0], expected, rtol=0, atol=1e-7)
    # peaks follow exp(-w0 t / 2Q)
    late = traj.times > 150
    peak = np.abs(traj.positions[0, late]).max()
    assert peak <= np.exp(-1.3 * 150 / 120) * 1.0001


def test_linear_response_scales_with_amplitude():
    inst = NetworkInstance.uniform(8, beta=0.0)
    sig = InputSignal.piecewise_constant([0.0, 30.0, 60.0], [1.0, -1.0])
    dt = default_dt(DriveConfig())
    span = (0.0, 600 * dt)
    one = integrate(inst, DriveConfig(amplitude=0.5), sig, span, dt).positions
    two = integrate(inst, DriveConfig(amplitude=1.0), sig, span, dt).positions
    np.testing.assert_allclose(two, 2 * one, rtol=1e-11, atol=1e-14)


def test_mirror_symmetry():
    inst = build_network(NetworkConfig(n_oscillators=12, seed=5))
    sig = InputSignal.piecewise_constant([0.0, 20.0, 40.0], [1.0, -1.0])
    rng = np.random.default_rng(0)
    x0, v0 = rng.normal(size=12), rng.normal(size=12)
    dt = 0.05
    a = integrate(inst, DriveConfig(), sig, (0.0, 50.0), dt, initial=State(x0, v0))
    b = integrate(inst.mirrored(), DriveConfig(), sig, (0.0, 50.0), dt,
                  initial=State(x0[::-1].copy(), v0[::-1].copy()))
    np.testing.assert_allclose(b.positions, a.positions[::-1], rtol=1e-10, atol=1e-12)


def test_echo_state_property():
    inst = build_network(NetworkConfig())
    drive = DriveConfig()
    period = 65.0
    dt = period / round(period / default_dt(drive))
    bits = np.random.default_rng(1).choice([-1.0, 1.0], 50)
    sig = InputSignal.piecewise_constant(period * np.arange(51), bits)
    rng = np.random.default_rng(2)
    span = (0.0, 50 * period)
    a = integrate(inst, drive, sig, span, dt, record_stride=1000)
    b = integrate(inst, drive, sig, span, dt, record_stride=1000,
                  initial=State(rng.normal(size=400), rng.normal(size=400)))
    assert np.max(np.abs(a.final_state.position - b.final_state.position)) < 1e-6


def test_single_step_matches_numpy_rhs():
    inst = build_network(NetworkConfig(n_oscillators=7, seed=1))
    drive = DriveConfig()
    rng = np.random.default_rng(3)
    s = State(rng.normal(size=7), rng.normal(size=7), 0.3)
    dt = 0.02
    u = 0.7
    sig = InputSignal.piecewise_constant([0.0, 1.0], [u])

    def f(state):
        return rhs(state, u, inst, drive)

    k1 = f(s)
    k2 = f(State(s.position + dt / 2 * k1[0], s.velocity + dt / 2 * k1[1], s.time + dt / 2))
    k3 = f(State(s.position + dt / 2 * k2[0], s.velocity + dt / 2 * k2[1], s.time + dt / 2))
    k4 = f(State(s.position + dt * k3[0], s.velocity + dt * k3[1], s.time + dt))
    x = s.position + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v = s.velocity + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    traj = integrate(inst, drive, sig, (0.3, 0.3 + dt), dt, initial=s)
    np.testing.assert_allclose(traj.final_state.position, x, rtol=1e-12)
    np.testing.assert_allclose(traj.final_state.velocity, v, rtol=1e-12)


def test_free_ends_coupling():
    inst = NetworkInstance.uniform(3, omega0=1.0, quality=1e9, omega1=1.0)
    s = State(np.array([1.0, 0.0, 0.0]), np.zeros(3))
    _, acc = rhs(s, 0.0, inst, DriveConfig(amplitude=0.0))
    np.testing.assert_allclose(acc, [-1.0 - 1.0, 1.0, 0.0])


def test_record_stride_and_times():
    inst = NetworkInstance.uniform(2)
    dt = 0.1
    full = integrate(inst, DriveConfig(), ZERO, (0.0, 3.0), dt)
    thin = integrate(inst, DriveConfig(), ZERO, (0.0, 3.0), dt, record_stride=3)
    assert len(full) == 30 and len(thin) == 10
    np.testing.assert_allclose(thin.times, full.times[2::3])
    np.testing.assert_array_equal(thin.positions, full.positions[:, 2::3])


def test_chunked_integration_matches_single_run():
    inst = build_network(NetworkConfig(n_oscillators=10, seed=2))
    sig = InputSignal.piecewise_constant([0.0, 5.0, 10.0], [1.0, -1.0])
    dt = 0.05
    whole = integrate(inst, DriveConfig(), sig, (0.0, 10.0), dt)
    first = integrate(inst, DriveConfig(), sig, (0.0, 5.0), dt)
    second = integrate(inst, DriveConfig(), sig, (5.0, 10.0), dt, initial=first.final_state)
    np.testing.assert_allclose(np.hstack([first.positions, second.positions]),
                               whole.positions, rtol=1e-12, atol=1e-13)


def test_blowup_is_reported():
    inst = NetworkInstance.uniform(3)
    with pytest.raises(NumericalBlowup) as info:
        integrate(inst, DriveConfig(amplitude=5.0), ZERO, (0.0, 20.0), 0.05, bound=1e-3)
    assert info.value.time > 0


def test_rejects_non_integral_span():
    with pytest.raises(ValueError):
        n_steps((0.0, 1.0), 0.3)
    with pytest.raises(ValueError):
        integrate(NetworkInstance.uniform(2), DriveConfig(), ZERO, (0.0, 1.0), -0.1)


def test_input_signal_semantics():
    sig = InputSignal.piecewise_constant([0.0, 1.0, 3.0], [2.0, -1.0])
    np.testing.assert_array_equal(sig([-0.5, 0.0, 0.999, 1.0, 2.5, 3.0, 10.0]),
                                  [0.0, 2.0, 2.0, -1.0, -1.0, 0.0, 0.0])
    samp = InputSignal.sampled([1.0, 2.0, 3.0], 0.5, t0=1.0)
    assert samp.extent == (1.0, 2.5)
    assert samp(1.6) == 2.0
    with pytest.raises(ValueError):
        InputSignal([0.0, 0.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0.01, 3.0),
       st.lists(st.floats(-2, 70), min_size=1, max_size=30))
def test_input_signal_matches_loop(values, width, times):
    sig = InputSignal.sampled(values, width)
    for t, got in zip(times, sig(np.array(times))):
        expected = 0.0
        for k in range(len(values)):
            if sig.edges[k] <= t < sig.edges[k + 1]:
                expected = values[k]
        assert got == expected


def test_matrix_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(5, 7))
    times = 2.0 + 0.25 * np.arange(7)
    write_matrix(tmp_path / "m.bin", times, values, 0.25)
    t, v, d = read_matrix(tmp_path / "m.bin")
    np.testing.assert_array_equal(v, values)
    np.testing.assert_allclose(t, times)
    assert d == 0.25
    traj = Trajectory(times, values, 0.25)
    write_trajectory(tmp_path / "t.bin", traj)
    back = read_trajectory(tmp_path / "t.bin")
    np.testing.assert_array_equal(back.positions, values)
    (tmp_path / "bad.bin").write_bytes(b"nope" + bytes(40))
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "bad.bin")


def test_csv_export(tmp_path):
    write_csv(tmp_path / "x.csv", [0.0, 1.0], np.array([[1.0, 2.0], [3.0, 4.0]]))
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "x.csv", delimiter=",", skiprows=1),
                                  [[0, 1, 3], [1, 2, 4]])

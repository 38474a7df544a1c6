import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duffing_rc.dynamics import DriveConfig
from duffing_rc.network import (CANONICAL_SEED, NetworkConfig, NetworkInstance,
                                PerturbationSpec, build_network, perturb_network)


def test_reference_network_is_reproducible():
    a = build_network(NetworkConfig())
    b = build_network(NetworkConfig(seed=CANONICAL_SEED))
    assert a == b
    assert a.n == 400
    assert set(np.unique(a.beta)) <= {1.0, 0.005}
    assert set(np.unique(a.delta)) <= {0.0, 0.7}


def test_allocation_fractions_are_close_to_probabilities():
    inst = build_network(NetworkConfig(n_oscillators=20000, seed=3))
    # binomial sd is ~0.003 at these sizes
    assert abs(np.mean(inst.beta == 1.0) - 0.25) < 0.015
    assert abs(np.mean(inst.delta == 0.7) - 0.5) < 0.015


def test_beta_and_delta_masks_use_separate_streams():
    a = build_network(NetworkConfig(p_strong=0.25, seed=9))
    b = build_network(NetworkConfig(p_strong=0.6, seed=9))
    np.testing.assert_array_equal(a.delta, b.delta)


def test_different_seeds_differ():
    assert build_network(NetworkConfig(seed=1)) != build_network(NetworkConfig(seed=2))


def test_arrays_are_read_only():
    inst = build_network(NetworkConfig(n_oscillators=10))
    with pytest.raises(ValueError):
        inst.beta[0] = 3.0


@pytest.mark.parametrize("kwargs", [dict(quality=-1.0), dict(n_oscillators=0),
                                    dict(p_strong=1.5), dict(omega0=0.0)])
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ValueError):
        NetworkConfig(**kwargs)


def test_mirrored_reverses_every_vector():
    inst = build_network(NetworkConfig(n_oscillators=15, seed=4))
    m = inst.mirrored()
    for name, v in inst.vectors().items():
        np.testing.assert_array_equal(m.vectors()[name], v[::-1])
    assert m.mirrored() == inst


def test_zero_sigma_is_identity():
    inst = build_network(NetworkConfig(n_oscillators=30))
    drive = DriveConfig()
    out, d = perturb_network(inst, drive, PerturbationSpec("Q", 0.0, seed=5))
    assert out is inst and d is drive


@pytest.mark.parametrize("param,field", [("A", "amp_scale"), ("Q", "quality"),
                                         ("beta", "beta"), ("omega0", "omega0"),
                                         ("omega1", "omega1"), ("delta", "delta")])
def test_perturbation_touches_only_its_field(param, field):
    inst = build_network(NetworkConfig(n_oscillators=50))
    out, _ = perturb_network(inst, DriveConfig(), PerturbationSpec(param, 0.1, seed=1))
    for name, v in inst.vectors().items():
        if name == field:
            z = np.random.default_rng(1).standard_normal(50)
            np.testing.assert_allclose(out.vectors()[name], v * (1 + 0.1 * z))
        else:
            np.testing.assert_array_equal(out.vectors()[name], v)


@settings(max_examples=30, deadline=None)
@given(sigma=st.floats(1e-4, 0.5), seed=st.integers(0, 2**31))
def test_perturbation_statistics(sigma, seed):
    inst = NetworkInstance.uniform(4000, quality=60.0)
    out, _ = perturb_network(inst, DriveConfig(), PerturbationSpec("Q", sigma, seed=seed))
    rel = out.quality / 60.0 - 1.0
    # sample sd of 4000 normals is within ~10% of sigma with overwhelming probability
    assert abs(rel.std() / sigma - 1.0) < 0.1
    assert abs(rel.mean()) < 5 * sigma / np.sqrt(4000)


def test_perturbation_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec("gamma", 0.1)
    with pytest.raises(ValueError):
        PerturbationSpec("Q", -0.1)
    with pytest.raises(ValueError):
        PerturbationSpec("Q", 0.1, placement="during")

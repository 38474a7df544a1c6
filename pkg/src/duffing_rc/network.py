"""Random network instances and static parameter disorder.

A network is a 1-D chain of Duffing oscillators. Every oscillator shares the
nominal linear parameters; the cubic stiffness and the input gain are drawn
at random, once, from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

#: Seed of the reference network used by every shipped experiment.
CANONICAL_SEED = 42

PERTURBABLE = ("A", "Q", "beta", "omega0", "omega1", "delta")

_FIELD_OF = {
    "A": "amp_scale",
    "Q": "quality",
    "beta": "beta",
    "omega0": "omega0",
    "omega1": "omega1",
    "delta": "delta",
}


@dataclass(frozen=True)
class NetworkConfig:
    n_oscillators: int = 400
    omega0: float = 1.3
    quality: float = 60.0
    beta_strong: float = 1.0
    beta_weak: float = 0.005
    p_strong: float = 0.25
    omega1: float = 1.5
    delta_star: float = 0.7
    p_input: float = 0.5
    seed: int = CANONICAL_SEED

    def __post_init__(self):
        if int(self.n_oscillators) < 1:
            raise ValueError(f"n_oscillators must be >= 1, got {self.n_oscillators}")
        if not self.quality > 0:
            raise ValueError(f"quality must be > 0, got {self.quality}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")
        for name in ("p_strong", "p_input"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Per-oscillator parameter vectors of one network draw.

    All arrays have length ``n`` and are marked read-only.
    """

    beta: np.ndarray
    delta: np.ndarray
    omega0: np.ndarray
    quality: np.ndarray
    omega1: np.ndarray
    amp_scale: np.ndarray
    config: NetworkConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.beta)
        for name in ("beta", "delta", "omega0", "quality", "omega1", "amp_scale"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.beta)

    def vectors(self) -> dict[str, np.ndarray]:
        return {
            name: getattr(self, name)
            for name in ("beta", "delta", "omega0", "quality", "omega1", "amp_scale")
        }

    def __eq__(self, other):
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        a, b = self.vectors(), other.vectors()
        return all(np.array_equal(a[k], b[k]) for k in a)

    def mirrored(self) -> "NetworkInstance":
        """Instance with the chain relabelled i -> n + 1 - i."""
        return replace(self, **{k: v[::-1] for k, v in self.vectors().items()})

    @classmethod
    def uniform(cls, n: int, *, beta=0.0, delta=0.0, omega0=1.3, quality=60.0,
                omega1=1.5) -> "NetworkInstance":
        """Deterministic instance with identical oscillators (handy for tests)."""
        def full(v):
            return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy()
        return cls(beta=full(beta), delta=full(delta), omega0=full(omega0),
                   quality=full(quality), omega1=full(omega1),
                   amp_scale=np.ones(n))


@dataclass(frozen=True)
class PerturbationSpec:
    parameter: Literal["A", "Q", "beta", "omega0", "omega1", "delta"]
    sigma: float
    seed: int = 0
    placement: Literal["pre_training", "post_training"] = "pre_training"

    def __post_init__(self):
        if self.parameter not in PERTURBABLE:
            raise ValueError(f"parameter must be one of {PERTURBABLE}, got {self.parameter!r}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.placement not in ("pre_training", "post_training"):
            raise ValueError(f"unknown placement {self.placement!r}")


def build_network(config: NetworkConfig) -> NetworkInstance:
    """Draw the random strong/weak nonlinearity and input-gain allocation.

    Each oscillator independently receives ``beta_strong`` with probability
    ``p_strong`` (otherwise ``beta_weak``) and an input gain ``delta_star``
    with probability ``p_input`` (otherwise 0). The two draws use separate
    streams, so changing one probability does not reshuffle the other mask.
    """
    n = int(config.n_oscillators)
    beta_rng, delta_rng = (np.random.default_rng(s) for s in
                           np.random.SeedSequence(config.seed).spawn(2))
    strong = beta_rng.random(n) < config.p_strong
    driven = delta_rng.random(n) < config.p_input
    return NetworkInstance(
        beta=np.where(strong, config.beta_strong, config.beta_weak),
        delta=np.where(driven, config.delta_star, 0.0),
        omega0=np.full(n, float(config.omega0)),
        quality=np.full(n, float(config.quality)),
        omega1=np.full(n, float(config.omega1)),
        amp_scale=np.ones(n),
        config=config,
    )


def perturb_network(instance: NetworkInstance, drive, spec: PerturbationSpec):
    """Multiply one per-oscillator parameter by independent ``1 + sigma*z``.

    Returns ``(instance, drive)``. The drive amplitude is perturbed per
    oscillator through ``amp_scale``, so ``drive`` itself is returned
    unchanged. Negative values produced by large ``sigma`` are kept.
    """
    if spec.sigma == 0:
        return instance, drive
    rng = np.random.default_rng(spec.seed)
    name = _FIELD_OF[spec.parameter]
    z = rng.standard_normal(instance.n)
    scaled = getattr(instance, name) * (1.0 + spec.sigma * z)
    return replace(instance, **{name: scaled}), drive

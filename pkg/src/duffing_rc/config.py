"""YAML experiment configuration: defaults, dotted overrides and validation."""

from __future__ import annotations

import copy
import re
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .dynamics import DriveConfig
from .experiments import ParityExperiment, RobustnessSpec, SweepSpec, derive_seed
from .network import PERTURBABLE, NetworkConfig
from .parity import ParityTaskConfig
from .readout import SimulationConfig, check_aliasing
from .speech import SpeechPipelineConfig

class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789"))


def _load_yaml(text):
    return yaml.load(text, Loader=_Loader)


TASKS = ("parity", "memory_capacity", "speech", "sweep", "robustness", "replicas")


class ConfigError(ValueError):
    """Carries every violation found, one ``"field: problem"`` string each."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _defaults_of(cls, skip=()):
    return {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "task": "parity",
    "seed": 0,
    "output_dir": "results",
    "workers": 1,
    "network": _defaults_of(NetworkConfig),
    "drive": _defaults_of(DriveConfig),
    "integrator": {"dt": None, "record_stride": 2, "washout_periods": 20, "bound": 1e6,
                   "chunk_records": 4000},
    "readout": {"cutoff": None, "cutoff_cycles": 0.6, "decimation": 10, "filter_order": 7,
                "ridge": "auto", "sections": 10},
    "parity": {"period": 65.0, "train_periods": 359, "eval_periods": 500,
               "orders": [3, 4, 5], "delays": [0, 1, 2, 3, 4], "input_seed": None},
    "speech": {**_defaults_of(SpeechPipelineConfig,
                              skip=("holdout_speakers", "seed", "readout_ridge")),
               "holdout_speakers": [], "manifest": None,
               "synthetic": {"enabled": False, "n_per_digit": 40, "speakers": 5,
                             "sample_rate": 8000}},
    "sweep": {"a_values": [round(float(a), 6) for a in np.linspace(0.4, 1.2, 8)],
              "t_values": [round(float(t), 6) for t in np.linspace(30.0, 130.0, 8)],
              "replicas": 1},
    "robustness": {"parameter": "Q", "sigma_values": [0.0, 1e-3, 1e-2, 1e-1],
                   "placement": "post_training", "replicas": 8},
    "replicas": {"count": 25, "seeds": None},
}


def _plain(value):
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def _merge(base, update, path, errors):
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            errors.append(f"{where}: unknown setting")
        elif isinstance(base[key], dict) and base[key] and not isinstance(value, dict):
            errors.append(f"{where}: expected a mapping")
        elif isinstance(base[key], dict) and base[key]:
            _merge(base[key], value, where + ".", errors)
        else:
            base[key] = value


def apply_override(raw: dict, assignment: str):
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError([f"{assignment}: override must look like key=value"])
    key, text = assignment.split("=", 1)
    node = raw
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([f"{key}: {part} is not a section"])
    node[parts[-1]] = _load_yaml(text)


def load_config(path=None, overrides=()):
    """Defaults, then the file, then overrides. Returns the resolved dict.

    Raises :class:`ConfigError` listing all violations.
    """
    raw = {}
    if path is not None:
        try:
            raw = _load_yaml(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
    for item in overrides:
        apply_override(raw, item)
    cfg = copy.deepcopy(DEFAULTS)
    errors = []
    _merge(cfg, raw, "", errors)
    cfg = _plain(cfg)
    if not errors:
        errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    man = cfg["speech"]["manifest"]
    if man is not None:
        cfg["speech"]["manifest"] = str(Path(man).resolve())
    return cfg


def _try(errors, prefix, build):
    try:
        return build()
    except (TypeError, ValueError) as exc:
        errors.append(f"{prefix}: {exc}")
        return None


def validate(cfg) -> list[str]:
    """Every violation in a merged config, as ``"field: problem"`` strings."""
    errors = []
    if cfg["task"] not in TASKS:
        errors.append(f"task: must be one of {', '.join(TASKS)}, got {cfg['task']!r}")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        errors.append("workers: must be an integer >= 1")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        errors.append("seed: must be a non-negative integer")

    net = cfg["network"]
    checks = [
        ("network.n_oscillators", isinstance(net["n_oscillators"], int)
         and net["n_oscillators"] >= 1, "must be an integer >= 1"),
        ("network.quality", _num(net["quality"]) and net["quality"] > 0, "must be > 0"),
        ("network.omega0", _num(net["omega0"]) and net["omega0"] > 0, "must be > 0"),
        ("network.omega1", _num(net["omega1"]) and net["omega1"] >= 0, "must be >= 0"),
        ("network.p_strong", _num(net["p_strong"]) and 0 <= net["p_strong"] <= 1,
         "must lie in [0, 1]"),
        ("network.p_input", _num(net["p_input"]) and 0 <= net["p_input"] <= 1,
         "must lie in [0, 1]"),
        ("network.seed", isinstance(net["seed"], int) and net["seed"] >= 0,
         "must be a non-negative integer"),
        ("drive.amplitude", _num(cfg["drive"]["amplitude"]) and cfg["drive"]["amplitude"] >= 0,
         "must be >= 0"),
        ("drive.omega_drive", _num(cfg["drive"]["omega_drive"])
         and cfg["drive"]["omega_drive"] > 0, "must be > 0"),
    ]
    integ, ro = cfg["integrator"], cfg["readout"]
    checks += [
        ("integrator.dt", integ["dt"] is None or (_num(integ["dt"]) and integ["dt"] > 0),
         "must be null or > 0"),
        ("integrator.bound", _num(integ["bound"]) and integ["bound"] > 0, "must be > 0"),
        ("integrator.chunk_records", isinstance(integ["chunk_records"], int)
         and integ["chunk_records"] >= 1, "must be an integer >= 1"),
        ("integrator.record_stride", isinstance(integ["record_stride"], int)
         and integ["record_stride"] >= 1, "must be an integer >= 1"),
        ("integrator.washout_periods", isinstance(integ["washout_periods"], int)
         and integ["washout_periods"] >= 0, "must be an integer >= 0"),
        ("readout.cutoff", ro["cutoff"] is None or (_num(ro["cutoff"])
                                                    and 0 < ro["cutoff"] < 0.5),
         "must be null or lie in (0, 0.5) cycles per decimated sample"),
        ("readout.cutoff_cycles", _num(ro["cutoff_cycles"]) and ro["cutoff_cycles"] > 0,
         "must be > 0"),
        ("readout.decimation", isinstance(ro["decimation"], int) and ro["decimation"] >= 1,
         "must be an integer >= 1"),
        ("readout.filter_order", isinstance(ro["filter_order"], int)
         and ro["filter_order"] >= 1, "must be an integer >= 1"),
        ("readout.ridge", ro["ridge"] == "auto" or (_num(ro["ridge"]) and ro["ridge"] > 0),
         "must be 'auto' or > 0"),
        ("readout.sections", isinstance(ro["sections"], int) and ro["sections"] >= 1
         and isinstance(net["n_oscillators"], int)
         and net["n_oscillators"] % ro["sections"] == 0,
         "must be an integer >= 1 dividing network.n_oscillators"),
    ]
    task = cfg["task"]
    par = cfg["parity"]
    if task in ("parity", "memory_capacity", "sweep", "robustness", "replicas"):
        checks += [
            ("parity.period", _num(par["period"]) and par["period"] > 0, "must be > 0"),
            ("parity.orders", isinstance(par["orders"], list)
             and all(isinstance(n, int) and n >= 1 for n in par["orders"]),
             "must be a list of integers >= 1"),
            ("parity.delays", isinstance(par["delays"], list)
             and all(isinstance(d, int) and d >= 0 for d in par["delays"]),
             "must be a list of integers >= 0"),
        ]
        history = max(par["orders"] + [3 + d - 1 for d in par["delays"]] + [1]) \
            if isinstance(par["orders"], list) and isinstance(par["delays"], list) else 1
        if isinstance(integ["washout_periods"], int) and history > integ["washout_periods"] + 1:
            errors.append(f"integrator.washout_periods: must be >= {history - 1} so every "
                          f"target has enough input history")
    if task == "speech":
        sp = cfg["speech"]
        if sp["manifest"] is None and not sp["synthetic"]["enabled"]:
            errors.append("speech.manifest: required (or set speech.synthetic.enabled)")
        elif sp["manifest"] is not None and not Path(sp["manifest"]).is_file():
            errors.append(f"speech.manifest: file not found: {sp['manifest']}")
    if task == "sweep":
        sw = cfg["sweep"]
        checks += [
            ("sweep.a_values", _nonempty_nums(sw["a_values"]), "must be a nonempty number list"),
            ("sweep.t_values", _nonempty_nums(sw["t_values"]) and min(sw["t_values"]) > 0,
             "must be a nonempty list of positive numbers"),
            ("sweep.replicas", isinstance(sw["replicas"], int) and sw["replicas"] >= 1,
             "must be an integer >= 1"),
        ]
    if task == "robustness":
        rb = cfg["robustness"]
        checks += [
            ("robustness.parameter", rb["parameter"] in PERTURBABLE,
             f"must be one of {', '.join(PERTURBABLE)}"),
            ("robustness.placement", rb["placement"] in ("pre_training", "post_training"),
             "must be pre_training or post_training"),
            ("robustness.sigma_values", _nonempty_nums(rb["sigma_values"])
             and min(rb["sigma_values"]) >= 0 and rb["sigma_values"] == sorted(rb["sigma_values"]),
             "must be a nonempty sorted list of values >= 0"),
            ("robustness.replicas", isinstance(rb["replicas"], int) and rb["replicas"] >= 1,
             "must be an integer >= 1"),
        ]
    if task == "replicas":
        rp = cfg["replicas"]
        checks.append(("replicas.count", isinstance(rp["count"], int) and rp["count"] >= 2,
                       "must be an integer >= 2"))
        if rp["seeds"] is not None and (not isinstance(rp["seeds"], list)
                                        or len(rp["seeds"]) < (rp["count"] or 0)):
            errors.append("replicas.seeds: must be null or list at least count long")
    errors += [f"{name}: {msg}" for name, ok, msg in checks if not ok]
    if errors:
        return errors

    # structural checks passed: build the objects and test the resolved filter
    _try(errors, "network", lambda: NetworkConfig(**net))
    if task == "speech":
        sc = _try(errors, "speech", lambda: speech_config(cfg))
        sim = simulation_config(cfg)
        if sc is not None:
            _try(errors, "readout", lambda: _check_filter(sim, sc.drive, sc.stretch,
                                                         sc.cutoff_cycles))
    else:
        exp = _try(errors, "parity", lambda: parity_experiment(cfg))
        if exp is not None:
            _try(errors, "readout", lambda: _check_filter(exp.sim, exp.drive, exp.task.period))
    return errors


def _check_filter(sim, drive, timescale, cycles=None):
    filt = sim.filter_for(drive, timescale, cycles)
    check_aliasing(drive, sim.step(drive, timescale) * sim.record_stride * sim.decimation,
                   filt.cutoff)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _nonempty_nums(v):
    return isinstance(v, list) and len(v) > 0 and all(_num(x) for x in v)


# ---------------------------------------------------------------------------
# Builders


def simulation_config(cfg) -> SimulationConfig:
    integ, ro = cfg["integrator"], cfg["readout"]
    return SimulationConfig(dt=integ["dt"], record_stride=integ["record_stride"],
                            decimation=ro["decimation"], filter_order=ro["filter_order"],
                            cutoff=ro["cutoff"], cutoff_cycles=ro["cutoff_cycles"],
                            chunk_records=integ["chunk_records"], bound=integ["bound"])


def input_seed(cfg) -> int:
    s = cfg["parity"]["input_seed"]
    return int(s) if s is not None else derive_seed(cfg["seed"], "parity-input")


def parity_experiment(cfg) -> ParityExperiment:
    par = cfg["parity"]
    task = ParityTaskConfig(period=float(par["period"]), train_periods=par["train_periods"],
                            eval_periods=par["eval_periods"],
                            washout_periods=cfg["integrator"]["washout_periods"],
                            seed=input_seed(cfg))
    return ParityExperiment(NetworkConfig(**cfg["network"]), DriveConfig(**cfg["drive"]), task,
                            simulation_config(cfg), tuple(par["orders"]),
                            cfg["readout"]["sections"], cfg["readout"]["ridge"])


def speech_config(cfg) -> SpeechPipelineConfig:
    sp = {k: v for k, v in cfg["speech"].items() if k not in ("manifest", "synthetic")}
    sp["readout_ridge"] = cfg["readout"]["ridge"]
    return SpeechPipelineConfig(**sp, seed=derive_seed(cfg["seed"], "speech-split"))


def sweep_spec(cfg) -> SweepSpec:
    sw = cfg["sweep"]
    return SweepSpec(tuple(sw["a_values"]), tuple(sw["t_values"]), sw["replicas"],
                     parity_experiment(cfg), cfg["seed"])


def robustness_spec(cfg) -> RobustnessSpec:
    rb = cfg["robustness"]
    return RobustnessSpec(rb["parameter"], tuple(rb["sigma_values"]), rb["placement"],
                          rb["replicas"], parity_experiment(cfg), cfg["seed"])


def dump(cfg) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)

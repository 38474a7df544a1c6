"""Command-line front end: ``duffing-rc run|validate|version``.

Exit status is 0 on success, 1 when the configuration is invalid and 2 when
a numerical stage fails (the message names the stage).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dynamics import NumericalBlowup
from .experiments import (derive_seed, run_robustness, run_sweep, run_training_replicas,
                          spec_hash)
from .network import NetworkConfig, build_network
from .parity import (DELAY_TASKS, memory_capacity, mutual_information, score_run,
                     simulate_parity, task_label)
from .readout import SolveFailure
from .speech import load_manifest, run_speech_benchmark, synthetic_digits

log = logging.getLogger("duffing_rc")


def package_version() -> str:
    try:
        return metadata.version("duffing-rc")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class Stages:
    """Wall-clock timer that also remembers which stage is running."""

    def __init__(self):
        self.current = "setup"
        self.timings = {}

    def __call__(self, name):
        self.current = name
        return self

    def __enter__(self):
        self._t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.current] = round(time.perf_counter() - self._t0, 3)
        return False


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _result_row(label, r, delay=None):
    lo, hi = r.ci
    row = {"task": label, "trials": r.trials, "successes": r.successes,
           "success_prob": r.success_prob, "ci_low": lo, "ci_high": hi}
    if delay is not None:
        row["mutual_information"] = mutual_information(r.success_prob)
    return row


# ---------------------------------------------------------------------------
# Tasks; each returns a JSON-able summary and writes its own files.


def task_parity(cfg, out: Path, stages, workers):
    exp = cfgmod.parity_experiment(cfg)
    delays = tuple(cfg["parity"]["delays"])
    if cfg["task"] == "memory_capacity":
        exp = replace(exp, orders=())
        delays = delays or tuple(d for _, d in DELAY_TASKS)
    tasks = exp.tasks(delays)
    with stages("network"):
        instance = build_network(exp.network)
    with stages("simulate"):
        run = simulate_parity(instance, exp.drive, exp.task, exp.sim)
    with stages("train"):
        results, models = score_run(run, tasks, exp.layout(), exp.ridge)
    rows = [_result_row(task_label(t), results[t], t[1] if t in
                        {(3, d) for d in delays} else None) for t in tasks]
    _write_csv(out / "parity_results.csv", rows,
               ["task", "trials", "successes", "success_prob", "ci_low", "ci_high",
                "mutual_information"])
    for t, m in models.items():
        m.readout.save(out / f"readout_{task_label(t)}.json")
    summary = {r["task"]: r["success_prob"] for r in rows}
    if delays:
        summary["memory_capacity"] = memory_capacity([results[(3, d)].success_prob
                                                      for d in delays])
        summary["mutual_information"] = {
            str(d): mutual_information(results[(3, d)].success_prob) for d in delays}
    summary["ci"] = {r["task"]: [r["ci_low"], r["ci_high"]] for r in rows}
    return summary


def _speech_corpus(cfg):
    sp = cfg["speech"]
    if sp["manifest"] is not None:
        return load_manifest(sp["manifest"])
    syn = sp["synthetic"]
    speakers = tuple(f"s{k}" for k in range(syn["speakers"]))
    return synthetic_digits(syn["n_per_digit"], speakers, syn["sample_rate"],
                            seed=derive_seed(cfg["seed"], "synthetic-corpus"))


def task_speech(cfg, out: Path, stages, workers):
    with stages("load_corpus"):
        utterances = _speech_corpus(cfg)
    sc = cfgmod.speech_config(cfg)
    with stages("simulate_train_classify"):
        rep = run_speech_benchmark(utterances, NetworkConfig(**cfg["network"]), sc,
                                   cfgmod.simulation_config(cfg))
    conf = rep.confusion
    with open(out / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["predicted\\true"] + conf.classes)
        for c, row in zip(conf.classes, conf.matrix):
            w.writerow([c] + [repr(float(v)) for v in row])
    pred_rows = []
    for k, res in zip(rep.test_indices, rep.predictions):
        u = utterances[k]
        pred_rows.append({"index": int(k), "path": u.path or "", "speaker": u.speaker,
                          "label": u.label, "predicted": res.digit, "tie": int(res.tie),
                          "votes": json.dumps(res.votes)})
    _write_csv(out / "predictions.csv", pred_rows,
               ["index", "path", "speaker", "label", "predicted", "tie", "votes"])
    rep.model.save(out / "speech_model.json")
    return {"accuracy": conf.accuracy, "ci": list(conf.ci), "test_utterances": len(pred_rows),
            "train_utterances": len(rep.train_indices), "ties": rep.ties,
            "per_class": dict(zip(map(str, conf.classes), conf.per_class.tolist())),
            "speakers": sorted({u.speaker for u in utterances})}


def task_sweep(cfg, out, stages, workers):
    spec = cfgmod.sweep_spec(cfg)
    with stages("sweep"):
        grid = run_sweep(spec, out, workers)
    return {"spec_hash": spec_hash(spec), **grid.to_json()}


def task_robustness(cfg, out, stages, workers):
    spec = cfgmod.robustness_spec(cfg)
    with stages("robustness"):
        curves = run_robustness(spec, out, workers)
    return {"spec_hash": spec_hash(spec), "parameter": spec.parameter,
            "placement": spec.placement, "sigma": list(spec.sigma_values),
            "mean": {k: c.mean.tolist() for k, c in curves.items()},
            "ci_low": {k: c.ci_low.tolist() for k, c in curves.items()},
            "ci_high": {k: c.ci_high.tolist() for k, c in curves.items()}}


def task_replicas(cfg, out, stages, workers):
    exp = cfgmod.parity_experiment(cfg)
    rp = cfg["replicas"]
    with stages("replicas"):
        stats, per = run_training_replicas(rp["count"], exp, rp["seeds"], cfg["seed"],
                                           workers=workers)
    labels = list(stats)
    _write_csv(out / "replicas.csv", [{"replica": i, **p} for i, p in enumerate(per)],
               ["replica"] + labels)
    return {lab: {"mean": s.mean, "std": s.std, "p10": s.p10} for lab, s in stats.items()}


TASK_RUNNERS = {"parity": task_parity, "memory_capacity": task_parity,
                "speech": task_speech, "sweep": task_sweep,
                "robustness": task_robustness, "replicas": task_replicas}


# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.output:
        overrides.append(f"output_dir={args.output}")
    if args.workers:
        overrides.append(f"workers={args.workers}")
    try:
        cfg = cfgmod.load_config(args.config, overrides)
    except cfgmod.ConfigError as exc:
        for v in exc.violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return 1
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfgmod.dump(cfg))
    stages = Stages()
    try:
        summary = TASK_RUNNERS[cfg["task"]](cfg, out, stages, cfg["workers"])
    except (NumericalBlowup, SolveFailure) as exc:
        print(f"numerical failure in stage '{stages.current}': {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    _write_json(out / "summary.json", {"task": cfg["task"], **_jsonable(summary)})
    _write_json(out / "manifest.json", {
        "task": cfg["task"],
        "package_version": package_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "seeds": {"master": cfg["seed"], "network": cfg["network"]["seed"],
                  "parity_input": cfgmod.input_seed(cfg)},
        "timings_s": stages.timings,
        "command": sys.argv,
    })
    print(json.dumps(_jsonable(summary), indent=1, sort_keys=True))
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def cmd_validate(args) -> int:
    try:
        cfg = cfgmod.load_config(args.config, args.set or [])
    except cfgmod.ConfigError as exc:
        for v in exc.violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return 1
    print(cfgmod.dump(cfg), end="")
    return 0


def cmd_version(args) -> int:
    print(package_version())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duffing-rc",
                                     description="Duffing-chain reservoir computing runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute the task in a config file")
    run.add_argument("config", nargs="?", help="YAML config (defaults if omitted)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="dotted override, e.g. network.seed=7 (repeatable)")
    run.add_argument("--workers", type=int, help="worker processes for sweeps and replicas")
    run.add_argument("--output", help="output directory (overrides output_dir)")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config and print it fully resolved")
    val.add_argument("config", nargs="?")
    val.add_argument("--set", action="append", metavar="KEY=VALUE")
    val.set_defaults(func=cmd_validate)
    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Spoken-digit classification with per-digit readouts and one-vs-one Fisher votes.

The audio of every utterance is normalised, rectified and played into the
network one after the other, separated by silence. For each digit ``i`` and
each overlapping section ``j`` a readout is trained to output 1 while that
digit is heard; integrating it over an utterance gives the feature ``c_ij``.
Pairs of digits are then separated by Fisher discriminants on
``c_i - c_i'`` with thresholds tuned for balanced accuracy.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.io import wavfile

from .dynamics import DriveConfig, InputSignal
from .network import NetworkConfig, NetworkInstance, build_network
from .parity import wilson_interval
from .readout import (GramAccumulator, ReadoutModel, SimulationConfig, SolveFailure,
                      SubsectionLayout, solve_weights, stream_envelopes)

log = logging.getLogger(__name__)


class DegenerateUtterance(ValueError):
    pass


class SpanOutOfRange(ValueError):
    pass


@dataclass
class Utterance:
    samples: np.ndarray
    sample_rate: float
    label: int
    speaker: str = ""
    path: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("utterance must be a non-empty mono waveform")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("utterance contains non-finite samples")
        self.label = int(self.label)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpeechPipelineConfig:
    silence_duration: float = 70.0
    stretch: float = 97.2
    amplitude: float = 2.0
    delta_star: float = 6.0
    omega_drive: float = 1.0
    train_count: int = 800
    fisher_ridge: float = 1e-3
    readout_ridge: object = "auto"
    section_length: int = 40
    section_step: int = 20
    cutoff_cycles: float = 5.0
    holdout_speakers: tuple = ()
    seed: int = 0

    def __post_init__(self):
        for name in ("silence_duration", "stretch", "amplitude", "delta_star",
                     "omega_drive", "train_count", "section_length", "section_step",
                     "cutoff_cycles"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fisher_ridge < 0:
            raise ValueError("fisher_ridge must be >= 0")
        object.__setattr__(self, "holdout_speakers", tuple(self.holdout_speakers))

    @property
    def drive(self):
        return DriveConfig(self.amplitude, self.omega_drive)

    def layout(self, n):
        return SubsectionLayout.overlapping(n, self.section_length, self.section_step)


# ---------------------------------------------------------------------------
# Corpus


def read_wav(path) -> tuple[np.ndarray, float]:
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    return data.astype(np.float64), float(rate)


def load_manifest(path) -> list[Utterance]:
    """Read a ``path,label,speaker`` CSV; relative paths are resolved
    against the manifest's directory. A header row is optional."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip().lower() == "path":
                continue
            wav = Path(row[0].strip())
            if not wav.is_absolute():
                wav = path.parent / wav
            samples, rate = read_wav(wav)
            speaker = row[2].strip() if len(row) > 2 else ""
            out.append(Utterance(samples, rate, int(row[1]), speaker, str(wav)))
    return out


def synthetic_digits(n_per_digit=20, speakers=("f1", "f2", "f3", "f4", "f5"),
                     sample_rate=8000, classes=range(10), seed=0) -> list[Utterance]:
    """Artificial "spoken digits" for exercising the pipeline offline.

    Each class is a fixed pattern of voiced bursts (onset, length, loudness,
    pitch); speakers scale pitch and tempo and every token is jittered and
    noised. Not a substitute for recorded speech.
    """
    rng = np.random.default_rng(seed)
    templates = {}
    for c in classes:
        trng = np.random.default_rng([seed, 7919, int(c)])
        n_bursts = trng.integers(1, 4)
        onsets = np.sort(trng.uniform(0.0, 0.35, n_bursts))
        templates[c] = [(o, trng.uniform(0.06, 0.2), trng.uniform(0.3, 1.0),
                         trng.uniform(120, 900)) for o in onsets]
    voices = {s: (rng.uniform(0.8, 1.25), rng.uniform(0.85, 1.15)) for s in speakers}
    out = []
    for c in classes:
        for k in range(n_per_digit):
            speaker = speakers[k % len(speakers)]
            pitch, tempo = voices[speaker]
            length = int(sample_rate * 0.6 * tempo)
            t = np.arange(length) / sample_rate
            x = np.zeros(length)
            for onset, dur, loud, f0 in templates[c]:
                onset = onset * tempo * rng.uniform(0.9, 1.1)
                dur = dur * tempo * rng.uniform(0.85, 1.15)
                env = np.exp(-0.5 * ((t - onset - dur / 2) / (dur / 4)) ** 2)
                f = f0 * pitch * rng.uniform(0.95, 1.05)
                x += loud * rng.uniform(0.8, 1.2) * env * (
                    np.sin(2 * np.pi * f * t) + 0.5 * np.sin(2 * np.pi * 2.3 * f * t))
            x += 0.02 * rng.standard_normal(length)
            out.append(Utterance(x, sample_rate, int(c), speaker))
    return out


def split_corpus(utterances, config: SpeechPipelineConfig):
    """Stratified random train/test split (or speaker hold-out) with a fixed seed.

    Returns two index arrays into ``utterances``.
    """
    rng = np.random.default_rng(config.seed)
    labels = np.array([u.label for u in utterances])
    if config.holdout_speakers:
        held = np.array([u.speaker in config.holdout_speakers for u in utterances])
        train, test = np.flatnonzero(~held), np.flatnonzero(held)
        return rng.permutation(train), rng.permutation(test)
    classes = np.unique(labels)
    total = min(config.train_count, len(utterances) - len(classes))
    train = []
    for j, c in enumerate(classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        quota = total * len(members) // len(utterances)
        # leave at least one utterance of every class for testing
        train.extend(members[:max(2, min(quota, len(members) - 1))])
    train = np.array(sorted(train))
    test = np.setdiff1d(np.arange(len(utterances)), train)
    return rng.permutation(train), rng.permutation(test)


# ---------------------------------------------------------------------------
# Input stream


@dataclass(frozen=True)
class Span:
    start: float
    end: float
    label: int


def preprocess_utterance(u: Utterance, config: SpeechPipelineConfig) -> InputSignal:
    """Zero-mean, unit-variance, rectified waveform on the simulation time axis."""
    x = u.samples
    if len(x) < 2:
        raise DegenerateUtterance("need at least two samples")
    x = x - x.mean()
    std = x.std()
    if not std > 0:
        raise DegenerateUtterance(f"utterance {u.path or ''} has zero variance")
    return InputSignal.sampled(np.abs(x / std), config.stretch / u.sample_rate)


def build_input_stream(utterances, config: SpeechPipelineConfig):
    """Concatenate utterances with ``silence_duration`` of zero input around each.

    Returns ``(signal, spans)``; ``spans[k]`` is the time window of the k-th
    utterance.
    """
    utterances = list(utterances)
    if not utterances:
        raise ValueError("no utterances")
    silence = config.silence_duration
    edges, values, spans = [np.zeros(1)], [], []
    t = silence
    for u in utterances:
        seg = preprocess_utterance(u, config)
        h = config.stretch / u.sample_rate
        m = len(seg.values)
        values.append(np.zeros(1))
        edges.append(np.array([t]))
        values.append(seg.values)
        edges.append(t + h * np.arange(1, m + 1))
        spans.append(Span(t, t + h * m, u.label))
        t = t + h * m + silence
    values.append(np.zeros(1))
    edges.append(np.array([t]))
    return InputSignal(np.concatenate(edges), np.concatenate(values), "sampled"), spans


# ---------------------------------------------------------------------------
# Features


class SpanIntegrals:
    """Per-span trapezoid integrals and plain sums of envelope columns, fed chunk by chunk."""

    def __init__(self, spans, n):
        self.starts = np.array([s.start for s in spans])
        self.ends = np.array([s.end for s in spans])
        self.sums = np.zeros((len(spans), n))
        self.first = np.zeros((len(spans), n))
        self.last = np.zeros((len(spans), n))
        self.counts = np.zeros(len(spans), dtype=np.int64)
        self.interval = None

    def add(self, env):
        if len(env) == 0:
            return
        if self.interval is None and len(env) > 1:
            self.interval = env.interval
        k = np.searchsorted(self.starts, env.times, side="right") - 1
        inside = (k >= 0) & (env.times <= self.ends[np.maximum(k, 0)])
        if not inside.any():
            return
        cols = np.flatnonzero(inside)
        ids = k[cols]
        groups, at = np.unique(ids, return_index=True)
        sums = np.add.reduceat(env.values[:, cols], at, axis=1)
        stops = np.append(at[1:], len(cols)) - 1
        fresh = self.counts[groups] == 0
        self.first[groups[fresh]] = env.values[:, cols[at[fresh]]].T
        self.last[groups] = env.values[:, cols[stops]].T
        self.sums[groups] += sums.T
        self.counts[groups] += stops - at + 1

    def integrals(self):
        if np.any(self.counts == 0):
            raise SpanOutOfRange(f"{int(np.sum(self.counts == 0))} spans have no envelope samples")
        return self.interval * (self.sums - 0.5 * (self.first + self.last))


def span_integrals(envelopes, spans):
    """Trapezoid integral of every envelope row over each span, ``(n_spans, N)``."""
    if len(envelopes) == 0 or any(s.start < envelopes.times[0] - 1e-9 or
                                  s.end > envelopes.times[-1] + 1e-9 for s in spans):
        raise SpanOutOfRange("span outside the envelope time range")
    acc = SpanIntegrals(spans, envelopes.n)
    acc.add(envelopes)
    return acc.integrals()


def features_from_integrals(integrals, readouts):
    """``c[u, i, j] = w_ij . integral_u[section j]`` for every utterance u."""
    integrals = np.atleast_2d(integrals)
    out = np.empty((integrals.shape[0], len(readouts), len(readouts[0].layout)))
    for i, model in enumerate(readouts):
        for j, ((s, l), w) in enumerate(zip(model.layout.sections, model.weights)):
            out[:, i, j] = integrals[:, s:s + l] @ w
    return out


def compute_features(envelopes, spans, readouts):
    """Integrated section outputs per utterance, shape ``(n_spans, n_digits, n_sections)``."""
    return features_from_integrals(span_integrals(envelopes, spans), readouts)


# ---------------------------------------------------------------------------
# Fisher discriminants and thresholds


def fisher_direction(n_a, mu_a, cov_a, n_b, mu_b, cov_b, ridge=0.0):
    """``(n_a cov_a + n_b cov_b + ridge I)^-1 (mu_a - mu_b)``."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    scatter = n_a * np.asarray(cov_a, float) + n_b * np.asarray(cov_b, float)
    scatter = scatter + ridge * np.eye(len(mu_a))
    try:
        return linalg.solve(scatter, mu_a - mu_b, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(f"singular within-class scatter: {exc}") from exc


def class_stats(samples):
    samples = np.asarray(samples, dtype=np.float64)
    return len(samples), samples.mean(axis=0), np.cov(samples, rowvar=False, bias=True).reshape(
        samples.shape[1], samples.shape[1])


def fit_fisher(class_a, class_b, ridge=0.0):
    """Fisher discriminant between two sample sets (rows are samples).

    Covariances are the maximum-likelihood (1/N) estimates, so ``N cov`` is
    the class scatter matrix. Projections ``D . x`` are larger for class a.
    """
    class_a, class_b = np.atleast_2d(class_a), np.atleast_2d(class_b)
    if len(class_a) < 2 or len(class_b) < 2:
        raise ValueError("each class needs at least two samples")
    return fisher_direction(*class_stats(class_a), *class_stats(class_b), ridge=ridge)


def balanced_accuracy(pos, neg, threshold):
    pos, neg = np.asarray(pos), np.asarray(neg)
    return 0.5 * np.mean(pos > threshold) + 0.5 * np.mean(neg <= threshold)


def tune_threshold(pos, neg):
    """Threshold maximising ``P(proj > T | a)/2 + P(proj <= T | b)/2``.

    Candidates are -inf, the midpoints between consecutive distinct
    projections and +inf. Among optimal candidates the first (lowest)
    contiguous run is taken and the midpoint of its finite members returned.
    Returns ``(threshold, balanced_accuracy)``.
    """
    pos = np.sort(np.asarray(pos, dtype=np.float64))
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need at least one projection per class")
    values = np.unique(np.concatenate([pos, neg]))
    cands = np.concatenate([[-np.inf], 0.5 * (values[1:] + values[:-1]), [np.inf]])
    score = 0.5 * (1.0 - np.searchsorted(pos, cands, side="right") / len(pos)) \
        + 0.5 * np.searchsorted(neg, cands, side="right") / len(neg)
    best = score.max()
    hits = np.flatnonzero(score >= best - 1e-12)
    run = hits[:np.argmax(np.diff(np.append(hits, hits[-1] + 2)) != 1) + 1]
    chosen = cands[run]
    finite = chosen[np.isfinite(chosen)]
    if len(finite):
        threshold = 0.5 * (finite.min() + finite.max())
    elif len(chosen) > 1:
        threshold = 0.5 * (values[0] + values[-1])
    else:
        threshold = chosen[0]
    return float(threshold), float(best)


# ---------------------------------------------------------------------------
# Model


@dataclass
class Classification:
    digit: int
    votes: dict
    tie: bool


@dataclass
class SpeechModel:
    classes: list
    readouts: list
    discriminants: dict
    thresholds: dict
    pair_stats: dict = field(default_factory=dict, repr=False)

    @property
    def pairs(self):
        return list(combinations(range(len(self.classes)), 2))

    def save(self, path):
        doc = {
            "format": "duffing_rc.speech_model",
            "version": 1,
            "classes": [int(c) for c in self.classes],
            "sections": [list(s) for s in self.readouts[0].layout.sections],
            "readout_ridge": self.readouts[0].ridge,
            "weights": [[w.tolist() for w in r.weights] for r in self.readouts],
            "pairs": [
                {"i": i, "j": j, "discriminant": self.discriminants[i, j].tolist(),
                 "threshold": self.thresholds[i, j]}
                for i, j in self.pairs
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "duffing_rc.speech_model" or doc.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 speech model")
        layout = SubsectionLayout(tuple(map(tuple, doc["sections"])))
        readouts = [ReadoutModel(layout, w, doc["readout_ridge"]) for w in doc["weights"]]
        disc = {(p["i"], p["j"]): np.array(p["discriminant"]) for p in doc["pairs"]}
        thr = {(p["i"], p["j"]): float(p["threshold"]) for p in doc["pairs"]}
        return cls(doc["classes"], readouts, disc, thr)


def pair_votes(features, model: SpeechModel):
    """Winner index of every pair comparison for one feature matrix."""
    out = {}
    for i, j in model.pairs:
        proj = model.discriminants[i, j] @ (features[i] - features[j])
        out[i, j] = i if proj > model.thresholds[i, j] else j
    return out


def classify(features, model: SpeechModel) -> Classification:
    """One-vs-one majority vote; ties go to the smallest digit and are flagged."""
    counts = np.zeros(len(model.classes), dtype=int)
    for winner in pair_votes(features, model).values():
        counts[winner] += 1
    top = np.flatnonzero(counts == counts.max())
    votes = {model.classes[k]: int(c) for k, c in enumerate(counts)}
    return Classification(model.classes[top[0]], votes, len(top) > 1)


def fit_pairs(features, labels, classes, ridge_rel):
    """Fisher discriminants and tuned thresholds for every pair of classes."""
    labels = np.asarray(labels)
    disc, thr, stats_ = {}, {}, {}
    for i, j in combinations(range(len(classes)), 2):
        a = features[labels == classes[i]][:, i] - features[labels == classes[i]][:, j]
        b = features[labels == classes[j]][:, i] - features[labels == classes[j]][:, j]
        sa, sb = class_stats(a), class_stats(b)
        scatter = sa[0] * sa[2] + sb[0] * sb[2]
        ridge = ridge_rel * max(np.trace(scatter) / scatter.shape[0], np.finfo(float).tiny)
        d = fisher_direction(*sa, *sb, ridge=ridge)
        disc[i, j] = d
        thr[i, j] = tune_threshold(a @ d, b @ d)[0]
        stats_[i, j] = (sa, sb)
    return disc, thr, stats_


def train_readouts(gram, sums, labels, classes, layout, ridge="auto"):
    """Per-digit section weights: target 1 on that digit's utterances, 0 elsewhere."""
    labels = np.asarray(labels)
    readouts = []
    for c in classes:
        cross = sums[labels == c].sum(axis=0)
        weights = [solve_weights(gram, cross, ridge, layout.indices(k))
                   for k in range(len(layout))]
        readouts.append(ReadoutModel(layout, weights, ridge))
    return readouts


# ---------------------------------------------------------------------------
# End-to-end


@dataclass
class SpeechSimulation:
    """Sufficient statistics of one pass of the corpus through the network."""

    spans: list
    integrals: np.ndarray
    sums: np.ndarray
    gram: GramAccumulator
    n_train: int


def simulate_corpus(instance: NetworkInstance, utterances, n_train: int,
                    config: SpeechPipelineConfig, sim: SimulationConfig = SimulationConfig()):
    """Play ``utterances`` through the network (the first ``n_train`` are the
    training phase) and accumulate everything training and testing need."""
    drive = config.drive
    signal, spans = build_input_stream(utterances, config)
    dt = sim.step(drive, config.stretch)
    filt = sim.filter_for(drive, config.stretch, config.cutoff_cycles)
    t_end = dt * np.ceil(signal.extent[1] / dt)
    t_train_end = spans[n_train - 1].end + config.silence_duration if n_train else 0.0
    acc = SpanIntegrals(spans, instance.n)
    gram = GramAccumulator(instance.n)
    for env, _, _ in stream_envelopes(instance, drive, signal, (0.0, t_end), dt,
                                      sim.record_stride, sim.decimation, filt,
                                      chunk_records=sim.chunk_records, bound=sim.bound):
        acc.add(env)
        train_cols = (env.times >= config.silence_duration) & (env.times < t_train_end)
        if train_cols.any():
            gram.add(env.values[:, train_cols])
    return SpeechSimulation(spans, acc.integrals(), acc.sums, gram, n_train)


def train_speech_model(simulation: SpeechSimulation, labels, config: SpeechPipelineConfig):
    labels = np.asarray(labels)
    tr = slice(0, simulation.n_train)
    classes = sorted(int(c) for c in np.unique(labels[tr]))
    layout = config.layout(simulation.gram.dim)
    readouts = train_readouts(simulation.gram, simulation.sums[tr], labels[tr], classes,
                              layout, config.readout_ridge)
    feats = features_from_integrals(simulation.integrals[tr], readouts)
    disc, thr, st = fit_pairs(feats, labels[tr], classes, config.fisher_ridge)
    return SpeechModel(classes, readouts, disc, thr, st)


@dataclass
class ConfusionResult:
    matrix: np.ndarray
    classes: list
    per_class: np.ndarray
    accuracy: float
    ci: tuple
    counts: np.ndarray


def confusion_matrix(predictions, labels, classes=None) -> ConfusionResult:
    """``matrix[r, c]`` = P(classified as ``classes[r]`` | presented ``classes[c]``).

    Columns of classes never presented are NaN.
    """
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    classes = list(classes) if classes is not None else sorted(
        set(labels.tolist()) | set(predictions.tolist()))
    pos = {c: k for k, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)))
    for p, t in zip(predictions, labels):
        counts[pos[p], pos[t]] += 1
    totals = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = counts / totals
    correct = int(np.trace(counts))
    n = len(labels)
    return ConfusionResult(matrix, classes, np.diag(matrix).copy(),
                           correct / n if n else float("nan"), wilson_interval(correct, n),
                           counts)


@dataclass
class SpeechReport:
    model: SpeechModel
    confusion: ConfusionResult
    predictions: list
    test_indices: np.ndarray
    train_indices: np.ndarray
    ties: int


def run_speech_benchmark(utterances, network: NetworkConfig = NetworkConfig(),
                         config: SpeechPipelineConfig = SpeechPipelineConfig(),
                         sim: SimulationConfig = SimulationConfig()) -> SpeechReport:
    """Split, simulate, train and test on ``utterances``."""
    train, test = split_corpus(utterances, config)
    instance = build_network(replace(network, delta_star=config.delta_star))
    order = np.concatenate([train, test])
    ordered = [utterances[k] for k in order]
    labels = np.array([u.label for u in ordered])
    log.info("simulating %d utterances (%d for training)", len(ordered), len(train))
    simulation = simulate_corpus(instance, ordered, len(train), config, sim)
    model = train_speech_model(simulation, labels, config)
    feats = features_from_integrals(simulation.integrals[len(train):], model.readouts)
    results = [classify(f, model) for f in feats]
    preds = [r.digit for r in results]
    conf = confusion_matrix(preds, labels[len(train):], model.classes)
    return SpeechReport(model, conf, results, test, train, sum(r.tie for r in results))

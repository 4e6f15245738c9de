"""Simulated humans and machines, ablation combiners, metrics, and the
experiment harness.

The machine simulator is calibrated by construction: it draws a top-mass
value whose mean equals the target accuracy, places it on a "belief"
category that equals the truth with exactly that probability, and spreads
the remainder uniformly. The resulting probability vectors satisfy
p(y | m) = m under uniform class priors, so temperature fitting recovers
an injected overconfidence scale.

Human noise comes in two flavors: dropping key sentences to "not key"
(one-sided noise: surviving key claims are never wrong) and uniform
confusion (symmetric noise modeling a non-expert making near-random
calls). The harness samples human labels from per-prototype confusion
matrices built from either profile, using shared uniform draws across
noise rates so that accuracy degrades monotonically in the rate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CompletenessError, ConfigError, DegenerateDataWarning
from .fusion import CalibrationConfig, fit_temperature, softmax
from .matcher import get_matcher
from .model import (
    CasePair,
    CategorySet,
    ConfusionMatrix,
    DecisionLog,
    DecisionRecord,
    FusedDecision,
    HumanDecision,
    MachineDecision,
    NOT_KEY,
    PrototypeModel,
    SentenceRef,
)
from .protoem import ProtoEmConfig, run_naive_em, run_protoem
from .prototypes import assign_nearest

NOISE_GRID_DEFAULT = (0.1, 0.2, 0.3, 0.4, 0.5)
PROTOTYPE_GRID_DEFAULT = (1, 2, 4, 6, 8, 10)
EM_GRID_DEFAULT = (20, 40, 60, 80, 100)
ALL_VARIANTS = ("co-match", "human-only", "machine-only", "intersection", "union", "naive-em")

HUMAN_MODELS = ("drop_to_notkey", "uniform_confusion")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from arbitrary hashable parts."""
    text = "|".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(text, digest_size=8).digest()
    return struct.unpack("<q", digest)[0] & 0x7FFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HumanSimConfig:
    noise_rate: float
    model: str = "drop_to_notkey"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ConfigError("noise_rate must lie in [0, 1]")
        if self.model not in HUMAN_MODELS:
            raise ConfigError(f"human noise model must be one of {HUMAN_MODELS}")


@dataclass(frozen=True)
class MachineSimConfig:
    target_accuracy: float
    concentration: float = 5.0
    overconfidence_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.concentration <= 0.0:
            raise ConfigError("concentration must be positive")
        if self.overconfidence_scale <= 0.0:
            raise ConfigError("overconfidence_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "target_accuracy": self.target_accuracy,
            "concentration": self.concentration,
            "overconfidence_scale": self.overconfidence_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MachineSimConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _default_refs(n: int) -> list[SentenceRef]:
    return [SentenceRef("", i) for i in range(n)]


def noisy_labels(true_labels, cfg: HumanSimConfig, category_count: Optional[int] = None) -> np.ndarray:
    """Apply the configured noise model to an array of true labels."""
    labels = np.asarray(true_labels, dtype=np.int64).copy()
    rng = np.random.default_rng(cfg.seed)
    if cfg.model == "drop_to_notkey":
        keys = np.flatnonzero(labels != NOT_KEY)
        n_drop = int(np.floor(cfg.noise_rate * keys.size))
        if n_drop > 0:
            # Permutation prefix: drop sets are nested across rates under one seed.
            drop = rng.permutation(keys)[:n_drop]
            labels[drop] = NOT_KEY
    else:
        if category_count is None:
            raise ConfigError("uniform_confusion needs the category count")
        hit = rng.random(labels.size) < cfg.noise_rate
        labels[hit] = rng.integers(0, category_count, size=int(hit.sum()))
    return labels


def simulate_human(
    true_labels,
    cfg: HumanSimConfig,
    category_count: Optional[int] = None,
    refs: Optional[Sequence[SentenceRef]] = None,
) -> list[HumanDecision]:
    """Noisy human decisions for a list of ground-truth labels."""
    labels = noisy_labels(true_labels, cfg, category_count)
    refs = list(refs) if refs is not None else _default_refs(labels.size)
    if len(refs) != labels.size:
        raise ConfigError("need exactly one sentence ref per label")
    return [HumanDecision(r, int(l)) for r, l in zip(refs, labels)]


def machine_probabilities(true_labels, cfg: MachineSimConfig, category_count: int) -> np.ndarray:
    """Calibrated machine probability vectors, one row per sentence.

    Each row places top mass p on a belief category that equals the truth
    with probability exactly p, and splits the rest uniformly; p is drawn
    with mean target_accuracy, so argmax accuracy matches the target and
    p(y | m) = m under uniform priors.
    """
    y = np.asarray(true_labels, dtype=np.int64)
    c = category_count
    a = cfg.target_accuracy
    if not (1.0 / c < a <= 1.0):
        raise ConfigError(f"target_accuracy must lie in (1/C, 1] = ({1.0 / c:.4f}, 1]")
    rng = np.random.default_rng(cfg.seed)
    n = y.size
    if a >= 1.0:
        p_top = np.ones(n)
    else:
        mean = (a - 1.0 / c) / (1.0 - 1.0 / c)
        p_top = 1.0 / c + (1.0 - 1.0 / c) * rng.beta(cfg.concentration * mean, cfg.concentration * (1.0 - mean), size=n)
    lam = (c * p_top - 1.0) / (c - 1.0)
    belief = np.where(rng.random(n) < lam, y, rng.integers(0, c, size=n))
    probs = np.repeat(((1.0 - p_top) / (c - 1.0))[:, None], c, axis=1)
    probs[np.arange(n), belief] = p_top
    return probs


def simulate_machine(
    true_labels,
    cfg: MachineSimConfig,
    category_count: int,
    refs: Optional[Sequence[SentenceRef]] = None,
) -> tuple[np.ndarray, list[MachineDecision]]:
    """(logits, decisions) for a list of ground-truth labels.

    logits = overconfidence_scale * log(probs); the returned decisions are
    softmax(logits), i.e. the machine's output before any calibration.
    """
    probs = machine_probabilities(true_labels, cfg, category_count)
    logits = cfg.overconfidence_scale * np.log(np.clip(probs, 1e-300, None))
    decisions_matrix = softmax(logits)
    refs = list(refs) if refs is not None else _default_refs(probs.shape[0])
    if len(refs) != probs.shape[0]:
        raise ConfigError("need exactly one sentence ref per label")
    decisions = [MachineDecision(r, row) for r, row in zip(refs, decisions_matrix)]
    return logits, decisions


def confusion_from_noise(noise_rate: float, category_count: int, profile: str) -> ConfusionMatrix:
    """Column-stochastic human-response matrix for a given noise profile.

    drop_to_notkey: each key category loses noise_rate of its mass to
    "not key"; true non-key sentences are never corrupted.
    uniform_confusion: every category is replaced by a uniform draw with
    probability noise_rate.
    """
    if not (0.0 <= noise_rate <= 1.0):
        raise ConfigError("noise_rate must lie in [0, 1]")
    c = category_count
    if profile == "drop_to_notkey":
        m = (1.0 - noise_rate) * np.eye(c)
        m[NOT_KEY, :] += noise_rate
        m[NOT_KEY, NOT_KEY] = 1.0
        m[1:, NOT_KEY] = 0.0
    elif profile == "uniform_confusion":
        m = (1.0 - noise_rate) * np.eye(c) + (noise_rate / c) * np.ones((c, c))
    else:
        raise ConfigError(f"unknown noise profile {profile!r}")
    return ConfusionMatrix(m)


def labels_from_confusions(
    true_labels: np.ndarray,
    prototype_ids: np.ndarray,
    matrices: Sequence[ConfusionMatrix],
    u: np.ndarray,
    v: np.ndarray,
) -> np.ndarray:
    """Sample human labels from per-prototype confusion columns.

    ``u`` decides whether sentence i errs (u[i] < 1 - phi[y, y]) and ``v``
    picks the error target by inverse CDF. Sharing (u, v) across calls
    couples draws: scaling all matrices toward more noise only ever turns
    correct answers into errors, never the reverse.
    """
    y = np.asarray(true_labels, dtype=np.int64)
    z = np.asarray(prototype_ids, dtype=np.int64)
    out = y.copy()
    for j in range(len(matrices)):
        entries = matrices[j].entries
        for k in range(entries.shape[0]):
            idx = np.flatnonzero((z == j) & (y == k))
            if idx.size == 0:
                continue
            stay = entries[k, k]
            err = idx[u[idx] < 1.0 - stay]
            if err.size == 0:
                continue
            err_dist = entries[:, k].copy()
            err_dist[k] = 0.0
            total = err_dist.sum()
            if total <= 0.0:
                continue
            cdf = np.cumsum(err_dist / total)
            out[err] = np.searchsorted(cdf, v[err], side="right")
    return out


# ---------------------------------------------------------------------------
# Combiners and metrics
# ---------------------------------------------------------------------------


def combine_intersection(machine_argmax: int, human_label: int) -> int:
    """Agreement keeps the shared label; any disagreement yields not-key."""
    return machine_argmax if machine_argmax == human_label else NOT_KEY


def combine_union(machine_argmax: int, human_label: int, cats: CategorySet) -> int:
    """Whichever label carries the higher importance rank wins."""
    if cats.importance_rank[machine_argmax] >= cats.importance_rank[human_label]:
        return machine_argmax
    return human_label


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def metrics(predicted, truth) -> Metrics:
    """Accuracy plus macro precision/recall/F1 over classes present in truth.

    A class predicted zero times contributes precision 0.
    """
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.size == 0 or pred.size != true.size:
        raise ValueError("predicted and truth must be equal-length and non-empty")
    accuracy = float(np.mean(pred == true))
    precisions, recalls, f1s = [], [], []
    for cls in sorted(set(true.tolist())):
        tp = float(np.sum((pred == cls) & (true == cls)))
        fp = float(np.sum((pred == cls) & (true != cls)))
        fn = float(np.sum((pred != cls) & (true == cls)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return Metrics(accuracy, float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s)))


def frobenius_error(
    estimated: PrototypeModel,
    truth_lookup: dict[SentenceRef, ConfusionMatrix],
    embeddings: dict[SentenceRef, np.ndarray],
) -> float:
    """Mean Frobenius distance between each sentence's assigned matrix and
    its true matrix, over the sentences of ``embeddings``."""
    if not embeddings:
        raise ValueError("no sentences to score")
    total = 0.0
    for ref, vec in embeddings.items():
        if ref not in truth_lookup:
            raise CompletenessError(f"missing true confusion matrix for {ref}")
        j = assign_nearest(vec, estimated.centroids)
        diff = estimated.confusions[j].entries - truth_lookup[ref].entries
        total += float(np.sqrt(np.sum(diff * diff)))
    return total / len(embeddings)


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentCorpus:
    """A labeled corpus plus the side information the harness needs."""

    pairs: tuple[CasePair, ...]
    embeddings: dict[SentenceRef, np.ndarray]
    categories: CategorySet
    machine: MachineSimConfig
    sentence_prototypes: Optional[dict[SentenceRef, int]] = None
    relation_count: int = 3
    relation_thresholds: tuple[float, ...] = (0.45, 0.7)
    noise_spread: tuple[float, float] = (0.25, 1.75)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "relation_thresholds", tuple(self.relation_thresholds))


@dataclass(frozen=True)
class ExperimentGrid:
    noise_rates: tuple[float, ...] = NOISE_GRID_DEFAULT
    prototype_counts: tuple[int, ...] = (4,)
    em_iteration_counts: tuple[int, ...] = (40,)

    def __post_init__(self):
        object.__setattr__(self, "noise_rates", tuple(self.noise_rates))
        object.__setattr__(self, "prototype_counts", tuple(self.prototype_counts))
        object.__setattr__(self, "em_iteration_counts", tuple(self.em_iteration_counts))

    def cells(self) -> Iterable[tuple[float, int, int]]:
        for noise in self.noise_rates:
            for p in self.prototype_counts:
                for iters in self.em_iteration_counts:
                    yield noise, p, iters


@dataclass(frozen=True)
class CellResult:
    noise_rate: float
    prototypes: int
    em_iterations: int
    seed: int
    variant: str
    key: Metrics
    relation: Metrics
    frobenius: Optional[float]
    fitted_temperature: float

    def to_dict(self) -> dict:
        return {
            "noise_rate": self.noise_rate,
            "prototypes": self.prototypes,
            "em_iterations": self.em_iterations,
            "seed": self.seed,
            "variant": self.variant,
            "key": self.key.to_dict(),
            "relation": self.relation.to_dict(),
            "frobenius": self.frobenius,
            "fitted_temperature": self.fitted_temperature,
        }


@dataclass(frozen=True)
class ExperimentReport:
    results: tuple[CellResult, ...]
    config: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": [r.to_dict() for r in self.results],
            "aggregates": self.aggregates(),
        }

    def aggregates(self) -> list[dict]:
        grouped: dict[tuple, list[CellResult]] = {}
        for r in self.results:
            grouped.setdefault((r.noise_rate, r.prototypes, r.em_iterations, r.variant), []).append(r)
        rows = []
        for (noise, p, iters, variant), cell in sorted(grouped.items()):
            entry = {
                "noise_rate": noise,
                "prototypes": p,
                "em_iterations": iters,
                "variant": variant,
                "seeds": len(cell),
            }
            for metric_name in ("accuracy", "precision", "recall", "f1"):
                key_vals = np.asarray([getattr(r.key, metric_name) for r in cell])
                rel_vals = np.asarray([getattr(r.relation, metric_name) for r in cell])
                entry[f"key_{metric_name}_mean"] = float(key_vals.mean())
                entry[f"key_{metric_name}_std"] = float(key_vals.std())
                entry[f"rel_{metric_name}_mean"] = float(rel_vals.mean())
                entry[f"rel_{metric_name}_std"] = float(rel_vals.std())
            frob = [r.frobenius for r in cell if r.frobenius is not None]
            entry["frobenius_mean"] = float(np.mean(frob)) if frob else None
            entry["frobenius_std"] = float(np.std(frob)) if frob else None
            rows.append(entry)
        return rows

    def filtered(self, variant: str, **cell_keys) -> list[CellResult]:
        out = []
        for r in self.results:
            if r.variant != variant:
                continue
            if all(getattr(r, k) == v for k, v in cell_keys.items()):
                out.append(r)
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path) -> None:
        columns = [
            "noise_rate", "prototypes", "em_iterations", "seed", "variant",
            "key_accuracy", "key_precision", "key_recall", "key_f1",
            "rel_accuracy", "rel_precision", "rel_recall", "rel_f1",
            "frobenius", "fitted_temperature",
        ]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for r in self.results:
                writer.writerow([
                    repr(r.noise_rate), r.prototypes, r.em_iterations, r.seed, r.variant,
                    repr(r.key.accuracy), repr(r.key.precision), repr(r.key.recall), repr(r.key.f1),
                    repr(r.relation.accuracy), repr(r.relation.precision), repr(r.relation.recall),
                    repr(r.relation.f1),
                    "" if r.frobenius is None else repr(r.frobenius),
                    repr(r.fitted_temperature),
                ])


def prototype_noise_rates(base_rate: float, prototype_count: int, spread: tuple[float, float]) -> np.ndarray:
    """Per-prototype noise rates around a base rate.

    Linear ramp over the spread factors, so prototypes differ in how
    reliable the simulated human is; the mean factor is the midpoint.
    """
    if prototype_count == 1:
        factors = np.asarray([1.0])
    else:
        factors = np.linspace(spread[0], spread[1], prototype_count)
    return np.clip(base_rate * factors, 0.0, 0.98)


def _corpus_documents(pairs: Sequence[CasePair]):
    for pair in pairs:
        yield pair.source
        yield pair.target


class _SentenceTable:
    """Flat view of every sentence in the corpus, in corpus order."""

    def __init__(self, corpus: ExperimentCorpus):
        self.refs: list[SentenceRef] = []
        self.labels: list[int] = []
        self.prototypes: list[int] = []
        c = corpus.categories.count
        for doc in _corpus_documents(corpus.pairs):
            for s in doc.sentences:
                if s.true_label is None or not (0 <= s.true_label < c):
                    raise ConfigError(f"corpus is not fully labeled: sentence {s.ref} has no valid label")
                if s.ref not in corpus.embeddings:
                    raise CompletenessError(f"missing embedding for {s.ref}")
                self.refs.append(s.ref)
                self.labels.append(s.true_label)
                if corpus.sentence_prototypes is not None:
                    if s.ref not in corpus.sentence_prototypes:
                        raise CompletenessError(f"missing prototype truth for {s.ref}")
                    self.prototypes.append(corpus.sentence_prototypes[s.ref])
        self.labels_arr = np.asarray(self.labels, dtype=np.int64)
        self.prototypes_arr = (
            np.asarray(self.prototypes, dtype=np.int64) if self.prototypes else np.zeros(len(self.refs), dtype=np.int64)
        )
        self.index_of = {ref: i for i, ref in enumerate(self.refs)}


def run_experiment(
    corpus: ExperimentCorpus,
    variants: Sequence[str] = ALL_VARIANTS,
    grid: ExperimentGrid = ExperimentGrid(),
    seeds: Sequence[int] = (0, 1, 2),
    noise_model: str = "drop_to_notkey",
    em_alpha: float = 1.0,
    em_epsilon: float = 0.2,
    em_convergence_tol: float = 1e-7,
    historical_noise_rate: float = 0.1,
) -> ExperimentReport:
    """Run the full protocol over a grid of noise rates, prototype counts
    and EM iteration budgets.

    Per seed: split pairs 50/50 into historical and evaluation halves and
    build a decision log from the historical half, simulating the log's
    practitioner population at ``historical_noise_rate``. Prototype models
    are fitted once per (prototype count, iteration budget); estimation
    happens strictly before deployment. The grid's noise rates then vary
    the expertise of the *deployed* human on the evaluation half, which is
    where trust mismatch shows up. Fully deterministic in (corpus, grid,
    seeds).
    """
    variants = tuple(variants)
    for v in variants:
        if v not in ALL_VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; available: {ALL_VARIANTS}")
    if noise_model not in HUMAN_MODELS:
        raise ConfigError(f"unknown noise model {noise_model!r}")
    if len(corpus.pairs) < 2:
        raise ConfigError("need at least 2 case pairs to split")
    for pair in corpus.pairs:
        if pair.true_relation is None:
            raise ConfigError(f"corpus is not fully labeled: pair ({pair.source.doc_id}, {pair.target.doc_id}) has no relation")

    table = _SentenceTable(corpus)
    cats = corpus.categories
    c = cats.count
    true_prototype_count = (
        int(table.prototypes_arr.max()) + 1 if corpus.sentence_prototypes is not None else 1
    )
    scorer = get_matcher("reference")

    results: list[CellResult] = []
    for seed in seeds:
        split_rng = np.random.default_rng(derive_seed("split", seed))
        order = split_rng.permutation(len(corpus.pairs))
        half = len(corpus.pairs) // 2
        hist_pairs = [corpus.pairs[i] for i in sorted(order[:half])]
        eval_pairs = [corpus.pairs[i] for i in sorted(order[half:])]

        hist_idx = np.asarray(
            [table.index_of[s.ref] for doc in _corpus_documents(hist_pairs) for s in doc.sentences]
        )
        eval_idx = np.asarray(
            [table.index_of[s.ref] for doc in _corpus_documents(eval_pairs) for s in doc.sentences]
        )

        # Machine decisions and calibration are noise-independent: one draw per seed.
        machine_cfg = replace(corpus.machine, seed=derive_seed("machine", corpus.machine.seed, seed))
        logits, _ = simulate_machine(table.labels_arr, machine_cfg, c)
        fitted_t = fit_temperature(logits[hist_idx], table.labels_arr[hist_idx], CalibrationConfig())
        calibrated = softmax(logits / fitted_t)

        # Shared uniforms couple human draws across noise rates; the log's
        # practitioner population draws independently of the deployed user.
        log_rng = np.random.default_rng(derive_seed("human-log", seed))
        u_log = log_rng.random(len(table.refs))
        v_log = log_rng.random(len(table.refs))
        human_rng = np.random.default_rng(derive_seed("human", seed))
        u = human_rng.random(len(table.refs))
        v = human_rng.random(len(table.refs))

        hist_rates = prototype_noise_rates(historical_noise_rate, true_prototype_count, corpus.noise_spread)
        hist_matrices = [confusion_from_noise(float(r), c, noise_model) for r in hist_rates]
        human_log = labels_from_confusions(table.labels_arr, table.prototypes_arr, hist_matrices, u_log, v_log)
        log = DecisionLog(
            dimension=next(iter(corpus.embeddings.values())).size,
            category_set=cats,
            records=tuple(
                DecisionRecord(
                    table.refs[i], corpus.embeddings[table.refs[i]], int(human_log[i]), calibrated[i]
                )
                for i in hist_idx
            ),
        )

        eval_embeddings = {table.refs[i]: corpus.embeddings[table.refs[i]] for i in eval_idx}
        hist_truth_lookup = {
            table.refs[i]: hist_matrices[table.prototypes_arr[i]] for i in eval_idx
        }

        models: dict[tuple[int, int], tuple[PrototypeModel, Optional[PrototypeModel]]] = {}
        for p_count in grid.prototype_counts:
            for iters in grid.em_iteration_counts:
                em_cfg = ProtoEmConfig(
                    prototypes=p_count,
                    em_iterations=iters,
                    alpha=em_alpha,
                    init_epsilon=em_epsilon,
                    seed=derive_seed("em", seed, p_count, iters),
                    convergence_tol=em_convergence_tol,
                )
                proto_model = run_protoem(log, em_cfg)
                naive_model = run_naive_em(log, em_cfg) if "naive-em" in variants else None
                models[(p_count, iters)] = (proto_model, naive_model)

        for noise, p_count, iters in grid.cells():
            proto_model, naive_model = models[(p_count, iters)]
            rates = prototype_noise_rates(noise, true_prototype_count, corpus.noise_spread)
            deploy_matrices = [confusion_from_noise(float(r), c, noise_model) for r in rates]
            human = labels_from_confusions(table.labels_arr, table.prototypes_arr, deploy_matrices, u, v)

            posteriors = _variant_posteriors(
                variants, table, eval_idx, human, calibrated, proto_model, naive_model, corpus, cats
            )

            for variant in variants:
                post = posteriors[variant]
                predicted = np.argmax(post, axis=1)
                key_metrics = metrics(predicted, table.labels_arr[eval_idx])
                rel_metrics = _relation_metrics(
                    eval_pairs, table, eval_idx, post, corpus, scorer
                )
                # Frobenius error scores the estimator against its own
                # target: the log population's true matrices.
                if variant == "co-match" and corpus.sentence_prototypes is not None:
                    frob = frobenius_error(proto_model, hist_truth_lookup, eval_embeddings)
                elif variant == "naive-em" and corpus.sentence_prototypes is not None and naive_model is not None:
                    frob = frobenius_error(naive_model, hist_truth_lookup, eval_embeddings)
                else:
                    frob = None
                results.append(
                    CellResult(
                        noise_rate=noise,
                        prototypes=p_count,
                        em_iterations=iters,
                        seed=int(seed),
                        variant=variant,
                        key=key_metrics,
                        relation=rel_metrics,
                        frobenius=frob,
                        fitted_temperature=fitted_t,
                    )
                )

    config = {
        "grid": {
            "noise_rates": list(grid.noise_rates),
            "prototype_counts": list(grid.prototype_counts),
            "em_iteration_counts": list(grid.em_iteration_counts),
        },
        "seeds": [int(s) for s in seeds],
        "variants": list(variants),
        "noise_model": noise_model,
        "noise_spread": list(corpus.noise_spread),
        "machine": corpus.machine.to_dict(),
        "categories": cats.to_dict(),
        "pairs": len(corpus.pairs),
        "em_alpha": em_alpha,
        "em_epsilon": em_epsilon,
        "em_convergence_tol": em_convergence_tol,
        "historical_noise_rate": historical_noise_rate,
        "relation_count": corpus.relation_count,
        "relation_thresholds": list(corpus.relation_thresholds),
    }
    return ExperimentReport(results=tuple(results), config=config)


def _variant_posteriors(
    variants, table, eval_idx, human, calibrated, proto_model, naive_model, corpus, cats
) -> dict[str, np.ndarray]:
    """Posterior matrix (n_eval, C) per variant, rows in eval_idx order."""
    c = cats.count
    out: dict[str, np.ndarray] = {}
    machine_argmax = np.argmax(calibrated[eval_idx], axis=1)
    human_eval = human[eval_idx]

    if "machine-only" in variants:
        out["machine-only"] = calibrated[eval_idx]
    if "human-only" in variants:
        out["human-only"] = np.eye(c)[human_eval]
    if "intersection" in variants:
        labels = np.asarray(
            [combine_intersection(int(m), int(h)) for m, h in zip(machine_argmax, human_eval)]
        )
        out["intersection"] = np.eye(c)[labels]
    if "union" in variants:
        labels = np.asarray(
            [combine_union(int(m), int(h), cats) for m, h in zip(machine_argmax, human_eval)]
        )
        out["union"] = np.eye(c)[labels]
    for variant, model in (("co-match", proto_model), ("naive-em", naive_model)):
        if variant not in variants or model is None:
            continue
        vectors = np.asarray([corpus.embeddings[table.refs[i]] for i in eval_idx])
        out[variant] = batch_fuse(vectors, human_eval, calibrated[eval_idx], model)
    return out


def batch_fuse(vectors: np.ndarray, human: np.ndarray, machine: np.ndarray, model: PrototypeModel) -> np.ndarray:
    """Vectorized nearest-prototype fusion; same arithmetic as fusion.fuse."""
    assigned = nearest_prototypes(vectors, model.centroids)
    phi_rows = np.asarray(
        [model.confusions[j].entries[h] for j, h in zip(assigned, human)]
    )
    weighted = phi_rows * machine
    denom = weighted.sum(axis=1)
    degenerate = denom < 1e-12
    return np.where(degenerate[:, None], machine, weighted / np.where(degenerate, 1.0, denom)[:, None])


def nearest_prototypes(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Chunked batch version of prototypes.assign_nearest (zero vectors map
    to prototype 0)."""
    n = vectors.shape[0]
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, 2048):
        stop = min(start + 2048, n)
        diff = vectors[start:stop, None, :] - centroids[None, :, :]
        out[start:stop] = np.argmin(np.sum(diff * diff, axis=2), axis=1)
    out[~np.any(vectors, axis=1)] = 0
    return out


def _relation_metrics(eval_pairs, table, eval_idx, posteriors, corpus, scorer) -> Metrics:
    """Relation metrics from the variant's selected key sentences.

    Selections are hardened to the argmax label before matching: the
    matcher consumes chosen key sentences, and the ground-truth relations
    were derived from one-hot selections the same way.
    """
    row_of = {int(i): row for row, i in enumerate(eval_idx)}
    c = posteriors.shape[1]
    hardened = np.eye(c)[np.argmax(posteriors, axis=1)]
    predicted, truth = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        for pair in eval_pairs:
            fused_by_doc = []
            for doc in (pair.source, pair.target):
                fused_by_doc.append(
                    [
                        FusedDecision(s.ref, hardened[row_of[table.index_of[s.ref]]])
                        for s in doc.sentences
                    ]
                )
            relation, _ = scorer(
                pair,
                fused_by_doc[0],
                fused_by_doc[1],
                corpus.embeddings,
                relation_count=corpus.relation_count,
                thresholds=corpus.relation_thresholds,
            )
            predicted.append(relation)
            truth.append(pair.true_relation)
    return metrics(predicted, truth)

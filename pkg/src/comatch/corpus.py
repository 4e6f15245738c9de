"""Corpus and decision-log file formats, plus a seeded synthetic generator.

Corpora are JSON Lines, one case pair per line. Decision logs are a header
line (dimension + category names) followed by one record per line. The
synthetic generator draws sentence embeddings from well-separated Gaussian
bumps (one per prototype), assigns true labels from per-prototype class
priors, samples human labels from per-prototype confusion matrices (so the
conditional independence of human and machine given the truth holds by
construction), simulates calibrated machine decisions, and derives pair
relations by running the reference matcher on the ground-truth key
sentences with pinned thresholds.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataValidationError, DegenerateDataWarning, FormatError
from .fusion import CalibrationConfig, fit_temperature, softmax
from .matcher import match_pair
from .model import (
    CasePair,
    CategorySet,
    ConfusionMatrix,
    DecisionLog,
    DecisionRecord,
    Document,
    FusedDecision,
    SentenceRef,
    Sentence,
)
from .simulation import (
    ExperimentCorpus,
    MachineSimConfig,
    confusion_from_noise,
    derive_seed,
    labels_from_confusions,
    machine_probabilities,
    prototype_noise_rates,
)

# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


def save_corpus(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_dict()) + "\n")


def load_corpus(path) -> list[CasePair]:
    pairs: list[CasePair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "source" not in obj or "target" not in obj:
                raise FormatError(f"{path}: line {lineno}: pair must have 'source' and 'target'")
            for side in ("source", "target"):
                if "sentences" not in obj[side]:
                    raise FormatError(f"{path}: line {lineno}: {side} is missing 'sentences'")
            try:
                pairs.append(CasePair.from_dict(obj))
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}: line {lineno}: malformed pair ({exc})") from exc
            except DataValidationError as exc:
                raise DataValidationError(f"{path}: line {lineno}: {exc}") from exc
    if not pairs:
        warnings.warn(f"{path}: empty corpus", DegenerateDataWarning, stacklevel=2)
    return pairs


def save_decision_log(log: DecisionLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "dimension": log.dimension,
            "categories": list(log.category_set.names),
            "importance_rank": list(log.category_set.importance_rank),
        }
        fh.write(json.dumps(header) + "\n")
        for record in log.records:
            fh.write(json.dumps(record.to_dict()) + "\n")


def load_decision_log(path) -> DecisionLog:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    header = None
    records: list[DecisionRecord] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
        if header is None:
            if "dimension" not in obj or "categories" not in obj:
                raise FormatError(f"{path}: line {lineno}: header must declare 'dimension' and 'categories'")
            header = obj
            continue
        try:
            record = DecisionRecord.from_dict(obj)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: line {lineno}: malformed record ({exc})") from exc
        except DataValidationError as exc:
            raise DataValidationError(f"{path}: line {lineno}: {exc}") from exc
        if record.embedding.size != header["dimension"]:
            raise FormatError(
                f"{path}: line {lineno}: embedding dimension {record.embedding.size} != declared {header['dimension']}"
            )
        records.append(record)
    if header is None:
        raise FormatError(f"{path}: missing decision-log header line")
    cats = CategorySet(tuple(header["categories"]), tuple(header.get("importance_rank") or ()))
    return DecisionLog(dimension=header["dimension"], category_set=cats, records=tuple(records))


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

ELAM_LIKE_NAMES = ("not_key", "crime_element", "dispute_focus", "evidence_point")
ECAIL_LIKE_NAMES = ("not_key", "key")

# Topic vocabulary per prototype for the text-backed embedding mode: shared
# n-grams pull same-prototype sentences together under feature hashing.
_PROTO_TOPICS = (
    "financial fraud ledger transaction audit",
    "property boundary easement survey deed",
    "employment dismissal severance contract notice",
    "negligence liability damages causation duty",
    "custody guardianship welfare placement visitation",
    "patent infringement claim scope invention",
)

_PHRASES = {
    "not_key": (
        "The hearing was adjourned until the following week",
        "Counsel confirmed receipt of the filing",
        "The clerk recorded the appearances of the parties",
        "Procedural formalities were completed without objection",
        "The session opened at the scheduled time",
    ),
    "key_a": (
        "The defendant knowingly transferred the disputed funds",
        "The act satisfied every statutory element of the offence",
        "Intent was established through the recovered correspondence",
        "The conduct meets the threshold for criminal liability",
        "The accused orchestrated the scheme over several months",
    ),
    "key_b": (
        "The parties dispute whether the contract clause applies",
        "The core disagreement concerns the valuation method",
        "Liability allocation remains the central contested issue",
        "The parties contest the timeline of the alleged breach",
        "Whether notice was properly served is in dispute",
    ),
    "key_c": (
        "Bank statements corroborate the claimed transfers",
        "The forensic report identified the signature as genuine",
        "Witness testimony places the defendant at the scene",
        "The audit trail documents each transaction in question",
        "Expert analysis confirmed the document's date",
    ),
    "filler": ("moreover", "in the record", "as noted", "per the file", "on review"),
}


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape of a synthetic corpus; defaults mirror a 4-label dataset."""

    categories: CategorySet = field(default_factory=lambda: CategorySet(ELAM_LIKE_NAMES))
    prototypes: int = 4
    dimension: int = 16
    pairs: int = 200
    historical_docs: int = 200
    sentences_per_doc: int = 12
    separation: float = 10.0
    bump_sigma: float = 1.0
    base_noise: float = 0.1
    noise_profile: str = "drop_to_notkey"
    noise_spread: tuple[float, float] = (0.25, 1.75)
    human_noise: tuple[float, ...] = ()
    true_matrices: tuple[ConfusionMatrix, ...] = ()
    machine: MachineSimConfig = field(default_factory=lambda: MachineSimConfig(target_accuracy=0.75))
    doc_mixture_concentration: float = 0.6
    relation_count: int = 3
    relation_thresholds: tuple[float, ...] = (0.45, 0.7)
    embedding_mode: str = "bumps"

    def __post_init__(self):
        if self.categories.count not in (2, 4):
            raise ConfigError("synthetic corpora support 2 or 4 categories")
        if self.embedding_mode not in ("bumps", "text"):
            raise ConfigError("embedding_mode must be 'bumps' or 'text'")
        if self.prototypes < 1:
            raise ConfigError("prototypes must be >= 1")
        if self.pairs < 1 or self.historical_docs < 1 or self.sentences_per_doc < 1:
            raise ConfigError("pairs, historical_docs and sentences_per_doc must be positive")
        if self.human_noise and len(self.human_noise) != self.prototypes:
            raise ConfigError("human_noise must list one rate per prototype")
        if self.true_matrices and len(self.true_matrices) != self.prototypes:
            raise ConfigError("true_matrices must list one matrix per prototype")
        object.__setattr__(self, "human_noise", tuple(self.human_noise))
        object.__setattr__(self, "true_matrices", tuple(self.true_matrices))
        object.__setattr__(self, "noise_spread", tuple(self.noise_spread))
        object.__setattr__(self, "relation_thresholds", tuple(self.relation_thresholds))

    def to_dict(self) -> dict:
        return {
            "categories": self.categories.to_dict(),
            "prototypes": self.prototypes,
            "dimension": self.dimension,
            "pairs": self.pairs,
            "historical_docs": self.historical_docs,
            "sentences_per_doc": self.sentences_per_doc,
            "separation": self.separation,
            "bump_sigma": self.bump_sigma,
            "base_noise": self.base_noise,
            "noise_profile": self.noise_profile,
            "noise_spread": list(self.noise_spread),
            "human_noise": list(self.human_noise),
            "machine": self.machine.to_dict(),
            "doc_mixture_concentration": self.doc_mixture_concentration,
            "relation_count": self.relation_count,
            "relation_thresholds": list(self.relation_thresholds),
            "embedding_mode": self.embedding_mode,
        }


def elam_like(**overrides) -> GeneratorSpec:
    """Four sentence-label categories, four prototypes."""
    return GeneratorSpec(**{"categories": CategorySet(ELAM_LIKE_NAMES), "prototypes": 4, **overrides})


def ecail_like(**overrides) -> GeneratorSpec:
    """Two sentence-label categories (key / not key)."""
    return GeneratorSpec(**{"categories": CategorySet(ECAIL_LIKE_NAMES), "prototypes": 4, **overrides})


PRESETS = {"elam-like": elam_like, "ecail-like": ecail_like}


@dataclass(frozen=True)
class SyntheticData:
    pairs: tuple[CasePair, ...]
    log: DecisionLog
    true_matrices: tuple[ConfusionMatrix, ...]
    embeddings: dict[SentenceRef, np.ndarray]
    sentence_prototypes: dict[SentenceRef, int]
    categories: CategorySet
    spec: GeneratorSpec
    seed: int
    fitted_temperature: float
    bump_means: np.ndarray
    priors: np.ndarray

    def experiment_corpus(self) -> ExperimentCorpus:
        return ExperimentCorpus(
            pairs=self.pairs,
            embeddings=self.embeddings,
            categories=self.categories,
            machine=self.spec.machine,
            sentence_prototypes=self.sentence_prototypes,
            relation_count=self.spec.relation_count,
            relation_thresholds=self.spec.relation_thresholds,
            noise_spread=self.spec.noise_spread,
        )


def _phrase_pools(categories: CategorySet) -> list[tuple[str, ...]]:
    pools = [_PHRASES["not_key"]]
    for key_pool in ("key_a", "key_b", "key_c"):
        if len(pools) >= categories.count:
            break
        pools.append(_PHRASES[key_pool])
    while len(pools) < categories.count:
        pools.append(_PHRASES["key_a"])
    return pools


def _sentence_text(rng, pools, label: int, prototype: int) -> str:
    phrase = pools[label][int(rng.integers(len(pools[label])))]
    filler = _PHRASES["filler"][int(rng.integers(len(_PHRASES["filler"])))]
    topic = _PROTO_TOPICS[prototype % len(_PROTO_TOPICS)]
    return f"{phrase}, {filler} ({topic})."


def _make_doc(doc_id, rng, spec, pools, means, priors, out):
    """Draw one document; record labels, prototypes and embeddings."""
    theta = rng.dirichlet(np.full(spec.prototypes, spec.doc_mixture_concentration))
    sentences = []
    for i in range(spec.sentences_per_doc):
        z = int(rng.choice(spec.prototypes, p=theta))
        y = int(rng.choice(spec.categories.count, p=priors[z]))
        vec = means[z] + spec.bump_sigma * rng.standard_normal(spec.dimension)
        ref = SentenceRef(doc_id, i)
        out["prototype"][ref] = z
        out["embedding"][ref] = vec
        out["labels"].append(y)
        out["refs"].append(ref)
        sentences.append(
            Sentence(doc_id=doc_id, index=i, text=_sentence_text(rng, pools, y, z), true_label=y)
        )
    return Document(doc_id=doc_id, sentences=tuple(sentences))


def gen_synthetic(spec: GeneratorSpec, seed: int) -> SyntheticData:
    """Generate (labeled corpus, true confusion matrices, decision log)."""
    cats = spec.categories
    c = cats.count
    p = spec.prototypes
    rng_means = np.random.default_rng(derive_seed("means", seed))
    means = spec.separation * _unit_rows(rng_means.standard_normal((p, spec.dimension)))
    if p > 1:
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt(np.sum(diffs * diffs, axis=2))
        min_dist = float(dist[np.triu_indices(p, 1)].min())
        if min_dist < 3.0 * spec.bump_sigma:
            warnings.warn(
                f"prototype bumps overlap (min distance {min_dist:.3f} < 3 sigma); recovery guarantees void",
                DegenerateDataWarning,
                stacklevel=2,
            )

    # Mild prototype-specific tilt around uniform: strong class imbalance would
    # break the machine simulator's calibration and bias the EM estimates.
    rng_priors = np.random.default_rng(derive_seed("priors", seed))
    priors = 0.2 * rng_priors.dirichlet(np.full(c, 2.0), size=p) + 0.8 / c

    if spec.true_matrices:
        true_matrices = spec.true_matrices
    else:
        rates = (
            np.asarray(spec.human_noise)
            if spec.human_noise
            else prototype_noise_rates(spec.base_noise, p, spec.noise_spread)
        )
        true_matrices = tuple(confusion_from_noise(float(r), c, spec.noise_profile) for r in rates)

    pools = _phrase_pools(cats)
    state = {"prototype": {}, "embedding": {}, "labels": [], "refs": []}

    rng_hist = np.random.default_rng(derive_seed("hist", seed))
    hist_docs = [
        _make_doc(f"hist-{t:05d}", rng_hist, spec, pools, means, priors, state)
        for t in range(spec.historical_docs)
    ]
    n_hist = len(state["refs"])

    rng_eval = np.random.default_rng(derive_seed("eval", seed))
    raw_pairs = []
    for t in range(spec.pairs):
        source = _make_doc(f"case-{t:05d}-a", rng_eval, spec, pools, means, priors, state)
        target = _make_doc(f"case-{t:05d}-b", rng_eval, spec, pools, means, priors, state)
        raw_pairs.append((source, target))

    labels = np.asarray(state["labels"], dtype=np.int64)
    refs = state["refs"]
    prototypes_arr = np.asarray([state["prototype"][r] for r in refs], dtype=np.int64)

    if spec.embedding_mode == "text":
        # Text-backed mode: embed the generated sentences with the built-in
        # embedder instead of drawing from the bumps. Context windows are
        # disabled so prototype vocabulary stays sentence-local.
        from .embedding import EmbeddingConfig, embed_corpus

        cfg = EmbeddingConfig(dimension=spec.dimension, context_window=0, seed=derive_seed("text-emb", seed))
        docs = hist_docs + [d for pair in raw_pairs for d in pair]
        state["embedding"] = embed_corpus(docs, cfg)

    # Human labels for the historical log, drawn from the true matrices.
    rng_human = np.random.default_rng(derive_seed("human", seed))
    u = rng_human.random(n_hist)
    v = rng_human.random(n_hist)
    human_hist = labels_from_confusions(labels[:n_hist], prototypes_arr[:n_hist], true_matrices, u, v)

    # Machine probabilities for the historical log, calibrated before use.
    machine_cfg = replace(spec.machine, seed=derive_seed("machine", spec.machine.seed, seed))
    hist_probs = machine_probabilities(labels[:n_hist], machine_cfg, c)
    hist_logits = machine_cfg.overconfidence_scale * np.log(np.clip(hist_probs, 1e-300, None))
    # Tiny logs cannot support a temperature fit; leave them uncalibrated.
    fitted_t = fit_temperature(hist_logits, labels[:n_hist], CalibrationConfig()) if n_hist >= 10 else 1.0
    calibrated_hist = softmax(hist_logits / fitted_t)

    log = DecisionLog(
        dimension=spec.dimension,
        category_set=cats,
        records=tuple(
            DecisionRecord(refs[i], state["embedding"][refs[i]], int(human_hist[i]), calibrated_hist[i])
            for i in range(n_hist)
        ),
    )

    # True relations come from the matcher applied to ground-truth key sentences.
    eye = np.eye(c)
    pairs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDataWarning)
        for source, target in raw_pairs:
            fused_s = [FusedDecision(s.ref, eye[s.true_label]) for s in source.sentences]
            fused_t = [FusedDecision(s.ref, eye[s.true_label]) for s in target.sentences]
            relation, _ = match_pair(
                CasePair(source, target),
                fused_s,
                fused_t,
                state["embedding"],
                relation_count=spec.relation_count,
                thresholds=spec.relation_thresholds,
            )
            pairs.append(CasePair(source, target, true_relation=relation))

    return SyntheticData(
        pairs=tuple(pairs),
        log=log,
        true_matrices=true_matrices,
        embeddings=dict(state["embedding"]),
        sentence_prototypes=dict(state["prototype"]),
        categories=cats,
        spec=spec,
        seed=seed,
        fitted_temperature=fitted_t,
        bump_means=means,
        priors=priors,
    )


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(m * m, axis=1, keepdims=True))
    return m / norms


# ---------------------------------------------------------------------------
# Generator truth file
# ---------------------------------------------------------------------------


def save_truth(data: SyntheticData, path) -> None:
    payload = {
        "seed": data.seed,
        "categories": data.categories.to_dict(),
        "matrices": [m.to_list() for m in data.true_matrices],
        "bump_means": [[float(x) for x in row] for row in data.bump_means],
        "priors": [[float(x) for x in row] for row in data.priors],
        "fitted_temperature": data.fitted_temperature,
        "sentence_prototypes": [
            {"doc_id": ref.doc_id, "index": ref.index, "prototype": proto}
            for ref, proto in sorted(data.sentence_prototypes.items())
        ],
        "spec": data.spec.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


@dataclass(frozen=True)
class TruthFile:
    categories: CategorySet
    matrices: tuple[ConfusionMatrix, ...]
    sentence_prototypes: dict[SentenceRef, int]
    machine: MachineSimConfig
    noise_spread: tuple[float, float]
    relation_count: int
    relation_thresholds: tuple[float, ...]
    fitted_temperature: float

    def experiment_corpus(self, pairs, embeddings) -> ExperimentCorpus:
        return ExperimentCorpus(
            pairs=tuple(pairs),
            embeddings=embeddings,
            categories=self.categories,
            machine=self.machine,
            sentence_prototypes=self.sentence_prototypes,
            relation_count=self.relation_count,
            relation_thresholds=self.relation_thresholds,
            noise_spread=self.noise_spread,
        )


def load_truth(path) -> TruthFile:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid truth JSON ({exc.msg})") from exc
    try:
        spec = payload["spec"]
        return TruthFile(
            categories=CategorySet.from_dict(payload["categories"]),
            matrices=tuple(ConfusionMatrix.from_list(m) for m in payload["matrices"]),
            sentence_prototypes={
                SentenceRef(row["doc_id"], row["index"]): row["prototype"]
                for row in payload["sentence_prototypes"]
            },
            machine=MachineSimConfig.from_dict(spec["machine"]),
            noise_spread=tuple(spec["noise_spread"]),
            relation_count=spec["relation_count"],
            relation_thresholds=tuple(spec["relation_thresholds"]),
            fitted_temperature=payload["fitted_temperature"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed truth file ({exc})") from exc

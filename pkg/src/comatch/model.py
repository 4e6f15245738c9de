"""Shared domain types: sentences, decisions, confusion matrices, prototype models.

All types are immutable after construction and safe to share across threads.
Probability vectors and confusion-matrix columns must sum to 1 within
``PROB_TOL``; constructors renormalize exact-ish inputs and reject anything
further off. ``validate`` re-checks every invariant without raising, for
callers that want a report instead of an exception.

Category index 0 is reserved for the "not key" class in every corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataValidationError

PROB_TOL = 1e-9
NOT_KEY = 0


class SentenceRef(NamedTuple):
    """Stable identity of one sentence inside a corpus."""

    doc_id: str
    index: int


def _as_prob_vector(values, name: str) -> np.ndarray:
    """Coerce to a float64 distribution, renormalizing within PROB_TOL."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DataValidationError(f"{name}: expected a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise DataValidationError(f"{name}: entries must be finite")
    if np.any(v < 0):
        raise DataValidationError(f"{name}: entries must be non-negative")
    total = float(v.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise DataValidationError(f"{name}: entries must sum to 1 (got {total!r})")
    # Skip the division when already normalized to float precision, so that
    # construct -> serialize -> construct is bit-stable.
    if abs(total - 1.0) > 1e-15:
        v = v / total
    v = v.copy() if not v.flags.owndata else v
    v.flags.writeable = False
    return v


def _freeze(values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataValidationError(f"{name}: entries must be finite")
    v = v.copy()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class CategorySet:
    """The C sentence categories, with index 0 fixed to "not key".

    ``importance_rank`` orders categories for union-style combination:
    higher rank wins a disagreement. Rank 0 always belongs to "not key".
    """

    names: tuple[str, ...]
    importance_rank: tuple[int, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        ranks = tuple(self.importance_rank) if self.importance_rank else tuple(range(len(names)))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "importance_rank", ranks)
        if len(names) < 2:
            raise DataValidationError("categories: need at least 2 categories")
        if any(not n for n in names):
            raise DataValidationError("categories: names must be non-empty")
        if len(set(names)) != len(names):
            raise DataValidationError("categories: names must be unique")
        if sorted(ranks) != list(range(len(names))):
            raise DataValidationError("categories: importance_rank must be a permutation of 0..C-1")
        if ranks[0] != 0:
            raise DataValidationError("categories: rank 0 is reserved for the not-key category")

    @property
    def count(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "importance_rank": list(self.importance_rank)}

    @classmethod
    def from_dict(cls, d: dict) -> "CategorySet":
        return cls(names=tuple(d["names"]), importance_rank=tuple(d.get("importance_rank") or ()))


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    index: int
    text: str
    true_label: Optional[int] = None

    @property
    def ref(self) -> SentenceRef:
        return SentenceRef(self.doc_id, self.index)

    def to_dict(self) -> dict:
        return {"text": self.text, "label": self.true_label}


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise DataValidationError(f"document {self.doc_id}: must contain at least one sentence")
        for i, s in enumerate(self.sentences):
            if s.index != i:
                raise DataValidationError(
                    f"document {self.doc_id}: sentence indices must be contiguous from 0 (saw {s.index} at {i})"
                )
            if s.doc_id != self.doc_id:
                raise DataValidationError(f"document {self.doc_id}: sentence {i} carries doc_id {s.doc_id!r}")

    def __len__(self) -> int:
        return len(self.sentences)

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "sentences": [s.to_dict() for s in self.sentences]}

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        doc_id = d["doc_id"]
        sentences = tuple(
            Sentence(doc_id=doc_id, index=i, text=s["text"], true_label=s.get("label"))
            for i, s in enumerate(d["sentences"])
        )
        return cls(doc_id=doc_id, sentences=sentences)


@dataclass(frozen=True)
class CasePair:
    source: Document
    target: Document
    true_relation: Optional[int] = None

    def __post_init__(self):
        if self.source.doc_id == self.target.doc_id:
            raise DataValidationError("case pair: source and target must have distinct doc_ids")

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "relation": self.true_relation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CasePair":
        return cls(
            source=Document.from_dict(d["source"]),
            target=Document.from_dict(d["target"]),
            true_relation=d.get("relation"),
        )


@dataclass(frozen=True)
class HumanDecision:
    sentence_ref: SentenceRef
    label: int

    def __post_init__(self):
        object.__setattr__(self, "sentence_ref", SentenceRef(*self.sentence_ref))
        if self.label < 0:
            raise DataValidationError("human decision: label must be non-negative")

    def to_dict(self) -> dict:
        return {"doc_id": self.sentence_ref.doc_id, "index": self.sentence_ref.index, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "HumanDecision":
        return cls(SentenceRef(d["doc_id"], d["index"]), d["label"])


@dataclass(frozen=True, eq=False)
class MachineDecision:
    sentence_ref: SentenceRef
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sentence_ref", SentenceRef(*self.sentence_ref))
        object.__setattr__(self, "probs", _as_prob_vector(self.probs, "machine probs"))

    def __eq__(self, other):
        return (
            isinstance(other, MachineDecision)
            and self.sentence_ref == other.sentence_ref
            and np.array_equal(self.probs, other.probs)
        )

    def to_dict(self) -> dict:
        return {
            "doc_id": self.sentence_ref.doc_id,
            "index": self.sentence_ref.index,
            "probs": [float(p) for p in self.probs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MachineDecision":
        return cls(SentenceRef(d["doc_id"], d["index"]), np.asarray(d["probs"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class FusedDecision:
    """Joint posterior over categories for one sentence.

    ``argmax_label`` is the lowest index attaining the maximum posterior.
    ``fallback_used`` marks the documented zero-denominator fallback where
    the posterior equals the machine distribution unchanged.
    """

    sentence_ref: SentenceRef
    posterior: np.ndarray
    argmax_label: int = field(default=-1)
    fallback_used: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sentence_ref", SentenceRef(*self.sentence_ref))
        post = _as_prob_vector(self.posterior, "posterior")
        object.__setattr__(self, "posterior", post)
        argmax = int(np.argmax(post))
        if self.argmax_label == -1:
            object.__setattr__(self, "argmax_label", argmax)
        elif self.argmax_label != argmax:
            raise DataValidationError(
                f"fused decision: argmax_label {self.argmax_label} does not match posterior argmax {argmax}"
            )

    def __eq__(self, other):
        return (
            isinstance(other, FusedDecision)
            and self.sentence_ref == other.sentence_ref
            and np.array_equal(self.posterior, other.posterior)
            and self.argmax_label == other.argmax_label
            and self.fallback_used == other.fallback_used
        )

    def to_dict(self) -> dict:
        return {
            "doc_id": self.sentence_ref.doc_id,
            "index": self.sentence_ref.index,
            "posterior": [float(p) for p in self.posterior],
            "argmax_label": self.argmax_label,
            "fallback_used": self.fallback_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusedDecision":
        return cls(
            SentenceRef(d["doc_id"], d["index"]),
            np.asarray(d["posterior"], dtype=np.float64),
            d.get("argmax_label", -1),
            d.get("fallback_used", False),
        )


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Column-stochastic C x C matrix of human response rates.

    ``entries[h, y]`` is the probability that the human answers ``h`` when
    the true category is ``y``, so every column sums to 1.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise DataValidationError("confusion matrix: expected a square CxC matrix with C >= 2")
        if not np.all(np.isfinite(m)):
            raise DataValidationError("confusion matrix: entries must be finite")
        if np.any(m < 0):
            raise DataValidationError("confusion matrix: entries must be non-negative")
        col_sums = m.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > PROB_TOL):
            bad = int(np.argmax(np.abs(col_sums - 1.0)))
            raise DataValidationError(
                f"confusion matrix: column {bad} sums to {col_sums[bad]!r}, expected 1"
            )
        # Renormalize only columns that need it (bit-stable round trips).
        m = m / np.where(np.abs(col_sums - 1.0) > 1e-15, col_sums, 1.0)
        m = m.copy() if not m.flags.owndata else m
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.entries, other.entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def likelihood_row(self, human_label: int) -> np.ndarray:
        """p(H = human_label | y = .) as a length-C vector."""
        return self.entries[human_label]

    @classmethod
    def identity(cls, c: int) -> "ConfusionMatrix":
        return cls(np.eye(c))

    @classmethod
    def uniform(cls, c: int) -> "ConfusionMatrix":
        return cls(np.full((c, c), 1.0 / c))

    def to_list(self) -> list:
        return [[float(x) for x in row] for row in self.entries]

    @classmethod
    def from_list(cls, rows: Sequence[Sequence[float]]) -> "ConfusionMatrix":
        return cls(np.asarray(rows, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class DecisionRecord:
    """One historical sentence: its embedding, the human's discrete label,
    and the machine's probability vector."""

    sentence_ref: SentenceRef
    embedding: np.ndarray
    human_label: int
    machine_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sentence_ref", SentenceRef(*self.sentence_ref))
        object.__setattr__(self, "embedding", _freeze(self.embedding, "embedding"))
        object.__setattr__(self, "machine_probs", _as_prob_vector(self.machine_probs, "machine_probs"))
        if self.human_label < 0 or self.human_label >= self.machine_probs.size:
            raise DataValidationError(
                f"decision record {self.sentence_ref}: human_label {self.human_label} out of range"
            )

    def __eq__(self, other):
        return (
            isinstance(other, DecisionRecord)
            and self.sentence_ref == other.sentence_ref
            and np.array_equal(self.embedding, other.embedding)
            and self.human_label == other.human_label
            and np.array_equal(self.machine_probs, other.machine_probs)
        )

    def to_dict(self) -> dict:
        return {
            "doc_id": self.sentence_ref.doc_id,
            "index": self.sentence_ref.index,
            "embedding": [float(x) for x in self.embedding],
            "human_label": self.human_label,
            "machine_probs": [float(p) for p in self.machine_probs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        return cls(
            SentenceRef(d["doc_id"], d["index"]),
            np.asarray(d["embedding"], dtype=np.float64),
            d["human_label"],
            np.asarray(d["machine_probs"], dtype=np.float64),
        )


@dataclass(frozen=True)
class DecisionLog:
    """Historical decision corpus used to fit prototype confusion matrices."""

    dimension: int
    category_set: CategorySet
    records: tuple[DecisionRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.dimension < 1:
            raise DataValidationError("decision log: dimension must be positive")
        c = self.category_set.count
        for r in self.records:
            if r.embedding.size != self.dimension:
                raise DataValidationError(
                    f"decision log: record {r.sentence_ref} has dimension {r.embedding.size}, expected {self.dimension}"
                )
            if r.machine_probs.size != c or r.human_label >= c:
                raise DataValidationError(
                    f"decision log: record {r.sentence_ref} does not match the {c}-category set"
                )

    def __len__(self) -> int:
        return len(self.records)

    def embedding_matrix(self) -> np.ndarray:
        return np.asarray([r.embedding for r in self.records], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class PrototypeModel:
    """P centroids in embedding space, each paired with a confusion matrix."""

    centroids: np.ndarray
    confusions: tuple[ConfusionMatrix, ...]
    config: dict

    def __post_init__(self):
        object.__setattr__(self, "centroids", _freeze(np.atleast_2d(self.centroids), "centroids"))
        object.__setattr__(self, "confusions", tuple(self.confusions))
        object.__setattr__(self, "config", dict(self.config))
        if self.centroids.shape[0] < 1:
            raise DataValidationError("prototype model: need at least one prototype")
        if self.centroids.shape[0] != len(self.confusions):
            raise DataValidationError(
                f"prototype model: {self.centroids.shape[0]} centroids but {len(self.confusions)} confusion matrices"
            )

    def __eq__(self, other):
        return (
            isinstance(other, PrototypeModel)
            and np.array_equal(self.centroids, other.centroids)
            and self.confusions == other.confusions
            and self.config == other.config
        )

    @property
    def prototype_count(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimension(self) -> int:
        return self.centroids.shape[1]

    def to_dict(self) -> dict:
        return {
            "dimension": int(self.dimension),
            "centroids": [[float(x) for x in row] for row in self.centroids],
            "confusions": [c.to_list() for c in self.confusions],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrototypeModel":
        return cls(
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            confusions=tuple(ConfusionMatrix.from_list(m) for m in d["confusions"]),
            config=d.get("config", {}),
        )


# ---------------------------------------------------------------------------
# Non-raising invariant checks
# ---------------------------------------------------------------------------


def _check_distribution(v: np.ndarray, path: str, report: list[str]):
    if np.any(v < 0):
        report.append(f"{path}: entries must be non-negative")
    total = float(v.sum())
    if abs(total - 1.0) > PROB_TOL:
        report.append(f"{path}: probs sum != 1 (got {total!r})")


def validate(obj) -> list[str]:
    """Return every violated invariant of a domain object, empty when valid.

    Never raises: objects that cannot even be constructed are reported
    through their constructor exceptions instead.
    """
    report: list[str] = []
    if isinstance(obj, CategorySet):
        # Constructor enforces everything; nothing can drift post-construction.
        pass
    elif isinstance(obj, Sentence):
        if obj.index < 0:
            report.append("sentence.index: must be non-negative")
        if obj.true_label is not None and obj.true_label < 0:
            report.append("sentence.true_label: must be non-negative")
    elif isinstance(obj, Document):
        for i, s in enumerate(obj.sentences):
            report.extend(f"document.sentences[{i}].{v}" for v in validate(s))
    elif isinstance(obj, CasePair):
        if obj.source.doc_id == obj.target.doc_id:
            report.append("pair: source and target doc_ids must differ")
        report.extend(f"pair.source.{v}" for v in validate(obj.source))
        report.extend(f"pair.target.{v}" for v in validate(obj.target))
    elif isinstance(obj, HumanDecision):
        if obj.label < 0:
            report.append("human.label: must be non-negative")
    elif isinstance(obj, MachineDecision):
        _check_distribution(obj.probs, "machine.probs", report)
    elif isinstance(obj, FusedDecision):
        _check_distribution(obj.posterior, "fused.posterior", report)
        if obj.argmax_label != int(np.argmax(obj.posterior)):
            report.append("fused.argmax_label: does not match posterior argmax")
    elif isinstance(obj, ConfusionMatrix):
        if np.any(obj.entries < 0):
            report.append("confusion.entries: must be non-negative")
        col_sums = obj.entries.sum(axis=0)
        for k, s in enumerate(col_sums):
            if abs(s - 1.0) > PROB_TOL:
                report.append(f"confusion.column[{k}]: sums to {float(s)!r}, expected 1")
    elif isinstance(obj, DecisionRecord):
        _check_distribution(obj.machine_probs, "record.machine_probs", report)
    elif isinstance(obj, DecisionLog):
        for i, r in enumerate(obj.records):
            if r.embedding.size != obj.dimension:
                report.append(f"log.records[{i}]: dimension {r.embedding.size} != {obj.dimension}")
            report.extend(f"log.records[{i}].{v}" for v in validate(r))
    elif isinstance(obj, PrototypeModel):
        if obj.centroids.shape[0] != len(obj.confusions):
            report.append("model: centroid count != confusion count")
        for j, c in enumerate(obj.confusions):
            report.extend(f"model.confusions[{j}].{v}" for v in validate(c))
    else:
        report.append(f"unknown domain type: {type(obj).__name__}")
    return report


def validate_raw_distribution(values, path: str = "probs") -> list[str]:
    """Invariant report for a raw probability vector that may not construct."""
    report: list[str] = []
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        return [f"{path}: expected a non-empty 1-d vector"]
    if not np.all(np.isfinite(v)):
        return [f"{path}: entries must be finite"]
    _check_distribution(v, path, report)
    return report

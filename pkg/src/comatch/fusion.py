"""Machine calibration and human-machine decision fusion.

The joint posterior over categories multiplies the machine's probability
vector elementwise with the human-response likelihood row of the confusion
matrix and renormalizes:

    posterior[j] = phi[h, j] * m[j] / sum_q phi[h, q] * m[q]

A denominator below 1e-12 means the human label and machine distribution
are mutually exclusive under phi; the documented fallback returns the
machine distribution unchanged with ``fallback_used`` set.

Machine probabilities are assumed calibrated before fusion; temperature
scaling (softmax of logits divided by a fitted scalar) is provided for
that, with the scalar chosen by golden-section search on mean NLL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompletenessError, ConfigError, InsufficientDataError, NumericError
from .model import (
    ConfusionMatrix,
    Document,
    FusedDecision,
    HumanDecision,
    MachineDecision,
    PrototypeModel,
    SentenceRef,
)
from .prototypes import assign_nearest

FUSE_DENOMINATOR_FLOOR = 1e-12
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CalibrationConfig:
    temperature: float = 1.0
    fit_bounds: tuple[float, float] = (0.05, 10.0)
    fit_tolerance: float = 1e-4

    def __post_init__(self):
        lo, hi = self.fit_bounds
        if not (0.0 < lo < hi):
            raise ConfigError("fit_bounds must satisfy 0 < low < high")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def apply_temperature(logits, temperature: float) -> np.ndarray:
    """softmax(logits / temperature); a valid distribution for any T > 0."""
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    z = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(z) | (z == -np.inf)  # -inf encodes an exact zero prob
    if not np.all(finite):
        raise NumericError("logits must be finite (or -inf for zero-probability classes)")
    return softmax(z / temperature)


def nll_at_temperature(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Mean negative log-likelihood of labels under temperature-scaled logits."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    return float(np.mean(log_norm - picked))


def fit_temperature(logits, labels, cfg: CalibrationConfig = CalibrationConfig()) -> float:
    """Temperature minimizing mean NLL, by golden-section search over
    cfg.fit_bounds to cfg.fit_tolerance.

    T = 1 always competes as a candidate, so the returned temperature
    never scores worse than the uncalibrated logits on the fitting set.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise ConfigError("logits must be (N, C) with one label per row")
    if z.shape[0] < 10:
        raise InsufficientDataError(f"temperature fitting needs at least 10 labeled examples, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise NumericError("logits must be finite for temperature fitting")

    lo, hi = cfg.fit_bounds
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = nll_at_temperature(z, y, x1)
    f2 = nll_at_temperature(z, y, x2)
    while b - a > cfg.fit_tolerance:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = nll_at_temperature(z, y, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = nll_at_temperature(z, y, x2)
    best = 0.5 * (a + b)
    if lo <= 1.0 <= hi and nll_at_temperature(z, y, 1.0) <= nll_at_temperature(z, y, best):
        return 1.0
    return float(best)


def fuse(machine: MachineDecision, human: HumanDecision, phi: ConfusionMatrix) -> FusedDecision:
    """Closed-form joint posterior for one sentence."""
    c = phi.size
    if machine.probs.size != c:
        raise ConfigError(f"machine probs have {machine.probs.size} categories, confusion matrix has {c}")
    if human.label >= c:
        raise ConfigError(f"human label {human.label} out of range for {c} categories")
    weighted = phi.likelihood_row(human.label) * machine.probs
    denom = float(weighted.sum())
    if denom < FUSE_DENOMINATOR_FLOOR:
        return FusedDecision(machine.sentence_ref, machine.probs.copy(), fallback_used=True)
    return FusedDecision(machine.sentence_ref, weighted / denom)


def fuse_document(
    doc: Document,
    machine_decisions: list[MachineDecision],
    human_decisions: list[HumanDecision],
    model: PrototypeModel,
    embeddings: dict[SentenceRef, np.ndarray],
) -> list[FusedDecision]:
    """Fuse every sentence of a document through its nearest prototype's
    confusion matrix."""
    machine_by_ref = {m.sentence_ref: m for m in machine_decisions}
    human_by_ref = {h.sentence_ref: h for h in human_decisions}
    fused = []
    for sentence in doc.sentences:
        ref = sentence.ref
        if ref not in machine_by_ref:
            raise CompletenessError(f"missing machine decision for {ref}")
        if ref not in human_by_ref:
            raise CompletenessError(f"missing human decision for {ref}")
        if ref not in embeddings:
            raise CompletenessError(f"missing embedding for {ref}")
        j = assign_nearest(embeddings[ref], model.centroids)
        fused.append(fuse(machine_by_ref[ref], human_by_ref[ref], model.confusions[j]))
    return fused

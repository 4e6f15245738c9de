"""Per-prototype confusion-matrix estimation from an unlabeled decision log.

Records are clustered by embedding into prototypes; each prototype then
runs its own EM loop with no ground truth. The E-step fuses each record's
human label and machine distribution under the current matrix to get a
posterior over the true category; the M-step re-estimates the matrix from
expected counts:

    N[q, k] = sum_i 1[H_i = q] * posterior_i[k]
    phi[q, k] = (N[q, k] + alpha) / (sum_q' N[q', k] + C * alpha)

which is the unique column-stochastic maximizer of the EM surrogate
``sum_i sum_k posterior_i[k] * log phi[H_i, k]`` when alpha = 0. Matrices
start at (1 - eps) * I + eps/C * J: near-identity, encoding that humans
are noisy but better than chance, which also breaks the label-permutation
symmetry of EM toward the identity labeling.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateDataWarning, InsufficientDataError, NumericError
from .model import ConfusionMatrix, DecisionLog, DecisionRecord, PrototypeModel
from .prototypes import kmeans_fit

_FALLBACK_FLOOR = 1e-12


@dataclass(frozen=True)
class ProtoEmConfig:
    prototypes: int = 4
    em_iterations: int = 40
    alpha: float = 1.0
    init_epsilon: float = 0.2
    seed: int = 0
    convergence_tol: float = 1e-7

    def __post_init__(self):
        if self.prototypes < 1:
            raise ConfigError("prototypes must be >= 1")
        if self.em_iterations < 0:
            raise ConfigError("em_iterations must be >= 0")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be non-negative")
        if not (0.0 <= self.init_epsilon < 1.0):
            raise ConfigError("init_epsilon must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "prototypes": self.prototypes,
            "em_iterations": self.em_iterations,
            "alpha": self.alpha,
            "init_epsilon": self.init_epsilon,
            "seed": self.seed,
            "convergence_tol": self.convergence_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtoEmConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def initial_matrix(c: int, epsilon: float) -> ConfusionMatrix:
    """(1 - eps) * identity + eps/C * all-ones."""
    return ConfusionMatrix((1.0 - epsilon) * np.eye(c) + (epsilon / c) * np.ones((c, c)))


def _stack(records: list[DecisionRecord]) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray([r.human_label for r in records], dtype=np.int64)
    probs = np.asarray([r.machine_probs for r in records], dtype=np.float64)
    return labels, probs


def e_step(records: list[DecisionRecord], phi: ConfusionMatrix) -> np.ndarray:
    """Per-record posterior over the true category, (N, C).

    Identical arithmetic (and zero-denominator fallback) to ``fusion.fuse``,
    vectorized over the record batch.
    """
    labels, probs = _stack(records)
    weighted = phi.entries[labels] * probs
    denom = weighted.sum(axis=1)
    degenerate = denom < _FALLBACK_FLOOR
    posteriors = np.where(degenerate[:, None], probs, weighted / np.where(degenerate, 1.0, denom)[:, None])
    return posteriors


def m_step(records: list[DecisionRecord], posteriors: np.ndarray, alpha: float) -> ConfusionMatrix:
    """Smoothed expected-count update; column-stochastic by construction."""
    labels, probs = _stack(records)
    if posteriors.shape[0] != labels.shape[0]:
        raise ConfigError("need exactly one posterior per record")
    c = probs.shape[1]
    counts = np.zeros((c, c), dtype=np.float64)
    np.add.at(counts, labels, posteriors)
    col_totals = counts.sum(axis=0)
    if alpha == 0.0 and np.any(col_totals == 0.0):
        bad = int(np.argmin(col_totals))
        raise NumericError(f"column {bad} has zero expected count and alpha=0; increase alpha")
    return ConfusionMatrix((counts + alpha) / (col_totals + c * alpha))


def expected_log_likelihood(records: list[DecisionRecord], posteriors: np.ndarray, phi: ConfusionMatrix) -> float:
    """EM surrogate sum_i sum_k posterior_i[k] * log phi[H_i, k].

    Terms with zero posterior mass contribute 0; a zero matrix entry under
    positive mass is a numeric error (only reachable with alpha = 0).
    """
    labels, _ = _stack(records)
    rows = phi.entries[labels]
    mask = posteriors > 0.0
    if np.any(rows[mask] == 0.0):
        raise NumericError("log(0) reached: zero confusion entry under positive posterior mass")
    out = np.zeros_like(posteriors)
    out[mask] = posteriors[mask] * np.log(rows[mask])
    return float(out.sum())


def _run_em(
    records: list[DecisionRecord],
    c: int,
    cfg: ProtoEmConfig,
    prototype_index: int,
    trace: list[dict] | None,
) -> ConfusionMatrix:
    phi = initial_matrix(c, cfg.init_epsilon)
    for iteration in range(cfg.em_iterations):
        posteriors = e_step(records, phi)
        phi_next = m_step(records, posteriors, cfg.alpha)
        max_delta = float(np.max(np.abs(phi_next.entries - phi.entries)))
        if trace is not None:
            trace.append(
                {
                    "prototype": prototype_index,
                    "iter": iteration + 1,
                    "ell": expected_log_likelihood(records, posteriors, phi_next),
                    "max_delta": max_delta,
                }
            )
        phi = phi_next
        if cfg.convergence_tol > 0.0 and max_delta < cfg.convergence_tol:
            break
    return phi


def run_protoem(log: DecisionLog, cfg: ProtoEmConfig, trace_path=None) -> PrototypeModel:
    """Cluster the log's embeddings, then fit one confusion matrix per
    prototype on the records assigned to it."""
    c = log.category_set.count
    if len(log) < cfg.prototypes * c:
        raise InsufficientDataError(
            f"need at least prototypes*C = {cfg.prototypes * c} records, got {len(log)}"
        )
    centroids, assignments = kmeans_fit(log.embedding_matrix(), cfg.prototypes, cfg.seed)
    trace: list[dict] | None = [] if trace_path is not None else None

    confusions = []
    for j in range(cfg.prototypes):
        subset = [r for r, a in zip(log.records, assignments) if a == j]
        if len(subset) < c:
            warnings.warn(
                f"prototype {j} has only {len(subset)} records for {c} categories; "
                "estimate will lean on smoothing",
                DegenerateDataWarning,
                stacklevel=2,
            )
        if not subset:
            confusions.append(initial_matrix(c, cfg.init_epsilon))
            continue
        confusions.append(_run_em(subset, c, cfg, j, trace))

    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            for row in trace or []:
                fh.write(json.dumps(row) + "\n")

    return PrototypeModel(centroids=centroids, confusions=tuple(confusions), config=cfg.to_dict())


def run_naive_em(log: DecisionLog, cfg: ProtoEmConfig, trace_path=None) -> PrototypeModel:
    """Single global confusion matrix: the P = 1 special case."""
    return run_protoem(log, replace(cfg, prototypes=1), trace_path=trace_path)

"""Relation prediction from fused key-sentence decisions.

The reference matcher is a deterministic geometric scorer: for every key
category it compares posterior-weighted embedding centroids of the two
documents by cosine similarity, averages over categories carrying mass on
both sides, maps the result from [-1, 1] to [0, 1], and thresholds it into
a relation index. It is deliberately sensitive to key-sentence selection
quality. Real matching backbones plug in through the registry.
"""

from __future__ import annotations

import warnings
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateDataWarning
from .model import CasePair, FusedDecision, SentenceRef

DEFAULT_RELATION_COUNT = 3
DEFAULT_THRESHOLDS = (0.45, 0.7)

MatcherFn = Callable[..., tuple[int, float]]

_REGISTRY: dict[str, MatcherFn] = {}

_MASS_FLOOR = 1e-12


def register_matcher(name: str, scorer: MatcherFn) -> None:
    if name in _REGISTRY:
        raise ConfigError(f"matcher {name!r} is already registered")
    _REGISTRY[name] = scorer


def get_matcher(name: str) -> MatcherFn:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown matcher {name!r}; available: {sorted(_REGISTRY)}") from None


def available_matchers() -> list[str]:
    return sorted(_REGISTRY)


def _weighted_centroid(
    fused: list[FusedDecision], embeddings: dict[SentenceRef, np.ndarray], category: int
) -> tuple[np.ndarray | None, float]:
    mass = 0.0
    total = None
    for f in fused:
        w = float(f.posterior[category])
        if w <= 0.0:
            continue
        vec = embeddings[f.sentence_ref]
        total = w * vec if total is None else total + w * vec
        mass += w
    if total is None or mass < _MASS_FLOOR:
        return None, 0.0
    return total / mass, mass


def category_breakdown(
    fused_source: list[FusedDecision],
    fused_target: list[FusedDecision],
    embeddings: dict[SentenceRef, np.ndarray],
) -> list[dict]:
    """Per key category: posterior mass on each side and, where both sides
    carry mass, the [0, 1]-mapped cosine similarity of the weighted
    centroids."""
    c = fused_source[0].posterior.size if fused_source else 0
    rows = []
    for category in range(1, c):
        centroid_s, mass_s = _weighted_centroid(fused_source, embeddings, category)
        centroid_t, mass_t = _weighted_centroid(fused_target, embeddings, category)
        similarity = None
        if centroid_s is not None and centroid_t is not None:
            norm_s = float(np.linalg.norm(centroid_s))
            norm_t = float(np.linalg.norm(centroid_t))
            if norm_s >= _MASS_FLOOR and norm_t >= _MASS_FLOOR:
                cos = float(np.dot(centroid_s, centroid_t) / (norm_s * norm_t))
                similarity = (float(np.clip(cos, -1.0, 1.0)) + 1.0) / 2.0
        rows.append(
            {"category": category, "mass_source": mass_s, "mass_target": mass_t, "similarity": similarity}
        )
    return rows


def match_pair(
    pair: CasePair,
    fused_source: list[FusedDecision],
    fused_target: list[FusedDecision],
    embeddings: dict[SentenceRef, np.ndarray],
    relation_count: int = DEFAULT_RELATION_COUNT,
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> tuple[int, float]:
    """Score a pair in [0, 1] and threshold into a relation index.

    The relation index counts thresholds strictly below the score, so it is
    monotone non-decreasing in the score. Pairs with no shared key mass in
    any category score 0 with relation 0 and a diagnostic warning.
    """
    thresholds = tuple(thresholds)
    if len(thresholds) != relation_count - 1:
        raise ConfigError(f"need {relation_count - 1} thresholds for {relation_count} relations")
    if any(t2 <= t1 for t1, t2 in zip(thresholds, thresholds[1:])):
        raise ConfigError("thresholds must be strictly increasing")
    if len(fused_source) != len(pair.source.sentences) or len(fused_target) != len(pair.target.sentences):
        raise ConfigError("fused decisions must cover every sentence of both documents")

    similarities = [
        row["similarity"]
        for row in category_breakdown(fused_source, fused_target, embeddings)
        if row["similarity"] is not None
    ]
    if not similarities:
        warnings.warn(
            f"pair ({pair.source.doc_id}, {pair.target.doc_id}): no key-category mass on both sides",
            DegenerateDataWarning,
            stacklevel=2,
        )
        return 0, 0.0

    score = float(np.mean(similarities))
    relation = int(sum(1 for t in thresholds if t < score))
    return relation, score


register_matcher("reference", match_pair)

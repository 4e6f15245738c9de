"""Prototype clustering and nearest-prototype assignment.

Lloyd k-means with seeded farthest-point initialization. Distances use
plain broadcast arithmetic (no BLAS matmul) so results are bit-identical
regardless of thread count.
"""

from __future__ import annotations

import json
import warnings

import numpy as np

from .errors import DegenerateVectorWarning, FormatError, InsufficientDataError
from .model import PrototypeModel

_CHUNK = 2048


def _distances_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance matrix, chunked to bound memory."""
    n = points.shape[0]
    out = np.empty((n, centroids.shape[0]), dtype=np.float64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        diff = points[start:stop, None, :] - centroids[None, :, :]
        out[start:stop] = np.sum(diff * diff, axis=2)
    return out


def _farthest_point_init(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Seeded greedy init: random first centroid, then repeatedly the point
    farthest from the chosen set (ties to the lowest index)."""
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(points.shape[0]))]
    min_d = _distances_sq(points, points[chosen])[:, 0]
    while len(chosen) < k:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        d_new = _distances_sq(points, points[[nxt]])[:, 0]
        min_d = np.minimum(min_d, d_new)
    return points[chosen].copy()


def _cluster_means(points: np.ndarray, assign: np.ndarray, k: int, fallback: np.ndarray) -> np.ndarray:
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, assign, points)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    means = fallback.copy()
    nonempty = counts > 0
    means[nonempty] = sums[nonempty] / counts[nonempty, None]
    return means


def kmeans_fit(
    vectors,
    prototypes: int,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster vectors into ``prototypes`` groups.

    Returns (centroids, assignments). Deterministic under a fixed seed.
    Empty clusters are re-seeded from the point currently farthest from
    its own centroid, which keeps the Lloyd objective non-increasing.
    """
    points = np.asarray(vectors, dtype=np.float64)
    if points.ndim != 2:
        points = np.atleast_2d(points)
    n = points.shape[0]
    if prototypes < 1:
        raise InsufficientDataError("prototype count must be >= 1")
    if n < prototypes:
        raise InsufficientDataError(f"need at least {prototypes} vectors to fit {prototypes} prototypes, got {n}")

    centroids = _farthest_point_init(points, prototypes, seed)
    assign = np.argmin(_distances_sq(points, centroids), axis=1)

    for _ in range(max_iters):
        centroids_new = _cluster_means(points, assign, prototypes, centroids)

        dist = _distances_sq(points, centroids_new)
        assign_new = np.argmin(dist, axis=1)

        # Re-seed clusters that lost every point.
        counts = np.bincount(assign_new, minlength=prototypes)
        for k in np.flatnonzero(counts == 0):
            own = dist[np.arange(n), assign_new]
            far = int(np.argmax(own))
            centroids_new[k] = points[far]
            assign_new[far] = k
            dist[:, k] = _distances_sq(points, centroids_new[[k]])[:, 0]
            counts = np.bincount(assign_new, minlength=prototypes)

        shift = float(np.max(np.sqrt(np.sum((centroids_new - centroids) ** 2, axis=1))))
        converged = bool(np.array_equal(assign_new, assign))
        centroids, assign = centroids_new, assign_new
        if converged or shift < tol:
            break

    # Returned centroids are exact means of the final assignment.
    centroids = _cluster_means(points, assign, prototypes, centroids)
    return centroids, assign


def lloyd_objective(points, centroids, assign) -> float:
    """Sum of squared distances of each point to its assigned centroid."""
    points = np.asarray(points, dtype=np.float64)
    diff = points - np.asarray(centroids)[np.asarray(assign)]
    return float(np.sum(diff * diff))


def assign_nearest(vector, centroids) -> int:
    """Index of the closest centroid by Euclidean distance.

    Ties break toward the lowest index. An all-zero vector is degenerate
    and maps to index 0 with a diagnostic warning.
    """
    v = np.asarray(vector, dtype=np.float64)
    c = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    if v.ndim != 1 or v.size != c.shape[1]:
        raise ValueError(f"vector has dimension {v.size}, centroids have {c.shape[1]}")
    if not np.any(v):
        warnings.warn("all-zero embedding assigned to prototype 0", DegenerateVectorWarning, stacklevel=2)
        return 0
    diff = c - v[None, :]
    return int(np.argmin(np.sum(diff * diff, axis=1)))


def save_model(model: PrototypeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> PrototypeModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid model JSON ({exc.msg})") from exc
    try:
        return PrototypeModel.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed prototype model") from exc

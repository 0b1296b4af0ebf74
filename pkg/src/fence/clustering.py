"""K-means over node feature rows, and posterior pooling per cluster.

Nodes that behave alike should share one guidance scale; we cluster rows of
a node-affinity feature matrix (attention rows for the neural denoiser,
correlation profiles for the analytic one) and average tracked
log-posteriors within each cluster before applying the scale law.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError
from .guidance import GuidanceConfig, PosteriorTracker, guidance_scale

__all__ = [
    "default_cluster_count",
    "kmeans",
    "cluster_log_posterior",
    "cluster_scales",
]


def default_cluster_count(n_nodes: int, nodes_per_cluster: int = 20) -> int:
    return max(1, int(math.floor(n_nodes / nodes_per_cluster + 0.5)))


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (N, k) table; fine for the grid sizes we cluster (hundreds of nodes)
    diff = points[:, None, :] - centers[None, :, :]
    return np.sum(diff * diff, axis=2)


def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers by squared-distance sampling."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans(
    features: np.ndarray, k: int, seed: int, max_iter: int = 20
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from a k-means++ start; returns (labels, centers).

    Deterministic for a given seed. Stops early once labels reach a fixed
    point. Empty clusters are repaired by re-seeding them at the point
    currently farthest from its assigned center.
    """
    pts = np.asarray(features, dtype=np.float64)
    if pts.ndim != 2:
        raise InvalidInputError(f"features must be 2-D, got shape {pts.shape}")
    n = pts.shape[0]
    if not (1 <= k <= n):
        raise InvalidInputError(f"cluster count must lie in [1, {n}], got {k}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    centers = _seed_centers(pts, k, rng)

    labels = np.full(n, -1, dtype=np.int64)
    prev_sse = math.inf
    for _ in range(max_iter):
        d2 = _squared_distances(pts, centers)
        new_labels = np.argmin(d2, axis=1)
        sse = float(d2[np.arange(n), new_labels].sum())
        assert sse <= prev_sse + 1e-9 * max(1.0, abs(prev_sse)), "k-means SSE increased"
        prev_sse = sse
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                centers[c] = pts[labels == c].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # steal the worst-fit points, one per empty cluster
            contrib = d2[np.arange(n), labels].copy()
            for c in empties:
                idx = int(np.argmax(contrib))
                centers[c] = pts[idx]
                labels[idx] = c
                contrib[idx] = -1.0
            prev_sse = math.inf  # repair may move SSE either way
    return labels, centers


def cluster_log_posterior(tracker: PosteriorTracker, clusters: np.ndarray) -> np.ndarray:
    """Arithmetic mean of node log-posteriors within each cluster."""
    labels = np.asarray(clusters)
    if labels.shape != tracker.log_posterior.shape:
        raise InvalidInputError(
            f"cluster labels shape {labels.shape} vs {tracker.log_posterior.shape} nodes"
        )
    k = int(labels.max()) + 1
    sums = np.bincount(labels, weights=tracker.log_posterior, minlength=k)
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise InvalidInputError("every cluster id up to max(labels) must be populated")
    return sums / counts


def cluster_scales(
    cluster_logp: np.ndarray, clusters: np.ndarray, cfg: GuidanceConfig
) -> np.ndarray:
    """Per-node scale vector: each node inherits its cluster's lambda."""
    lam = guidance_scale(np.asarray(cluster_logp, dtype=np.float64), cfg.pi, cfg.lambda_max)
    return np.asarray(lam, dtype=np.float64)[np.asarray(clusters)]

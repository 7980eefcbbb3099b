"""Lloyd's k-means with k-means++ seeding.

Written out by hand (rather than delegated) because the classification of
measurement points into mineralogical groups is part of the pipeline under
test.  Deterministic for a given seed; ``n_init`` restarts keep the run with
the lowest inertia.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    labels: np.ndarray     # (n,) int
    centroids: np.ndarray  # (k, d)
    inertia: float
    n_iter: int


def _seed_centroids(points: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    """k-means++: spread initial centroids with D^2 weighting."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points coincide with a chosen centroid.
            centroids[j:] = points[rng.integers(n, size=k - j)]
            break
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int,
           tol: float) -> tuple[np.ndarray, np.ndarray, float, int]:
    k = centroids.shape[0]
    labels = np.zeros(points.shape[0], dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        dist2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2,
                       axis=2)
        labels = np.argmin(dist2, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[labels == j]
            if members.size:
                new_centroids[j] = members.mean(axis=0)
            else:
                # Re-seat an empty cluster at the worst-served point.
                worst = int(np.argmax(np.min(dist2, axis=1)))
                new_centroids[j] = points[worst]
        shift = float(np.max(np.sum((new_centroids - centroids) ** 2, axis=1)))
        centroids = new_centroids
        if shift <= tol:
            break
    dist2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(dist2, axis=1)
    inertia = float(np.sum(np.min(dist2, axis=1)))
    return labels, centroids, inertia, it


def kmeans(
    features: np.ndarray,
    k: int,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-12,
) -> KMeansResult:
    points = np.asarray(features, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(n_init):
        centroids = _seed_centroids(points, k, rng)
        labels, centroids, inertia, n_iter = _lloyd(points, centroids,
                                                    max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels=labels, centroids=centroids,
                                inertia=inertia, n_iter=n_iter)
    assert best is not None
    return best


def classify_minerals(
    features: np.ndarray,
    k: int,
    seed: int = 0,
    n_init: int = 10,
) -> KMeansResult:
    """Group measurement points into k mineralogical classes.

    ``features`` holds one row per measurement record (element map values,
    e.g. Li and H).
    """
    return kmeans(features, k, seed=seed, n_init=n_init)

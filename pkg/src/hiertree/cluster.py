"""Deterministic k-means over embedding vectors.

Lloyd iteration with k-means++ seeding driven by an explicit seed, squared
Euclidean distance (monotone in cosine distance on unit vectors), lowest-index
tie-breaking, and farthest-point repair for empty clusters. Identical inputs
and config produce bit-identical output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import RawVector, UnitVector, stack
from .errors import TooFewPoints

_DEBUG_CHECK_INERTIA = False  # flipped on in tests to assert Lloyd monotonicity


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 100
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass(frozen=True)
class Clustering:
    """Result of one k-means run.

    assignments maps point index -> cluster index; every cluster index in
    [0, k) owns at least one point. inertia is the sum of squared distances
    of points to their assigned centroid.
    """

    assignments: dict[int, int]
    centroids: list[RawVector]
    inertia: float
    iterations: int = field(default=0, compare=False)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def groups(self) -> list[list[int]]:
        """Point indices per cluster, cluster order preserved, members ascending."""
        out: list[list[int]] = [[] for _ in range(self.k)]
        for idx in sorted(self.assignments):
            out[self.assignments[idx]].append(idx)
        return out


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared-distance sampling."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[int(rng.integers(0, n))]
    min_sq = np.full(n, np.inf)
    for i in range(1, k):
        diff = x - centroids[i - 1]
        min_sq = np.minimum(min_sq, np.einsum("ij,ij->i", diff, diff))
        total = float(min_sq.sum())
        if total <= 0.0:
            idx = int(rng.integers(0, n))  # all points coincide with a centroid
        else:
            idx = int(rng.choice(n, p=min_sq / total))
        centroids[i] = x[idx]
    return centroids


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # ||x - c||^2 per pair; argmin breaks ties toward the lowest cluster index.
    sq = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    labels = np.argmin(sq, axis=1)
    dists = sq[np.arange(x.shape[0]), labels]
    return labels, np.maximum(dists, 0.0)


def _repair_empty(labels: np.ndarray, dists: np.ndarray, centroids: np.ndarray,
                  x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Give each empty cluster the point currently farthest from its centroid.

    Only points whose cluster has other members are eligible, so the repair
    never empties a cluster it just filled; with an empty cluster present,
    some cluster must hold >= 2 points, so an eligible victim always exists.
    """
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        eligible = counts[labels] > 1
        victim = int(np.argmax(np.where(eligible, dists, -np.inf)))
        labels[victim] = c
        centroids[c] = x[victim]
        dists[victim] = 0.0
    return labels, dists


def kmeans(points: list[UnitVector], cfg: KMeansConfig) -> Clustering:
    """Cluster unit vectors into cfg.k groups.

    Deterministic given (points, cfg): seeding, assignment ties, and empty-
    cluster repair are all driven by cfg.seed or fixed index ordering.
    """
    if len(points) < cfg.k:
        raise TooFewPoints(f"{len(points)} points for k={cfg.k}")
    x = stack(points).astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    centroids = _plusplus_init(x, cfg.k, rng)

    labels, dists = _assign(x, centroids)
    labels, dists = _repair_empty(labels, dists, centroids, x, cfg.k)
    prev_inertia = float(dists.sum())
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        new_centroids = np.empty_like(centroids)
        for c in range(cfg.k):
            new_centroids[c] = x[labels == c].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        labels, dists = _assign(x, centroids)
        labels, dists = _repair_empty(labels, dists, centroids, x, cfg.k)
        inertia = float(dists.sum())
        if _DEBUG_CHECK_INERTIA:
            assert inertia <= prev_inertia + 1e-9, (inertia, prev_inertia)
        prev_inertia = inertia
        if shift <= cfg.tol:
            break

    return Clustering(
        assignments={i: int(labels[i]) for i in range(len(points))},
        centroids=[RawVector(centroids[c].astype(np.float32)) for c in range(cfg.k)],
        inertia=prev_inertia,
        iterations=iterations,
    )


def choose_k(n_classes: int, ratio: float) -> int:
    """Number of groups for a class set: round(ratio * n), floored at 1, capped at n."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must be in (0, 1]")
    return min(n_classes, max(1, round(ratio * n_classes)))

"""Reference set of embedded known-fake points and the k-th neighbor distance.

Both detection stages score a query by its Euclidean distance to the k-th
nearest reference point in the 2-D embedded space. The production path is a
brute-force partial selection; ``knn_oracle`` is an independent full-sort
used by the tests. Both compute the same float64 distance expression, so
their results agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KnnConfig:
    k: int = 20

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ReferenceSet:
    """Embedded coordinates the engine measures distances against."""

    points: np.ndarray
    origin: str = ""

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"reference points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("reference set must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("reference set contains non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


def _squared_distances(ref: ReferenceSet, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(2)
    diff = ref.points - z
    return diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]


def knn_distance(ref: ReferenceSet, z, cfg: KnnConfig) -> float:
    """Distance from z to its k-th nearest reference point (1-indexed).

    A query coinciding with a reference point counts that zero distance.
    """
    if cfg.k > ref.n:
        raise ValueError(f"k={cfg.k} exceeds reference size {ref.n}")
    d2 = _squared_distances(ref, z)
    kth = np.partition(d2, cfg.k - 1)[cfg.k - 1]
    return math.sqrt(kth)


def knn_distance_batch(ref: ReferenceSet, zs, cfg: KnnConfig) -> list[float]:
    """Element-wise knn_distance; output order matches input order."""
    zs = np.asarray(zs, dtype=np.float64)
    if zs.size == 0:
        return []
    return [knn_distance(ref, z, cfg) for z in zs.reshape(-1, 2)]


def knn_oracle(ref: ReferenceSet, z, cfg: KnnConfig) -> float:
    """Same contract as knn_distance via a naive full sort; test oracle."""
    if cfg.k > ref.n:
        raise ValueError(f"k={cfg.k} exceeds reference size {ref.n}")
    distances = np.sort(np.sqrt(_squared_distances(ref, z)))
    return float(distances[cfg.k - 1])

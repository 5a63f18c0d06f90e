"""Per-sample activation pruning: clip each vector at its own p-th percentile.

The percentile is nearest-rank (no interpolation): sort ascending, take the
element at index ceil(p/100 * n) - 1. Clipping applies from above only;
negative activations pass through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .featstore import FeatureSet, FeatureVector


@dataclass(frozen=True)
class PruneConfig:
    p: float = 90.0

    def __post_init__(self) -> None:
        if not (0.0 < self.p <= 100.0):
            raise ValueError(f"percentile must be in (0, 100], got {self.p}")


def nearest_rank_index(p: float, n: int) -> int:
    # Fraction keeps ceil(p/100 * n) exact; float rounding would misplace
    # boundary ranks like p=95, n=100.
    rank = Fraction(p) * n / 100
    return math.ceil(rank) - 1


def percentile(values, p: float) -> float:
    """Nearest-rank percentile of a non-empty sequence of finite reals."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size == 0:
        raise ValueError("percentile of empty sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("percentile input contains non-finite values")
    if not (0.0 < p <= 100.0):
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    return float(np.sort(arr)[nearest_rank_index(p, arr.size)])


def prune_matrix(matrix: np.ndarray, p: float) -> np.ndarray:
    """Row-wise clipping of an (n, d) float64 matrix at each row's cutoff."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] == 0:
        return matrix.copy()
    if matrix.shape[1] == 0:
        raise ValueError("cannot prune zero-dimensional features")
    order = np.sort(matrix, axis=1)
    cutoff = order[:, nearest_rank_index(p, matrix.shape[1])]
    return np.minimum(matrix, cutoff[:, None])


def prune_activations(x: FeatureVector, cfg: PruneConfig) -> FeatureVector:
    """Clip one vector at c = percentile(x, cfg.p); every entry of the result is <= c."""
    pruned = prune_matrix(x.as_float64()[None, :], cfg.p)[0]
    return FeatureVector(pruned)


def prune_set(fset: FeatureSet, cfg: PruneConfig) -> FeatureSet:
    """Apply prune_activations per row; labels and provenance are preserved."""
    if len(fset) == 0:
        return fset.replace()
    return fset.replace(matrix=prune_matrix(fset.as_float64(), cfg.p).astype(np.float32))

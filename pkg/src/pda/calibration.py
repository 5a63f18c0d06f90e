"""Threshold calibration from regenerated-real (pseudo-fake) distances.

The threshold tau is the nearest-rank q-th percentile (default 95) of the
k-NN distances that calibration pseudo-fakes score against the reference
set. Calibration runs the exact prune -> embed -> distance path inference
uses (`pipeline_distance` below is that one shared function), so the two
can never drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featstore import FeatureSet, FeatureVector
from .knnindex import KnnConfig, ReferenceSet, knn_distance
from .pruning import PruneConfig, nearest_rank_index, prune_matrix
from .reduction import EmbeddingModel, embed_point, model_id


def pipeline_embed(
    x, prune: PruneConfig | None, model: EmbeddingModel
) -> np.ndarray:
    """Prune (optionally) and embed one raw feature vector."""
    vec = x.as_float64() if isinstance(x, FeatureVector) else np.asarray(x, np.float64)
    if prune is not None:
        vec = prune_matrix(vec[None, :], prune.p)[0]
    return embed_point(model, vec)


def pipeline_distance(
    x,
    prune: PruneConfig | None,
    model: EmbeddingModel,
    ref: ReferenceSet,
    knn: KnnConfig,
) -> float:
    """The shared scoring path: prune -> embed -> k-NN distance."""
    return knn_distance(ref, pipeline_embed(x, prune, model), knn)


def pipeline_distances(
    fset: FeatureSet,
    prune: PruneConfig | None,
    model: EmbeddingModel,
    ref: ReferenceSet,
    knn: KnnConfig,
) -> np.ndarray:
    """pipeline_distance per row, order preserved."""
    matrix = fset.as_float64()
    return np.array(
        [pipeline_distance(matrix[i], prune, model, ref, knn) for i in range(len(fset))]
    )


@dataclass(frozen=True)
class Threshold:
    """Calibrated tau plus the full distance record behind it.

    ``distances`` is the sorted calibration record; ``provenance`` is the
    identifier of the reduction model the record was computed with.
    Inference refuses a threshold whose provenance does not match the
    supplied model and k.
    """

    tau: float
    q: float
    m: int
    distances: np.ndarray
    k: KnnConfig
    provenance: str

    def __post_init__(self) -> None:
        if not (0.0 < self.q <= 100.0):
            raise ValueError(f"percentile must be in (0, 100], got {self.q}")
        arr = np.asarray(self.distances, dtype=np.float64)
        if arr.ndim != 1 or arr.size != self.m or self.m < 1:
            raise ValueError("distance record must be a non-empty 1-D array of length m")
        if np.any(np.diff(arr) < 0):
            raise ValueError("distance record must be sorted ascending")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "distances", arr)
        # nearest-rank lower bound; the upper bound q/100 + 1/m additionally
        # holds whenever the record has no ties at the cutoff
        frac = float((arr <= self.tau).sum()) / self.m
        if frac < self.q / 100.0:
            raise ValueError(
                f"tau={self.tau} covers {frac:.4f} of the record, below q={self.q}%"
            )


def threshold_from_distances(
    distances, q: float, knn: KnnConfig, provenance: str = ""
) -> Threshold:
    """Nearest-rank percentile threshold over a calibration distance record."""
    arr = np.sort(np.asarray(distances, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("cannot calibrate on an empty distance record")
    tau = float(arr[nearest_rank_index(q, arr.size)])
    return Threshold(tau=tau, q=q, m=int(arr.size), distances=arr, k=knn, provenance=provenance)


def calibrate_threshold(
    pseudo_fake: FeatureSet,
    model: EmbeddingModel,
    ref: ReferenceSet,
    knn: KnnConfig,
    q: float = 95.0,
    prune: PruneConfig | None = PruneConfig(),
) -> Threshold:
    """Calibrate tau from regenerated-real features.

    Each sample runs prune -> embed -> k-NN distance; tau is the
    nearest-rank q-th percentile of the resulting record.
    """
    if len(pseudo_fake) == 0:
        raise ValueError("calibration set is empty")
    if pseudo_fake.dim != model.dim:
        raise ValueError(
            f"calibration dim {pseudo_fake.dim} does not match model dim {model.dim}"
        )
    if knn.k > ref.n:
        raise ValueError(f"k={knn.k} exceeds reference size {ref.n}")
    record = pipeline_distances(pseudo_fake, prune, model, ref, knn)
    return threshold_from_distances(record, q, knn, provenance=model_id(model))


def coverage(threshold: Threshold, distances) -> float:
    """Fraction of a distance list at or below tau."""
    arr = np.asarray(distances, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("coverage of an empty distance list")
    return float((arr <= threshold.tau).sum()) / arr.size

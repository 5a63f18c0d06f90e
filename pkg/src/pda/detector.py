"""Three-step inference: raw-space filter, regenerate, differentiate.

A sample whose raw embedding sits within tau of the reference is fake at
stage 1. Otherwise its regenerated features are scored the same way: at or
below tau means real, above means fake (stage 2). Regeneration is lazy --
it runs only for samples that pass stage 1 -- and is pluggable: a paired
lookup for precomputed feature pairs, or an external command speaking PDAF
files.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import Threshold, pipeline_distance
from .featstore import FeatureSet, FeatureVector, PairedSet, load_feature_file, save_feature_file
from .knnindex import KnnConfig, ReferenceSet
from .pruning import PruneConfig
from .reduction import EmbeddingModel, model_id


class PipelineConfigError(ValueError):
    """Threshold provenance does not match the supplied model or k."""


class RegenerationError(RuntimeError):
    """The regenerator failed; surfaced distinctly, never a silent verdict."""


@dataclass(frozen=True)
class Verdict:
    label: str
    stage: int
    d_raw: float
    d_regen: float | None
    tau: float

    def __post_init__(self) -> None:
        if self.label not in ("fake", "real"):
            raise ValueError(f"label must be 'fake' or 'real', got {self.label!r}")
        if self.stage == 1:
            if self.label != "fake" or self.d_regen is not None:
                raise ValueError("stage-1 verdicts are fake and carry no d_regen")
        elif self.stage == 2:
            if self.d_regen is None:
                raise ValueError("stage-2 verdicts carry d_regen")
        else:
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")


@dataclass(frozen=True)
class Pipeline:
    """The fixed inference context: prune/model/reference/k/threshold."""

    prune: PruneConfig | None
    model: EmbeddingModel
    ref: ReferenceSet
    knn: KnnConfig
    threshold: Threshold

    def __post_init__(self) -> None:
        mid = model_id(self.model)
        if self.threshold.provenance and self.threshold.provenance != mid:
            raise PipelineConfigError(
                f"threshold was calibrated against model {self.threshold.provenance}, "
                f"supplied model is {mid}"
            )
        if self.threshold.k.k != self.knn.k:
            raise PipelineConfigError(
                f"threshold was calibrated with k={self.threshold.k.k}, "
                f"pipeline uses k={self.knn.k}"
            )
        if self.knn.k > self.ref.n:
            raise PipelineConfigError(
                f"k={self.knn.k} exceeds reference size {self.ref.n}"
            )


def verdict_from_distances(d_raw: float, d_regen: float | None, tau: float) -> Verdict:
    """The decision rule; d == tau counts as aligned.

    Verdicts depend on the inputs only through (d_raw, d_regen, tau).
    """
    if d_raw <= tau:
        return Verdict("fake", 1, d_raw, None, tau)
    if d_regen is None:
        raise ValueError("stage 2 reached but no regenerated distance supplied")
    label = "real" if d_regen <= tau else "fake"
    return Verdict(label, 2, d_raw, d_regen, tau)


class Regenerator:
    """Maps a raw feature vector to its regenerated counterpart.

    Implementations must be deterministic per input and preserve dim.
    """

    prefers_batch = False

    def regen(self, x) -> FeatureVector:
        raise NotImplementedError

    def regen_batch(self, xs: FeatureSet) -> FeatureSet:
        rows = [self.regen(xs.matrix[i]).values for i in range(len(xs))]
        return FeatureSet(np.asarray(rows), source="regenerated", dim=xs.dim)


class PairedRegenerator(Regenerator):
    """Lookup regenerator over precomputed (raw, regenerated) pairs.

    Accepts either a sample index or a raw feature vector; vectors are
    matched by their exact float32 payload.
    """

    def __init__(self, pairs: PairedSet) -> None:
        self._pairs = pairs
        self._index: dict[bytes, int] = {}
        raw = pairs.raw.matrix
        for i in range(len(pairs)):
            key = raw[i].tobytes()
            prev = self._index.get(key)
            if prev is not None:
                if not np.array_equal(pairs.regenerated.matrix[prev], pairs.regenerated.matrix[i]):
                    raise ValueError(
                        f"ambiguous pairing: rows {prev} and {i} share a raw vector "
                        "but regenerate differently"
                    )
                continue
            self._index[key] = i

    def regen(self, x) -> FeatureVector:
        if isinstance(x, (int, np.integer)):
            if not 0 <= int(x) < len(self._pairs):
                raise RegenerationError(f"unknown sample id {int(x)}")
            return FeatureVector(self._pairs.regenerated.matrix[int(x)])
        vec = x.values if isinstance(x, FeatureVector) else np.asarray(x)
        key = np.ascontiguousarray(vec, dtype=np.float32).tobytes()
        idx = self._index.get(key)
        if idx is None:
            raise RegenerationError("unknown sample id: raw vector not in the paired set")
        return FeatureVector(self._pairs.regenerated.matrix[idx])


def paired_regenerator(pairs: PairedSet) -> PairedRegenerator:
    return PairedRegenerator(pairs)


class CommandRegenerator(Regenerator):
    """Spawns an external command that maps a PDAF file to a PDAF file.

    The template must contain ``{in}`` and ``{out}`` placeholders. One batch
    is in flight at a time; its validated rows are cached so per-sample
    lookups after a warm batch do not respawn the process.
    """

    prefers_batch = True

    def __init__(self, template: str, timeout: float = 600.0) -> None:
        if "{in}" not in template or "{out}" not in template:
            raise ValueError("command template must contain {in} and {out}")
        self._tokens = shlex.split(template)
        self._timeout = timeout
        self._cache: dict[bytes, np.ndarray] = {}

    def _run(self, xs: FeatureSet) -> FeatureSet:
        with tempfile.TemporaryDirectory(prefix="pda-regen-") as tmp:
            in_path = Path(tmp) / "raw.pdaf"
            out_path = Path(tmp) / "regen.pdaf"
            save_feature_file(xs.replace(labels=None), in_path)
            cmd = [
                t.replace("{in}", str(in_path)).replace("{out}", str(out_path))
                for t in self._tokens
            ]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self._timeout
                )
            except subprocess.TimeoutExpired as exc:
                raise RegenerationError(
                    f"regeneration command timed out after {self._timeout}s"
                ) from exc
            if proc.returncode != 0:
                tail = (proc.stderr or proc.stdout or "").strip()[-500:]
                raise RegenerationError(
                    f"regeneration command exited {proc.returncode}: {tail}"
                )
            if not out_path.exists():
                raise RegenerationError("regeneration command produced no output file")
            try:
                out = load_feature_file(out_path)
            except ValueError as exc:
                raise RegenerationError(f"malformed regeneration output: {exc}") from exc
        if len(out) != len(xs):
            raise RegenerationError(
                f"regeneration count mismatch: sent {len(xs)} rows, got {len(out)}"
            )
        if out.dim != xs.dim:
            raise RegenerationError(
                f"regeneration dim mismatch: sent dim {xs.dim}, got {out.dim}"
            )
        return out

    def regen_batch(self, xs: FeatureSet) -> FeatureSet:
        out = self._run(xs)
        for i in range(len(xs)):
            self._cache.setdefault(xs.matrix[i].tobytes(), out.matrix[i])
        return out

    def regen(self, x) -> FeatureVector:
        vec = x.values if isinstance(x, FeatureVector) else np.asarray(x)
        key = np.ascontiguousarray(vec, dtype=np.float32).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return FeatureVector(hit)
        single = FeatureSet(np.asarray(vec, dtype=np.float32)[None, :])
        out = self.regen_batch(single)
        return FeatureVector(out.matrix[0])


def command_regenerator(template: str, timeout: float = 600.0) -> CommandRegenerator:
    return CommandRegenerator(template, timeout=timeout)


def _check_regenerated(x_pseudo, dim: int) -> np.ndarray:
    vec = x_pseudo.as_float64() if isinstance(x_pseudo, FeatureVector) else np.asarray(
        x_pseudo, np.float64
    )
    if vec.shape != (dim,):
        raise RegenerationError(
            f"regenerated vector has shape {vec.shape}, expected ({dim},)"
        )
    if not np.all(np.isfinite(vec)):
        raise RegenerationError("regenerated vector contains non-finite values")
    return vec


def detect(x, pipe: Pipeline, regen: Regenerator) -> Verdict:
    """Classify one sample; regeneration runs only if stage 1 passes."""
    vec = x.as_float64() if isinstance(x, FeatureVector) else np.asarray(x, np.float64)
    if vec.shape != (pipe.model.dim,):
        raise ValueError(f"dim mismatch: got {vec.shape}, model expects ({pipe.model.dim},)")
    tau = pipe.threshold.tau
    d_raw = pipeline_distance(vec, pipe.prune, pipe.model, pipe.ref, pipe.knn)
    if d_raw <= tau:
        return Verdict("fake", 1, d_raw, None, tau)
    pseudo = _check_regenerated(regen.regen(FeatureVector(vec)), pipe.model.dim)
    d_regen = pipeline_distance(pseudo, pipe.prune, pipe.model, pipe.ref, pipe.knn)
    return verdict_from_distances(d_raw, d_regen, tau)


@dataclass
class BatchDetection:
    """Per-sample outcomes; failed samples hold None plus an error entry."""

    verdicts: list[Verdict | None]
    errors: list[tuple[int, str]]

    @property
    def ok(self) -> bool:
        return not self.errors


def detect_batch(raws: FeatureSet, pipe: Pipeline, regen: Regenerator) -> BatchDetection:
    """Element-wise detect with order preserved.

    Stage-1 distances are computed for every sample first; the regenerator
    sees only the samples that passed stage 1 (batched regenerators get them
    as a single warm batch). Per-sample failures are collected and the batch
    continues.
    """
    if len(raws) and raws.dim != pipe.model.dim:
        raise ValueError(f"dim mismatch: batch dim {raws.dim}, model expects {pipe.model.dim}")
    n = len(raws)
    tau = pipe.threshold.tau
    matrix = raws.as_float64()
    verdicts: list[Verdict | None] = [None] * n
    errors: list[tuple[int, str]] = []

    d_raws = np.empty(n)
    stage2: list[int] = []
    for i in range(n):
        d_raws[i] = pipeline_distance(matrix[i], pipe.prune, pipe.model, pipe.ref, pipe.knn)
        if d_raws[i] <= tau:
            verdicts[i] = Verdict("fake", 1, float(d_raws[i]), None, tau)
        else:
            stage2.append(i)

    if not stage2:
        return BatchDetection(verdicts, errors)

    batch_error: str | None = None
    if regen.prefers_batch:
        subset = FeatureSet(raws.matrix[stage2], source=raws.source, dim=raws.dim)
        try:
            regen.regen_batch(subset)
        except RegenerationError as exc:
            batch_error = str(exc)

    for i in stage2:
        if batch_error is not None:
            errors.append((i, batch_error))
            continue
        try:
            pseudo = _check_regenerated(regen.regen(raws.row(i)), pipe.model.dim)
            d_regen = pipeline_distance(pseudo, pipe.prune, pipe.model, pipe.ref, pipe.knn)
            verdicts[i] = verdict_from_distances(float(d_raws[i]), d_regen, tau)
        except RegenerationError as exc:
            errors.append((i, str(exc)))
    return BatchDetection(verdicts, errors)

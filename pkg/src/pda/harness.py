"""Evaluation harness: accuracy metrics, ablation sweeps, feature-level
robustness perturbation, and average Fourier spectra.

Accuracy splits correct decisions by the stage that produced them:

    acc = 100 * (n_correct_stage1 + n_correct_stage2) / n_total

The harness also owns the staged world runner used by sweeps: embeddings
are cached per reduction configuration and reused across cells whose axis
does not touch them (k and q recalibrate from cached geometry; prune and
reduce rebuild).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import Threshold, pipeline_embed, threshold_from_distances
from .detector import Verdict, verdict_from_distances
from .featstore import FeatureSet
from .knnindex import KnnConfig, ReferenceSet, knn_distance
from .pruning import PruneConfig, prune_set
from .reduction import EmbeddingModel, TsneConfig, fit_pca, fit_tsne, model_id
from .simulator import LABEL_REAL, SyntheticWorld

_BRANCHES = ("stage1_fake", "stage2_real", "stage2_fake")


def binarize_label(label: str) -> str:
    return "real" if label == LABEL_REAL else "fake"


def _branch(v: Verdict) -> str:
    return "stage1_fake" if v.stage == 1 else f"stage2_{v.label}"


@dataclass(frozen=True)
class EvalResult:
    """Counts behind the two-stage accuracy identity."""

    n_correct_stage1: int
    n_correct_stage2: int
    n_total: int
    branch_counts: dict[str, dict[str, int]]
    per_generator: dict[str, "EvalResult"]

    @property
    def acc(self) -> float:
        return 100.0 * (self.n_correct_stage1 + self.n_correct_stage2) / self.n_total


def evaluate(verdicts: Sequence[Verdict], labels: Sequence[str]) -> EvalResult:
    """Score verdicts against ground truth.

    Labels may be binary ("real"/"fake") or full tags; tags other than
    "real" count as fake and additionally produce a per-generator breakdown
    (each fake tag scored against all reals plus its own fakes).
    """
    if len(verdicts) != len(labels):
        raise ValueError(f"{len(verdicts)} verdicts vs {len(labels)} labels")
    if not verdicts:
        raise ValueError("cannot evaluate an empty verdict list")

    c1 = c2 = 0
    branch_counts: dict[str, dict[str, int]] = {b: {"real": 0, "fake": 0} for b in _BRANCHES}
    for v, lab in zip(verdicts, labels):
        truth = binarize_label(lab)
        branch_counts[_branch(v)][truth] += 1
        if v.label == truth:
            if v.stage == 1:
                c1 += 1
            else:
                c2 += 1

    per_generator: dict[str, EvalResult] = {}
    tags = {lab for lab in labels if lab not in (LABEL_REAL, "fake")}
    for tag in sorted(tags):
        idx = [i for i, lab in enumerate(labels) if lab in (LABEL_REAL, tag)]
        sub_v = [verdicts[i] for i in idx]
        sub_l = [binarize_label(labels[i]) for i in idx]
        per_generator[tag] = evaluate(sub_v, sub_l)

    return EvalResult(
        n_correct_stage1=c1,
        n_correct_stage2=c2,
        n_total=len(verdicts),
        branch_counts=branch_counts,
        per_generator=per_generator,
    )


def mean_accuracy(results: Iterable) -> float:
    """Unweighted arithmetic mean of per-generator accuracies.

    Accepts EvalResults or plain accuracy percentages. This is the "mean
    over generators" aggregate, never ranking-based average precision.
    """
    accs = [r.acc if isinstance(r, EvalResult) else float(r) for r in results]
    if not accs:
        raise ValueError("mean_accuracy of no results")
    return float(sum(accs) / len(accs))


# ---------------------------------------------------------------------------
# staged world evaluation


@dataclass(frozen=True)
class PipelineSettings:
    """Fixed pipeline context for runs and sweeps.

    ``reembed_joint`` is a diagnostic mode: instead of embedding new points
    out-of-sample against a fixed reference, the t-SNE is refit jointly on
    reference + calibration + test features. It moves the meaning of tau
    with every batch, so it is excluded from acceptance and exists only for
    comparison.
    """

    prune_p: float | None = 90.0
    reduce: str = "tsne"
    tsne: TsneConfig = TsneConfig()
    pca_standardize: bool = True
    k: int = 20
    q: float = 95.0
    reembed_joint: bool = False

    @property
    def prune(self) -> PruneConfig | None:
        return None if self.prune_p is None else PruneConfig(self.prune_p)


@dataclass
class EmbeddedWorld:
    """Per-reduction geometry cache: everything k and q reuse."""

    model: EmbeddingModel
    ref: ReferenceSet
    calib_points: np.ndarray
    test_raw_points: np.ndarray
    test_regen_points: np.ndarray
    labels: tuple[str, ...]


@dataclass
class WorldRun:
    settings: PipelineSettings
    threshold: Threshold
    verdicts: list[Verdict]
    result: EvalResult
    d_raw: np.ndarray
    d_regen: np.ndarray
    embedded: EmbeddedWorld


def embed_world(world: SyntheticWorld, settings: PipelineSettings) -> EmbeddedWorld:
    """Fit the reduction on the reference pool and embed every sample."""
    if settings.reembed_joint:
        return _embed_world_joint(world, settings)
    prune = settings.prune
    ref_inputs = world.reference_pool
    if prune is not None:
        ref_inputs = prune_set(ref_inputs, prune)
    if settings.reduce == "tsne":
        model = fit_tsne(ref_inputs, settings.tsne)
    elif settings.reduce == "pca":
        model = fit_pca(ref_inputs, standardize=settings.pca_standardize)
    else:
        raise ValueError(f"unknown reduction {settings.reduce!r}")

    ref = ReferenceSet(model.fitted_points, origin=world.reference_pool.source)

    def embed_all(fset: FeatureSet) -> np.ndarray:
        matrix = fset.as_float64()
        return np.array(
            [pipeline_embed(matrix[i], prune, model) for i in range(len(fset))]
        )

    return EmbeddedWorld(
        model=model,
        ref=ref,
        calib_points=embed_all(world.calibration_pseudo),
        test_raw_points=embed_all(world.test.raw),
        test_regen_points=embed_all(world.test.regenerated),
        labels=world.test_labels,
    )


def _embed_world_joint(world: SyntheticWorld, settings: PipelineSettings) -> EmbeddedWorld:
    """Diagnostic transductive mode: one t-SNE over reference + all samples."""
    if settings.reduce != "tsne":
        raise ValueError("joint re-embedding is a t-SNE diagnostic mode")
    from .pruning import prune_matrix

    n_ref = len(world.reference_pool)
    n_cal = len(world.calibration_pseudo)
    n_test = len(world.test)
    stack = np.vstack(
        [
            world.reference_pool.as_float64(),
            world.calibration_pseudo.as_float64(),
            world.test.raw.as_float64(),
            world.test.regenerated.as_float64(),
        ]
    )
    if settings.prune is not None:
        stack = prune_matrix(stack, settings.prune.p)
    model = fit_tsne(FeatureSet(stack.astype(np.float32)), settings.tsne)
    pts = model.fitted_points
    return EmbeddedWorld(
        model=model,
        ref=ReferenceSet(pts[:n_ref], origin=world.reference_pool.source + " (joint)"),
        calib_points=pts[n_ref : n_ref + n_cal],
        test_raw_points=pts[n_ref + n_cal : n_ref + n_cal + n_test],
        test_regen_points=pts[n_ref + n_cal + n_test :],
        labels=world.test_labels,
    )


def _distances(ref: ReferenceSet, points: np.ndarray, knn: KnnConfig) -> np.ndarray:
    return np.array([knn_distance(ref, z, knn) for z in points])


def score_embedded(
    embedded: EmbeddedWorld, settings: PipelineSettings
) -> WorldRun:
    """Calibrate tau and produce verdicts from cached geometry."""
    knn = KnnConfig(settings.k)
    calib_d = _distances(embedded.ref, embedded.calib_points, knn)
    threshold = threshold_from_distances(
        calib_d, settings.q, knn, provenance=model_id(embedded.model)
    )
    d_raw = _distances(embedded.ref, embedded.test_raw_points, knn)
    d_regen = _distances(embedded.ref, embedded.test_regen_points, knn)
    verdicts = [
        verdict_from_distances(float(a), float(b), threshold.tau)
        for a, b in zip(d_raw, d_regen)
    ]
    result = evaluate(verdicts, list(embedded.labels))
    return WorldRun(
        settings=settings,
        threshold=threshold,
        verdicts=verdicts,
        result=result,
        d_raw=d_raw,
        d_regen=d_regen,
        embedded=embedded,
    )


def run_world(world: SyntheticWorld, settings: PipelineSettings) -> WorldRun:
    """Full pipeline on a synthetic world: fit, calibrate, score, evaluate."""
    return score_embedded(embed_world(world, settings), settings)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: PipelineSettings

    def __post_init__(self) -> None:
        if self.axis not in ("k", "q", "prune", "reduce"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ValueError("sweep needs at least one value")


@dataclass
class SweepCell:
    value: object
    tau: float | None
    result: EvalResult | None
    error: str | None = None


def _settings_for(spec: SweepSpec, value) -> PipelineSettings:
    base = spec.base
    if spec.axis == "k":
        return replace(base, k=int(value))
    if spec.axis == "q":
        return replace(base, q=float(value))
    if spec.axis == "prune":
        if isinstance(value, bool):
            return replace(base, prune_p=(base.prune_p or 90.0) if value else None)
        return replace(base, prune_p=None if value is None else float(value))
    return replace(base, reduce=str(value))


def _embed_key(settings: PipelineSettings) -> tuple:
    if settings.reduce == "tsne":
        return ("tsne", settings.prune_p, settings.tsne, settings.reembed_joint)
    return ("pca", settings.prune_p, settings.pca_standardize)


def run_sweep(spec: SweepSpec, world: SyntheticWorld) -> list[SweepCell]:
    """One pipeline rebuild + evaluation per axis value.

    Embeddings are cached on the reduction-affecting config subset and
    reused when the axis does not touch them; tau is recalibrated in every
    cell (it depends on k, prune, and reduce through the distance record).
    Per-cell failures are recorded and the sweep continues.
    """
    cache: dict[tuple, EmbeddedWorld] = {}
    cells: list[SweepCell] = []
    for value in spec.values:
        try:
            settings = _settings_for(spec, value)
            key = _embed_key(settings)
            if key not in cache:
                cache[key] = embed_world(world, settings)
            run = score_embedded(cache[key], settings)
            cells.append(SweepCell(value=value, tau=run.threshold.tau, result=run.result))
        except (ValueError, RuntimeError) as exc:
            cells.append(SweepCell(value=value, tau=None, result=None, error=str(exc)))
    return cells


# ---------------------------------------------------------------------------
# robustness perturbation


def perturb_features(fset: FeatureSet, sigma: float, seed: int) -> FeatureSet:
    """Add independent N(0, sigma^2) noise per entry, deterministic per seed."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return fset.replace()
    rng = np.random.default_rng(seed)
    noisy = fset.as_float64() + rng.normal(0.0, sigma, size=fset.matrix.shape)
    return fset.replace(matrix=noisy.astype(np.float32))


# ---------------------------------------------------------------------------
# frequency analysis


def fourier_magnitude(image: np.ndarray) -> np.ndarray:
    """Centered magnitude of the unnormalized 2-D DFT of one image.

    With this convention the Parseval constant is the pixel count:
    sum |F|^2 == N * sum |x|^2.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    return np.fft.fftshift(np.abs(np.fft.fft2(image)))


def average_fourier_spectrum(images: Sequence[np.ndarray]) -> np.ndarray:
    """log(1 + mean centered DFT magnitude) over equal-shape images."""
    if len(images) == 0:
        raise ValueError("no images supplied")
    shape = np.asarray(images[0]).shape
    acc = np.zeros(shape, dtype=np.float64)
    for i, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != shape:
            raise ValueError(
                f"image {i} has shape {img.shape}, expected {shape}"
            )
        acc += fourier_magnitude(img)
    return np.log1p(acc / len(images))


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) image as a float64 matrix."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - pos < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return pixels.reshape(height, width).astype(np.float64)


# ---------------------------------------------------------------------------
# delimited outputs


def write_report(path: str | Path, verdicts: Sequence[Verdict | None],
                 ids: Sequence[str] | None = None,
                 errors: Sequence[tuple[int, str]] = ()) -> None:
    """Per-sample detection report plus a trailing per-branch summary block."""
    err_map = dict(errors)
    lines = ["id\tlabel\tstage\td_raw\td_regen\ttau"]
    counts = {b: 0 for b in _BRANCHES}
    n_err = 0
    for i, v in enumerate(verdicts):
        sid = ids[i] if ids is not None else str(i)
        if v is None:
            n_err += 1
            reason = err_map.get(i, "error")
            lines.append(f"{sid}\terror\t-\tNA\tNA\tNA\t# {reason}")
            continue
        counts[_branch(v)] += 1
        d_regen = "NA" if v.d_regen is None else f"{v.d_regen:.9g}"
        lines.append(
            f"{sid}\t{v.label}\t{v.stage}\t{v.d_raw:.9g}\t{d_regen}\t{v.tau:.9g}"
        )
    lines.append("# summary")
    for b in _BRANCHES:
        lines.append(f"# {b}\t{counts[b]}")
    if n_err:
        lines.append(f"# errors\t{n_err}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> tuple[list[str], list[Verdict]]:
    """Parse a detection report back into ids and verdicts (errors skipped)."""
    ids: list[str] = []
    verdicts: list[Verdict] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line.startswith("id\t"):
            continue
        parts = line.split("\t")
        if parts[1] == "error":
            continue
        ids.append(parts[0])
        verdicts.append(
            Verdict(
                label=parts[1],
                stage=int(parts[2]),
                d_raw=float(parts[3]),
                d_regen=None if parts[4] == "NA" else float(parts[4]),
                tau=float(parts[5]),
            )
        )
    return ids, verdicts


def write_eval_table(path: str | Path, overall: EvalResult) -> None:
    """Overall and per-generator accuracy as a TSV table."""
    lines = ["group\tn\tcorrect_stage1\tcorrect_stage2\tacc"]

    def row(name: str, r: EvalResult) -> str:
        return f"{name}\t{r.n_total}\t{r.n_correct_stage1}\t{r.n_correct_stage2}\t{r.acc:.2f}"

    lines.append(row("overall", overall))
    for tag, r in overall.per_generator.items():
        lines.append(row(tag, r))
    if overall.per_generator:
        lines.append(
            f"mean_accuracy\t-\t-\t-\t{mean_accuracy(overall.per_generator.values()):.2f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def histogram_table(values_by_group: dict[str, np.ndarray], bins: int = 40) -> list[str]:
    """Binned counts per group in a gnuplot-friendly long format."""
    all_values = np.concatenate([np.asarray(v) for v in values_by_group.values()])
    finite = all_values[np.isfinite(all_values)]
    lo, hi = (0.0, 1.0) if finite.size == 0 else (float(finite.min()), float(finite.max()))
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    lines = ["group\tbin_left\tbin_right\tcount"]
    for group, values in values_by_group.items():
        counts, _ = np.histogram(np.asarray(values), bins=edges)
        for b in range(bins):
            lines.append(f"{group}\t{edges[b]:.6g}\t{edges[b + 1]:.6g}\t{int(counts[b])}")
    return lines


def write_histogram_data(path: str | Path, values_by_group: dict[str, np.ndarray],
                         tau: float | None = None, bins: int = 40) -> None:
    lines = histogram_table(values_by_group, bins)
    if tau is not None:
        lines.insert(0, f"# tau\t{tau:.9g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scatter_data(path: str | Path, points: np.ndarray,
                       labels: Sequence[str] | None = None) -> None:
    """2-D embedded coordinates with labels, one row per point."""
    points = np.asarray(points, dtype=np.float64)
    lines = ["x\ty\tlabel"]
    for i in range(points.shape[0]):
        lab = labels[i] if labels is not None else "-"
        lines.append(f"{points[i, 0]:.9g}\t{points[i, 1]:.9g}\t{lab}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_table(path: str | Path, axis: str, cells: Sequence[SweepCell]) -> None:
    lines = [f"{axis}\ttau\tacc\tcorrect_stage1\tcorrect_stage2\tn\terror"]
    for c in cells:
        if c.result is None:
            lines.append(f"{c.value}\tNA\tNA\tNA\tNA\tNA\t{c.error}")
        else:
            r = c.result
            lines.append(
                f"{c.value}\t{c.tau:.9g}\t{r.acc:.2f}\t{r.n_correct_stage1}"
                f"\t{r.n_correct_stage2}\t{r.n_total}\t-"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Whitespace-delimited numeric matrix (gnuplot `matrix` format)."""
    np.savetxt(path, np.asarray(matrix), fmt="%.9g", delimiter="\t")

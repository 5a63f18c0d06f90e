"""Synthetic feature-space worlds with paired regeneration.

A world draws every class from a shared content manifold and adds a
per-generator artifact signature: known fakes carry the known generator's
signature, unknown fakes carry their own, reals carry none. Regeneration
maps a sample to its content draw plus the known signature, plus a residual
fraction of the sample's original signature and isotropic alignment noise.
Reals therefore land in the known-fake region while unknown fakes keep a
residual offset.

Regeneration is precomputed into index-aligned pairs, so the inference-time
regenerator stays a blind lookup: the simulator knows provenance, the
detector never does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featstore import FeatureSet, PairedSet

LABEL_REAL = "real"
LABEL_KNOWN = "known_fake"


def _as_vector(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise ValueError(f"{name} must be scalar or length-{dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ClusterSpec:
    """Mean and per-dimension standard deviation of one feature cluster."""

    mean: np.ndarray
    sigma: np.ndarray

    @staticmethod
    def of(dim: int, mean=0.0, sigma=1.0) -> "ClusterSpec":
        m = _as_vector(mean, dim, "cluster mean")
        s = _as_vector(sigma, dim, "cluster sigma")
        if np.any(s <= 0):
            raise ValueError("cluster sigma must be positive")
        return ClusterSpec(mean=m, sigma=s)


@dataclass(frozen=True)
class GeneratorSpec:
    """An unknown generator: its artifact signature and optional content override."""

    generator_id: str
    signature: np.ndarray
    content: ClusterSpec | None = None

    @property
    def label(self) -> str:
        return f"unknown_fake:{self.generator_id}"


@dataclass(frozen=True)
class SyntheticWorldConfig:
    dim: int
    real: ClusterSpec
    known_fake: ClusterSpec
    known_signature: np.ndarray
    unknown: tuple[GeneratorSpec, ...]
    alignment_noise: float
    residual_factor: float
    n_reference: int
    n_calibration: int
    n_test_real: int
    n_test_known_fake: int
    n_test_per_unknown: int
    seed: int
    outlier_count: int = 0
    outlier_cluster: ClusterSpec | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.residual_factor <= 1.0):
            raise ValueError(f"residual factor must be in [0, 1], got {self.residual_factor}")
        if self.alignment_noise < 0:
            raise ValueError(f"alignment noise must be >= 0, got {self.alignment_noise}")
        if self.n_reference < 1:
            raise ValueError("reference pool needs at least one sample")
        if self.n_calibration < 1:
            raise ValueError("calibration needs at least one sample")
        if min(self.n_test_real, self.n_test_known_fake, self.n_test_per_unknown) < 0:
            raise ValueError("test counts must be >= 0")
        if self.outlier_count < 0:
            raise ValueError("outlier count must be >= 0")
        object.__setattr__(
            self, "known_signature", _as_vector(self.known_signature, self.dim, "known signature")
        )
        for g in self.unknown:
            _as_vector(g.signature, self.dim, f"signature of {g.generator_id}")


@dataclass(frozen=True)
class SyntheticWorld:
    reference_pool: FeatureSet
    calibration_reals: FeatureSet
    calibration_pseudo: FeatureSet
    test: PairedSet
    config: SyntheticWorldConfig

    @property
    def test_labels(self) -> tuple[str, ...]:
        labels = self.test.raw.labels
        assert labels is not None
        return labels


def sample_world(cfg: SyntheticWorldConfig) -> SyntheticWorld:
    """Draw a world; bitwise deterministic for a given config.

    Draw order is fixed: reference content, outliers, calibration content,
    calibration alignment noise, then per test class content and alignment
    noise in class order (real, known fake, unknown generators as listed).
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    s_known = cfg.known_signature
    beta = cfg.residual_factor

    def draw(cluster: ClusterSpec, n: int) -> np.ndarray:
        return rng.normal(cluster.mean, cluster.sigma, size=(n, d))

    def align_noise(n: int) -> np.ndarray:
        return rng.normal(0.0, cfg.alignment_noise, size=(n, d)) if cfg.alignment_noise > 0 \
            else np.zeros((n, d))

    ref_rows = draw(cfg.known_fake, cfg.n_reference) + s_known
    if cfg.outlier_count:
        outlier_cluster = cfg.outlier_cluster or cfg.real
        ref_rows = np.vstack([ref_rows, draw(outlier_cluster, cfg.outlier_count)])
    reference = FeatureSet(
        ref_rows,
        labels=[LABEL_KNOWN] * ref_rows.shape[0],
        source="simulator:reference",
        seed=cfg.seed,
    )

    calib_content = draw(cfg.real, cfg.n_calibration)
    calib_pseudo = calib_content + s_known + align_noise(cfg.n_calibration)
    calibration_reals = FeatureSet(
        calib_content, labels=[LABEL_REAL] * cfg.n_calibration,
        source="simulator:calibration_raw", seed=cfg.seed,
    )
    calibration_pseudo = FeatureSet(
        calib_pseudo, labels=[LABEL_REAL] * cfg.n_calibration,
        source="simulator:calibration_pseudo", seed=cfg.seed,
    )

    raw_blocks: list[np.ndarray] = []
    regen_blocks: list[np.ndarray] = []
    labels: list[str] = []

    content = draw(cfg.real, cfg.n_test_real)
    raw_blocks.append(content)
    regen_blocks.append(content + s_known + align_noise(cfg.n_test_real))
    labels += [LABEL_REAL] * cfg.n_test_real

    content = draw(cfg.known_fake, cfg.n_test_known_fake)
    raw_blocks.append(content + s_known)
    regen_blocks.append(content + s_known + beta * s_known + align_noise(cfg.n_test_known_fake))
    labels += [LABEL_KNOWN] * cfg.n_test_known_fake

    for g in cfg.unknown:
        cluster = g.content or cfg.real
        sig = _as_vector(g.signature, d, "signature")
        content = draw(cluster, cfg.n_test_per_unknown)
        raw_blocks.append(content + sig)
        regen_blocks.append(content + s_known + beta * sig + align_noise(cfg.n_test_per_unknown))
        labels += [g.label] * cfg.n_test_per_unknown

    raw = FeatureSet(
        np.vstack(raw_blocks), labels=labels, source="simulator:test_raw",
        seed=cfg.seed, dim=d,
    )
    regen = FeatureSet(
        np.vstack(regen_blocks), labels=labels, source="simulator:test_regen",
        seed=cfg.seed, dim=d,
    )
    return SyntheticWorld(
        reference_pool=reference,
        calibration_reals=calibration_reals,
        calibration_pseudo=calibration_pseudo,
        test=PairedSet(raw=raw, regenerated=regen),
        config=cfg,
    )


def _diag_logpdf(x: np.ndarray, mean: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    z = (x - mean) / sigma
    return -0.5 * (z * z).sum(axis=1) - np.log(sigma).sum() - 0.5 * x.shape[1] * np.log(2 * np.pi)


def world_bayes_oracle(world: SyntheticWorld) -> float:
    """Accuracy of the exact likelihood-ratio classifier on the test set.

    Uses the generating parameters (which the engine never sees); serves
    only as a ceiling reference. Ties go to fake.
    """
    cfg = world.config
    x = world.test.raw.as_float64()
    labels = world.test_labels

    log_real = _diag_logpdf(x, cfg.real.mean, cfg.real.sigma)
    fake_classes = [(cfg.known_fake.mean + cfg.known_signature, cfg.known_fake.sigma)]
    for g in cfg.unknown:
        cluster = g.content or cfg.real
        fake_classes.append((cluster.mean + g.signature, cluster.sigma))
    fake_logs = np.stack([_diag_logpdf(x, m, s) for m, s in fake_classes])
    peak = fake_logs.max(axis=0)
    log_fake = peak + np.log(np.exp(fake_logs - peak).sum(axis=0)) - np.log(len(fake_classes))

    pred_fake = log_fake >= log_real
    truth_fake = np.array([lab != LABEL_REAL for lab in labels])
    return float((pred_fake == truth_fake).mean())


# ---------------------------------------------------------------------------
# canned configurations
#
# Signatures are spread uniformly across dimensions so per-sample activation
# pruning only grazes them. u1 is the all-positive direction, u2 the
# alternating-sign direction orthogonal to it.


def _spread_signature(dim: int, norm: float, alternating: bool) -> np.ndarray:
    u = np.ones(dim)
    if alternating:
        u[1::2] = -1.0
    return norm * u / np.sqrt(dim)


def default_world_config(seed: int = 7) -> SyntheticWorldConfig:
    """The pinned desk-scale world: shared unit content cluster, signature
    norms six cluster sigmas, residual factor 0.6, alignment noise 0.5."""
    d = 16
    content = ClusterSpec.of(d, 0.0, 1.0)
    return SyntheticWorldConfig(
        dim=d,
        real=content,
        known_fake=content,
        known_signature=_spread_signature(d, 6.0, alternating=False),
        unknown=(
            GeneratorSpec("genA", _spread_signature(d, 6.0, alternating=True)),
        ),
        alignment_noise=0.5,
        residual_factor=0.6,
        n_reference=3000,
        n_calibration=1000,
        n_test_real=1000,
        n_test_known_fake=1000,
        n_test_per_unknown=1000,
        seed=seed,
    )


def wukong_world_config(seed: int = 11) -> SyntheticWorldConfig:
    """Unknown generator whose signature equals the known one: its fakes
    align with the reference already in raw space and are caught at stage 1."""
    d = 16
    content = ClusterSpec.of(d, 0.0, 1.0)
    s_known = _spread_signature(d, 6.0, alternating=False)
    return SyntheticWorldConfig(
        dim=d,
        real=content,
        known_fake=content,
        known_signature=s_known,
        unknown=(GeneratorSpec("mimic", s_known.copy()),),
        alignment_noise=0.5,
        residual_factor=0.6,
        n_reference=600,
        n_calibration=400,
        n_test_real=300,
        n_test_known_fake=300,
        n_test_per_unknown=300,
        seed=seed,
    )


def outlier_world_config(seed: int = 13) -> SyntheticWorldConfig:
    """Reference pool contaminated with a tight clump of content-region
    outliers. With k=1 a single outlier can be the nearest neighbor, so
    real-looking samples score near-zero distances and accuracy drops;
    k=20 reaches past the clump (8 outliers < k) and recovers."""
    d = 16
    content = ClusterSpec.of(d, 0.0, 1.0)
    return SyntheticWorldConfig(
        dim=d,
        real=content,
        known_fake=content,
        known_signature=_spread_signature(d, 6.0, alternating=False),
        unknown=(
            GeneratorSpec("genA", _spread_signature(d, 6.0, alternating=True)),
        ),
        alignment_noise=0.5,
        residual_factor=0.6,
        n_reference=600,
        n_calibration=400,
        n_test_real=300,
        n_test_known_fake=300,
        n_test_per_unknown=300,
        seed=seed,
        outlier_count=8,
        outlier_cluster=ClusterSpec.of(d, 0.0, 0.5),
    )


# ---------------------------------------------------------------------------
# JSON config document


def _cluster_to_json(c: ClusterSpec | None):
    if c is None:
        return None
    return {"mean": c.mean.tolist(), "sigma": c.sigma.tolist()}


def config_to_json(cfg: SyntheticWorldConfig) -> str:
    doc = {
        "dim": cfg.dim,
        "seed": cfg.seed,
        "real": _cluster_to_json(cfg.real),
        "known_fake": _cluster_to_json(cfg.known_fake),
        "known_signature": cfg.known_signature.tolist(),
        "unknown": [
            {
                "id": g.generator_id,
                "signature": np.asarray(g.signature, dtype=np.float64).tolist(),
                "content": _cluster_to_json(g.content),
            }
            for g in cfg.unknown
        ],
        "alignment_noise": cfg.alignment_noise,
        "residual_factor": cfg.residual_factor,
        "counts": {
            "reference": cfg.n_reference,
            "calibration": cfg.n_calibration,
            "test_real": cfg.n_test_real,
            "test_known_fake": cfg.n_test_known_fake,
            "test_per_unknown": cfg.n_test_per_unknown,
        },
        "outliers": {
            "count": cfg.outlier_count,
            "cluster": _cluster_to_json(cfg.outlier_cluster),
        },
    }
    return json.dumps(doc, indent=2)


def config_from_json(text: str | Path) -> SyntheticWorldConfig:
    """Parse a world config document (see config_to_json for the schema).

    Cluster means/sigmas may be scalars (broadcast) or length-dim lists.
    """
    if isinstance(text, Path):
        text = text.read_text(encoding="utf-8")
    doc = json.loads(text)
    dim = int(doc["dim"])

    def cluster(node, fallback=None) -> ClusterSpec | None:
        if node is None:
            return fallback
        return ClusterSpec.of(dim, node.get("mean", 0.0), node.get("sigma", 1.0))

    counts = doc.get("counts", {})
    outliers = doc.get("outliers", {}) or {}
    return SyntheticWorldConfig(
        dim=dim,
        real=cluster(doc.get("real"), ClusterSpec.of(dim)),
        known_fake=cluster(doc.get("known_fake"), ClusterSpec.of(dim)),
        known_signature=_as_vector(doc["known_signature"], dim, "known signature"),
        unknown=tuple(
            GeneratorSpec(
                generator_id=str(g["id"]),
                signature=_as_vector(g["signature"], dim, "signature"),
                content=cluster(g.get("content")),
            )
            for g in doc.get("unknown", [])
        ),
        alignment_noise=float(doc.get("alignment_noise", 0.0)),
        residual_factor=float(doc.get("residual_factor", 0.0)),
        n_reference=int(counts.get("reference", 1000)),
        n_calibration=int(counts.get("calibration", 1000)),
        n_test_real=int(counts.get("test_real", 1000)),
        n_test_known_fake=int(counts.get("test_known_fake", 1000)),
        n_test_per_unknown=int(counts.get("test_per_unknown", 1000)),
        seed=int(doc.get("seed", 0)),
        outlier_count=int(outliers.get("count", 0)),
        outlier_cluster=cluster(outliers.get("cluster")),
    )

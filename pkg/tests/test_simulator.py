from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from pda.calibration import calibrate_threshold, pipeline_distances
from pda.featstore import FeatureSet
from pda.knnindex import KnnConfig, ReferenceSet
from pda.simulator import (
    ClusterSpec,
    GeneratorSpec,
    SyntheticWorldConfig,
    config_from_json,
    config_to_json,
    default_world_config,
    outlier_world_config,
    sample_world,
    world_bayes_oracle,
    wukong_world_config,
)


def tiny_config(**overrides) -> SyntheticWorldConfig:
    base = replace(
        default_world_config(seed=5),
        n_reference=50,
        n_calibration=30,
        n_test_real=30,
        n_test_known_fake=30,
        n_test_per_unknown=30,
    )
    return replace(base, **overrides)


def test_determinism_bitwise():
    cfg = tiny_config()
    w1 = sample_world(cfg)
    w2 = sample_world(cfg)
    assert w1.reference_pool.matrix.tobytes() == w2.reference_pool.matrix.tobytes()
    assert w1.calibration_pseudo.matrix.tobytes() == w2.calibration_pseudo.matrix.tobytes()
    assert w1.test.raw.matrix.tobytes() == w2.test.raw.matrix.tobytes()
    assert w1.test.regenerated.matrix.tobytes() == w2.test.regenerated.matrix.tobytes()
    assert w1.test_labels == w2.test_labels


def test_seed_changes_world():
    w1 = sample_world(tiny_config())
    w2 = sample_world(replace(tiny_config(), seed=6))
    assert not np.array_equal(w1.test.raw.matrix, w2.test.raw.matrix)


def test_degenerate_alignment_beta_zero():
    """beta=0, sigma_a=0: every regenerated sample is content + known signature."""
    cfg = tiny_config(residual_factor=0.0, alignment_noise=0.0)
    w = sample_world(cfg)
    labels = np.array(w.test_labels)
    raw = w.test.raw.as_float64()
    regen = w.test.regenerated.as_float64()
    s_known = cfg.known_signature
    s_g = cfg.unknown[0].signature
    # reals: regen == raw + s_known
    sel = labels == "real"
    assert np.allclose(regen[sel], raw[sel] + s_known, atol=1e-5)
    # unknown fakes: regen == raw - s_g + s_known (their own artifact erased)
    sel = labels == cfg.unknown[0].label
    assert np.allclose(regen[sel], raw[sel] - s_g + s_known, atol=1e-5)


def test_additive_geometry_beta_one():
    """beta=1, sigma_a=0: regenerated unknown fakes keep their full signature."""
    cfg = tiny_config(residual_factor=1.0, alignment_noise=0.0)
    w = sample_world(cfg)
    labels = np.array(w.test_labels)
    raw = w.test.raw.as_float64()
    regen = w.test.regenerated.as_float64()
    sel = labels == cfg.unknown[0].label
    # regen = content + s_known + s_g = raw + s_known
    assert np.allclose(regen[sel], raw[sel] + cfg.known_signature, atol=1e-5)
    offsets = regen[sel] - (raw[sel] - cfg.unknown[0].signature + cfg.known_signature)
    norms = np.sqrt((offsets**2).sum(axis=1))
    expected = np.sqrt((cfg.unknown[0].signature ** 2).sum())
    assert np.allclose(norms, expected, atol=1e-4)


def test_bayes_oracle_overlapping_clusters():
    d = 16
    cfg = tiny_config(
        unknown=(GeneratorSpec("ghost", np.zeros(d)),),
        n_test_known_fake=0,
        n_test_real=100,
        n_test_per_unknown=100,
    )
    w = sample_world(cfg)
    acc = world_bayes_oracle(w)
    assert abs(acc - 0.5) <= 0.03


def test_bayes_oracle_separated_and_single_class():
    w = sample_world(tiny_config(n_test_real=100, n_test_known_fake=100,
                                 n_test_per_unknown=100))
    assert world_bayes_oracle(w) >= 0.99

    only_real = sample_world(tiny_config(n_test_known_fake=0, n_test_per_unknown=0,
                                         n_test_real=50))
    assert world_bayes_oracle(only_real) == 1.0


def test_directional_regen_separation(small_world):
    """Mean regenerated distance: unknown fakes above reals (directional)."""
    from pda.pruning import PruneConfig
    from pda.reduction import fit_pca

    prune = PruneConfig(90)
    from pda.pruning import prune_set

    model = fit_pca(prune_set(small_world.reference_pool, prune))
    ref = ReferenceSet(model.fitted_points)
    knn = KnnConfig(5)
    labels = np.array(small_world.test_labels)
    d_regen = pipeline_distances(small_world.test.regenerated, prune, model, ref, knn)
    mean_real = d_regen[labels == "real"].mean()
    mean_unknown = d_regen[np.char.startswith(labels, "unknown_fake")].mean()
    assert mean_unknown > mean_real


def test_label_blindness_shuffle(small_world):
    """Permuting labels changes no verdict: the engine never reads them."""
    from pda.detector import detect_batch, paired_regenerator
    from pda.detector import Pipeline
    from pda.pruning import PruneConfig, prune_set
    from pda.reduction import fit_pca

    prune = PruneConfig(90)
    model = fit_pca(prune_set(small_world.reference_pool, prune))
    ref = ReferenceSet(model.fitted_points)
    knn = KnnConfig(5)
    th = calibrate_threshold(small_world.calibration_pseudo, model, ref, knn, 95.0, prune)
    pipe = Pipeline(prune=prune, model=model, ref=ref, knn=knn, threshold=th)
    regen = paired_regenerator(small_world.test)

    base = detect_batch(small_world.test.raw, pipe, regen)

    rng = np.random.default_rng(0)
    labels = list(small_world.test_labels)
    rng.shuffle(labels)
    shuffled_raw = FeatureSet(
        small_world.test.raw.matrix, labels=labels, source="shuffled"
    )
    out = detect_batch(shuffled_raw, pipe, regen)
    assert out.verdicts == base.verdicts


def test_outlier_world_contains_outliers():
    cfg = outlier_world_config()
    w = sample_world(cfg)
    assert len(w.reference_pool) == cfg.n_reference + cfg.outlier_count
    # outliers sit near the content cluster, i.e. far from the signed pool mean
    pool = w.reference_pool.as_float64()
    proj = pool @ (cfg.known_signature / np.linalg.norm(cfg.known_signature))
    assert (proj < np.linalg.norm(cfg.known_signature) / 3).sum() == cfg.outlier_count


def test_wukong_signature_matches_known():
    cfg = wukong_world_config()
    assert np.array_equal(cfg.unknown[0].signature, cfg.known_signature)


def test_config_validation():
    d = 16
    with pytest.raises(ValueError, match="residual factor"):
        tiny_config(residual_factor=1.5)
    with pytest.raises(ValueError, match="alignment noise"):
        tiny_config(alignment_noise=-0.1)
    with pytest.raises(ValueError, match="sigma must be positive"):
        ClusterSpec.of(d, 0.0, 0.0)
    with pytest.raises(ValueError, match="length-16"):
        tiny_config(known_signature=np.ones(4))


def test_config_json_round_trip():
    cfg = default_world_config()
    doc = config_to_json(cfg)
    back = config_from_json(doc)
    assert config_to_json(back) == doc
    assert sample_world(back).test.raw.matrix.tobytes() == \
        sample_world(cfg).test.raw.matrix.tobytes()

    outlier = outlier_world_config()
    assert config_to_json(config_from_json(config_to_json(outlier))) == config_to_json(outlier)

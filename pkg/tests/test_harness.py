from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from pda.detector import Verdict
from pda.featstore import FeatureSet
from pda.harness import (
    EvalResult,
    PipelineSettings,
    SweepSpec,
    average_fourier_spectrum,
    evaluate,
    fourier_magnitude,
    histogram_table,
    mean_accuracy,
    perturb_features,
    read_pgm,
    read_report,
    run_sweep,
    run_world,
    write_report,
)
from pda.reduction import TsneConfig
from pda.simulator import default_world_config, sample_world


def v_fake1(d=0.5):
    return Verdict("fake", 1, d, None, 1.0)


def v_real2(d=2.0, dr=0.5):
    return Verdict("real", 2, d, dr, 1.0)


def v_fake2(d=2.0, dr=3.0):
    return Verdict("fake", 2, d, dr, 1.0)


# --------------------------------------------------------------------------
# metrics


def test_evaluate_hand_count():
    # 10 samples, 9 correct: 6 at stage 1, 3 at stage 2
    verdicts = [v_fake1() for _ in range(6)] + [v_real2() for _ in range(3)] + [v_fake2()]
    labels = ["fake"] * 6 + ["real"] * 3 + ["real"]  # last one wrong
    result = evaluate(verdicts, labels)
    assert result.n_correct_stage1 == 6
    assert result.n_correct_stage2 == 3
    assert result.acc == 90.0


def test_evaluate_all_correct_and_all_wrong():
    verdicts = [v_fake1(), v_real2()]
    assert evaluate(verdicts, ["fake", "real"]).acc == 100.0
    assert evaluate(verdicts, ["real", "fake"]).acc == 0.0


def test_evaluate_branch_counts_and_breakdown():
    verdicts = [v_fake1(), v_fake1(), v_real2(), v_fake2()]
    labels = ["known_fake", "unknown_fake:g1", "real", "unknown_fake:g1"]
    result = evaluate(verdicts, labels)
    assert result.branch_counts["stage1_fake"] == {"real": 0, "fake": 2}
    assert result.branch_counts["stage2_real"] == {"real": 1, "fake": 0}
    assert result.branch_counts["stage2_fake"] == {"real": 0, "fake": 1}
    assert set(result.per_generator) == {"known_fake", "unknown_fake:g1"}
    g1 = result.per_generator["unknown_fake:g1"]
    assert g1.n_total == 3  # the real sample plus both g1 fakes
    assert g1.acc == 100.0


def test_evaluate_errors():
    with pytest.raises(ValueError, match="verdicts vs"):
        evaluate([v_fake1()], ["fake", "real"])
    with pytest.raises(ValueError, match="empty"):
        evaluate([], [])


def test_mean_accuracy_values():
    # six per-generator accuracies at the default threshold percentile
    accs = [96.00, 98.09, 97.87, 98.12, 98.19, 92.10]
    assert abs(mean_accuracy(accs) - 96.73) <= 0.005
    assert mean_accuracy([90.0, 100.0]) == 95.0
    single = evaluate([v_fake1()], ["fake"])
    assert mean_accuracy([single]) == 100.0
    with pytest.raises(ValueError):
        mean_accuracy([])


# --------------------------------------------------------------------------
# sweeps (pca reduction keeps these fast)


@pytest.fixture(scope="module")
def sweep_world():
    cfg = replace(
        default_world_config(seed=21),
        n_reference=120,
        n_calibration=80,
        n_test_real=60,
        n_test_known_fake=60,
        n_test_per_unknown=60,
    )
    return sample_world(cfg)


PCA_BASE = PipelineSettings(reduce="pca", k=10, q=95.0)


def test_sweep_q_monotone_tau(sweep_world):
    spec = SweepSpec(axis="q", values=tuple(range(91, 100)), base=PCA_BASE)
    cells = run_sweep(spec, sweep_world)
    taus = [c.tau for c in cells]
    assert all(c.error is None for c in cells)
    assert all(a <= b for a, b in zip(taus, taus[1:]))


def test_sweep_prune_on_off(sweep_world):
    spec = SweepSpec(axis="prune", values=(True, False), base=PCA_BASE)
    cells = run_sweep(spec, sweep_world)
    assert len(cells) == 2
    assert all(c.result is not None for c in cells)


def test_sweep_reduce_axis(sweep_world):
    spec = SweepSpec(
        axis="reduce", values=("pca",), base=replace(PCA_BASE, reduce="pca")
    )
    cells = run_sweep(spec, sweep_world)
    assert cells[0].result is not None


def test_sweep_cell_failure_recorded(sweep_world):
    spec = SweepSpec(axis="k", values=(5, 10_000), base=PCA_BASE)
    cells = run_sweep(spec, sweep_world)
    assert cells[0].error is None
    assert cells[1].error is not None and cells[1].result is None


def test_sweep_determinism(sweep_world):
    spec = SweepSpec(axis="k", values=(3, 7), base=PCA_BASE)
    a = run_sweep(spec, sweep_world)
    b = run_sweep(spec, sweep_world)
    assert [c.tau for c in a] == [c.tau for c in b]
    assert [c.result.acc for c in a] == [c.result.acc for c in b]


def test_run_world_matches_detector_path(sweep_world):
    """The staged world runner and the lazy detector agree verdict by verdict."""
    from pda.calibration import calibrate_threshold
    from pda.detector import Pipeline, detect_batch, paired_regenerator
    from pda.knnindex import KnnConfig, ReferenceSet
    from pda.pruning import prune_set
    from pda.reduction import fit_pca

    settings = PCA_BASE
    run = run_world(sweep_world, settings)

    prune = settings.prune
    model = fit_pca(prune_set(sweep_world.reference_pool, prune))
    ref = ReferenceSet(model.fitted_points)
    knn = KnnConfig(settings.k)
    th = calibrate_threshold(
        sweep_world.calibration_pseudo, model, ref, knn, settings.q, prune
    )
    pipe = Pipeline(prune=prune, model=model, ref=ref, knn=knn, threshold=th)
    batch = detect_batch(sweep_world.test.raw, pipe, paired_regenerator(sweep_world.test))
    assert batch.ok
    assert th.tau == run.threshold.tau
    for staged, lazy in zip(run.verdicts, batch.verdicts):
        assert staged.label == lazy.label and staged.stage == lazy.stage
        assert staged.d_raw == lazy.d_raw


# --------------------------------------------------------------------------
# perturbation


def test_perturb_identity_and_determinism(rng):
    fset = FeatureSet(rng.normal(size=(20, 5)))
    same = perturb_features(fset, 0.0, seed=1)
    assert same.matrix.tobytes() == fset.matrix.tobytes()
    a = perturb_features(fset, 0.3, seed=7)
    b = perturb_features(fset, 0.3, seed=7)
    c = perturb_features(fset, 0.3, seed=8)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert not np.array_equal(a.matrix, c.matrix)
    with pytest.raises(ValueError):
        perturb_features(fset, -1.0, seed=0)


def test_accuracy_nonincreasing_in_sigma_on_average(sweep_world):
    """Across seeds, heavy feature noise does not beat the clean run by
    more than a one-point margin (pca reduction keeps this cheap)."""
    clean = run_world(sweep_world, PCA_BASE).result.acc
    noisy_accs = []
    for seed in range(5):
        noisy_raw = perturb_features(sweep_world.test.raw, 2.0, seed=seed)
        noisy_regen = perturb_features(sweep_world.test.regenerated, 2.0, seed=seed + 100)
        from pda.featstore import PairedSet
        from pda.simulator import SyntheticWorld

        world = SyntheticWorld(
            reference_pool=sweep_world.reference_pool,
            calibration_reals=sweep_world.calibration_reals,
            calibration_pseudo=sweep_world.calibration_pseudo,
            test=PairedSet(raw=noisy_raw, regenerated=noisy_regen),
            config=sweep_world.config,
        )
        noisy_accs.append(run_world(world, PCA_BASE).result.acc)
    assert np.mean(noisy_accs) <= clean + 1.0


# --------------------------------------------------------------------------
# frequency analysis


def test_spectrum_constant_image_dc_only():
    img = np.full((8, 8), 3.0)
    spec = average_fourier_spectrum([img])
    center = (4, 4)  # fftshift puts the zero-frequency bin here
    assert spec[center] == pytest.approx(np.log1p(3.0 * 64))
    off = spec.copy()
    off[center] = 0.0
    assert np.all(np.abs(off) < 1e-9)


def test_spectrum_cosine_twin_peaks():
    n = 16
    f = 3
    x = np.arange(n)
    img = np.tile(np.cos(2 * np.pi * f * x / n), (n, 1))
    mag = fourier_magnitude(img)
    center = n // 2
    peaks = {(center, center - f), (center, center + f)}
    got = set(map(tuple, np.argwhere(mag > mag.max() / 2)))
    assert got == peaks


def test_parseval_identity(rng):
    """Unnormalized forward transform: sum|F|^2 == N * sum|x|^2."""
    for _ in range(20):
        img = rng.normal(size=(8, 8))
        mag = fourier_magnitude(img)
        lhs = (mag**2).sum()
        rhs = 64.0 * (img**2).sum()
        assert abs(lhs - rhs) <= 1e-9 * rhs


def test_spectrum_input_validation(rng):
    with pytest.raises(ValueError, match="no images"):
        average_fourier_spectrum([])
    with pytest.raises(ValueError, match="shape"):
        average_fourier_spectrum([np.zeros((4, 4)), np.zeros((5, 4))])
    with pytest.raises(ValueError, match="2-D"):
        fourier_magnitude(np.zeros(16))


def test_read_pgm(tmp_path):
    img = (np.arange(12).reshape(3, 4) * 20).astype(np.uint8)
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n# comment line\n4 3\n255\n" + img.tobytes())
    back = read_pgm(path)
    assert np.array_equal(back, img.astype(float))

    wide = (np.arange(6).reshape(2, 3) * 1000).astype(">u2")
    p16 = tmp_path / "b.pgm"
    p16.write_bytes(b"P5 3 2 65535\n" + wide.tobytes())
    assert np.array_equal(read_pgm(p16), wide.astype(float))

    bad = tmp_path / "c.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(ValueError, match="not a binary PGM"):
        read_pgm(bad)

    trunc = tmp_path / "d.pgm"
    trunc.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ValueError, match="truncated"):
        read_pgm(trunc)


# --------------------------------------------------------------------------
# delimited outputs


def test_report_round_trip(tmp_path):
    verdicts = [v_fake1(0.25), v_real2(2.5, 0.75), None]
    path = tmp_path / "report.tsv"
    write_report(path, verdicts, errors=[(2, "regen failed")])
    text = path.read_text()
    assert "# summary" in text and "# errors\t1" in text
    ids, back = read_report(path)
    assert ids == ["0", "1"]
    assert back[0].stage == 1 and back[0].d_regen is None
    assert back[1].stage == 2 and back[1].d_regen == 0.75


def test_histogram_table():
    lines = histogram_table({"real": np.array([0.0, 0.5, 1.0]), "fake": np.array([2.0])}, bins=4)
    assert lines[0] == "group\tbin_left\tbin_right\tcount"
    assert len(lines) == 1 + 2 * 4
    counts = sum(int(l.split("\t")[3]) for l in lines[1:])
    assert counts == 4


def test_eval_result_identity():
    r = EvalResult(
        n_correct_stage1=3, n_correct_stage2=2, n_total=10,
        branch_counts={}, per_generator={},
    )
    assert r.acc == 100.0 * (3 + 2) / 10


def test_sweep_tsne_and_joint_diagnostic(small_world):
    """t-SNE sweep cells and the transductive diagnostic both execute."""
    tiny = TsneConfig(perplexity=8, iterations=60, exaggeration_iters=15, seed=4)
    base = PipelineSettings(reduce="tsne", tsne=tiny, k=5, q=95.0)
    cells = run_sweep(SweepSpec(axis="k", values=(3, 5), base=base), small_world)
    assert all(c.result is not None for c in cells)

    joint = run_world(small_world, replace(base, reembed_joint=True))
    assert joint.result.n_total == len(small_world.test)
    assert joint.threshold.tau > 0

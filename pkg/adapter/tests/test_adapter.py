from __future__ import annotations

import shutil
import sys
from pathlib import Path

import cv2
import numpy as np
import pytest

from pda_adapter.cli import main
from pda_adapter.features import AdapterConfig, extract_features
from pda_adapter.pdaf import read_pdaf, write_pdaf
from pda_adapter.regen import read_manifest, regenerate_and_extract
from pda_adapter.transform import BLUR_KERNELS, JPEG_QUALITY_FACTORS, transform_images

CFG = AdapterConfig(backbone="resnet18", weights="none", batch_size=4, seed=3)


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory) -> Path:
    rng = np.random.default_rng(11)
    d = tmp_path_factory.mktemp("imgs")
    for i in range(4):
        img = rng.integers(0, 255, size=(64, 48, 3)).astype(np.uint8)
        cv2.imwrite(str(d / f"img_{i}.png"), img)
    # a duplicate of the first image, sorted in after it
    shutil.copy(d / "img_0.png", d / "img_0_copy.png")
    return d


def test_extract_counts_and_duplicates(image_dir):
    matrix, kept = extract_features(image_dir, CFG)
    assert matrix.shape == (5, 512)
    assert [p.name for p in kept] == sorted(p.name for p in kept)
    # duplicate file -> identical rows (frozen backbone in eval mode)
    names = [p.name for p in kept]
    i, j = names.index("img_0.png"), names.index("img_0_copy.png")
    assert np.array_equal(matrix[i], matrix[j])


def test_extract_empty_dir(tmp_path):
    matrix, kept = extract_features(tmp_path, CFG)
    assert matrix.shape == (0, 512)
    assert kept == []


def test_extract_skips_undecodable(image_dir, tmp_path):
    work = tmp_path / "mixed"
    work.mkdir()
    for p in image_dir.glob("img_0*.png"):
        shutil.copy(p, work / p.name)
    (work / "broken.png").write_bytes(b"not an image at all")
    matrix, kept = extract_features(work, CFG)
    assert matrix.shape[0] == 2
    assert all(p.name != "broken.png" for p in kept)


def test_output_passes_engine_validation(image_dir, tmp_path):
    """The engine's validate() reports zero findings on adapter output."""
    from pda.featstore import load_feature_file, validate

    out = tmp_path / "features.pdaf"
    assert main([
        "extract", "--in", str(image_dir), "--out", str(out),
        "--manifest", str(tmp_path / "manifest.tsv"),
        "--backbone", "resnet18", "--batch-size", "4", "--seed", "3",
    ]) == 0
    fset = load_feature_file(out)
    report = validate(fset)
    assert report.ok, report.findings
    assert len(fset) == 5 and fset.dim == 512

    manifest = read_manifest(tmp_path / "manifest.tsv")
    assert [p.name for _, p in manifest] == sorted(p.name for _, p in manifest)


def test_identity_regen_round_trip_through_engine(image_dir, tmp_path):
    """detect() with the adapter as external regenerator: identity stub
    gives d_regen == d_raw for every stage-2 sample."""
    from pda.calibration import threshold_from_distances
    from pda.detector import Pipeline, command_regenerator, detect_batch
    from pda.featstore import load_feature_file
    from pda.knnindex import KnnConfig, ReferenceSet
    from pda.reduction import fit_pca, model_id

    features = tmp_path / "features.pdaf"
    manifest = tmp_path / "manifest.tsv"
    assert main([
        "extract", "--in", str(image_dir), "--out", str(features),
        "--manifest", str(manifest),
        "--backbone", "resnet18", "--batch-size", "4", "--seed", "3",
    ]) == 0

    fset = load_feature_file(features)
    model = fit_pca(fset)
    # reference shifted away from the samples so every one reaches stage 2
    ref = ReferenceSet(model.fitted_points + 100.0, origin="adapter test")
    knn = KnnConfig(1)
    threshold = threshold_from_distances(
        np.full(20, 1e-12), 95.0, knn, provenance=model_id(model)
    )
    pipe = Pipeline(prune=None, model=model, ref=ref, knn=knn, threshold=threshold)

    regen_cmd = (
        f"{sys.executable} -m pda_adapter.cli regen "
        f"--manifest {manifest} --features {features} "
        f"--generator identity --backbone resnet18 --batch-size 4 --seed 3 "
        "{in} {out}"
    )
    batch = detect_batch(fset, pipe, command_regenerator(regen_cmd))
    assert batch.ok, batch.errors
    stage2 = [v for v in batch.verdicts if v is not None and v.stage == 2]
    assert stage2, "expected stage-2 samples with a near-zero threshold"
    for v in stage2:
        assert v.d_regen == v.d_raw


def test_regen_positional_mode(image_dir, tmp_path):
    features = tmp_path / "f.pdaf"
    manifest = tmp_path / "m.tsv"
    assert main([
        "extract", "--in", str(image_dir), "--out", str(features),
        "--manifest", str(manifest),
        "--backbone", "resnet18", "--batch-size", "4", "--seed", "3",
    ]) == 0
    out = tmp_path / "r.pdaf"
    assert main([
        "regen", "--manifest", str(manifest), "--generator", "identity",
        "--backbone", "resnet18", "--batch-size", "4", "--seed", "3",
        str(features), str(out),
    ]) == 0
    raw, _ = read_pdaf(features)
    regen, _ = read_pdaf(out)
    assert np.array_equal(raw, regen)  # identity generator, frozen backbone


def test_regen_empty_input(image_dir, tmp_path):
    manifest = tmp_path / "m.tsv"
    manifest.write_text("", encoding="utf-8")
    rows, failed = regenerate_and_extract(manifest, CFG)
    assert rows.shape[0] == 0 and failed == []


def test_malformed_manifest(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\ta.png\njust-one-field\n", encoding="utf-8")
    with pytest.raises(ValueError, match="bad.tsv:2: malformed manifest line"):
        read_manifest(bad)


def test_unknown_generator(image_dir, tmp_path):
    cfg = AdapterConfig(backbone="resnet18", generator="teleporter")
    manifest = tmp_path / "m.tsv"
    imgs = sorted(image_dir.glob("*.png"))
    manifest.write_text(f"0\t{imgs[0]}\n", encoding="utf-8")
    rows, failed = regenerate_and_extract(manifest, cfg)
    assert failed == [0]


def test_all_six_transform_settings(image_dir, tmp_path):
    for k in BLUR_KERNELS:
        out = transform_images(image_dir, f"gaussian_blur:{k}", tmp_path / f"blur{k}")
        assert len(out) == 5
    for qf in JPEG_QUALITY_FACTORS:
        out = transform_images(image_dir, f"jpeg:{qf}", tmp_path / f"jpeg{qf}")
        assert len(out) == 5
        assert all(p.suffix == ".jpg" for p in out)


def test_blur_of_constant_image_unchanged(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    img = np.full((32, 32, 3), 128, dtype=np.uint8)
    cv2.imwrite(str(src / "const.png"), img)
    out = transform_images(src, "gaussian_blur:3", tmp_path / "out")
    back = cv2.imread(str(out[0]))
    assert np.array_equal(back, img)


def test_jpeg_twice_executes(tmp_path, image_dir):
    once = transform_images(image_dir, "jpeg:90", tmp_path / "once")
    twice = transform_images(tmp_path / "once", "jpeg:90", tmp_path / "twice")
    assert len(once) == len(twice) == 5


def test_unsupported_transform(image_dir, tmp_path):
    with pytest.raises(ValueError, match="unsupported transform"):
        transform_images(image_dir, "sharpen:1", tmp_path / "x")
    with pytest.raises(ValueError, match="kernel must be one of"):
        transform_images(image_dir, "gaussian_blur:4", tmp_path / "x")
    with pytest.raises(ValueError, match="quality factor must be one of"):
        transform_images(image_dir, "jpeg:42", tmp_path / "x")


def test_pdaf_codec_matches_engine(tmp_path, rng=np.random.default_rng(5)):
    """The adapter's PDAF writer is byte-compatible with the engine's."""
    from pda.featstore import FeatureSet, load_feature_file, save_feature_file

    matrix = rng.normal(size=(6, 7)).astype(np.float32)
    ours = tmp_path / "ours.pdaf"
    theirs = tmp_path / "theirs.pdaf"
    write_pdaf(ours, matrix, labels=["real"] * 6)
    save_feature_file(FeatureSet(matrix, labels=["real"] * 6), theirs)
    assert ours.read_bytes() == theirs.read_bytes()
    back, labels = read_pdaf(theirs)
    assert np.array_equal(back, matrix) and labels == ["real"] * 6

"""Image regeneration backends and the feature-level regen bridge.

The engine invokes ``pda-adapter regen`` through its external-command
contract: a PDAF file of raw feature rows comes in, a PDAF file of
regenerated feature rows goes out, row-aligned. Rows are matched back to
image paths by exact float32 payload against the extraction the manifest
was built from.
"""

from __future__ import annotations

import logging
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .features import AdapterConfig, extract_from_paths
from .pdaf import read_pdaf

logger = logging.getLogger(__name__)


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    """TSV manifest: id<TAB>path, one image per line."""
    entries: list[tuple[str, Path]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: malformed manifest line {line!r}")
        entries.append((parts[0], Path(parts[1])))
    return entries


def regenerate_image(src: Path, dst: Path, cfg: AdapterConfig) -> None:
    """Write the regenerated version of one image.

    ``identity`` copies the file (the stub used by contract tests).
    ``diffusers:<model-id>`` runs an image-to-image diffusion pipeline at the
    generator's native resolution; strength/steps come from the config and
    their best values are deliberately configuration, not constants.
    """
    if cfg.generator == "identity":
        shutil.copy(src, dst)
        return
    if cfg.generator.startswith("diffusers:"):
        _diffusers_img2img(src, dst, cfg)
        return
    raise ValueError(f"unsupported generator {cfg.generator!r}")


def _diffusers_img2img(src: Path, dst: Path, cfg: AdapterConfig) -> None:
    try:
        from diffusers import AutoPipelineForImage2Image
    except ImportError as exc:  # pragma: no cover - heavyweight optional path
        raise RuntimeError(
            "the diffusers backend requires the 'diffusers' package"
        ) from exc
    from PIL import Image

    model_id = cfg.generator.split(":", 1)[1]
    pipe = AutoPipelineForImage2Image.from_pretrained(model_id)
    pipe.to(cfg.device)
    image = Image.open(src).convert("RGB")
    out = pipe(
        prompt="",
        image=image,
        strength=cfg.regen_strength,
        num_inference_steps=cfg.regen_steps,
    ).images[0]
    out.save(dst)


def regenerate_paths(paths: list[Path], cfg: AdapterConfig) -> tuple[np.ndarray, list[int]]:
    """Regenerate images and re-extract features, aligned to input order.

    Returns the feature matrix and the indices of inputs whose regeneration
    failed (their rows are zero-filled and must be surfaced by the caller).
    """
    failed: list[int] = []
    with tempfile.TemporaryDirectory(prefix="pda-adapter-regen-") as tmp:
        tmp_paths: list[Path] = []
        for i, src in enumerate(paths):
            dst = Path(tmp) / f"{i:08d}{src.suffix or '.png'}"
            try:
                regenerate_image(src, dst, cfg)
            except (OSError, RuntimeError, ValueError) as exc:
                logger.warning("regeneration failed for %s: %s", src, exc)
                failed.append(i)
                continue
            tmp_paths.append(dst)
        matrix, kept = extract_from_paths(tmp_paths, cfg)
        if len(kept) != len(tmp_paths):
            decoded = {p for p in kept}
            for i, p in enumerate(tmp_paths):
                if p not in decoded:
                    failed.append(int(p.stem))
        out_dim = matrix.shape[1] if matrix.size else 0
        rows = np.zeros((len(paths), out_dim), dtype=np.float32)
        j = 0
        for i in range(len(paths)):
            if i in failed:
                continue
            rows[i] = matrix[j]
            j += 1
    return rows, sorted(set(failed))


def regenerate_and_extract(
    manifest_path: str | Path, cfg: AdapterConfig
) -> tuple[np.ndarray, list[int]]:
    """Regenerate every manifest image; rows aligned to manifest order."""
    entries = read_manifest(manifest_path)
    return regenerate_paths([p for _, p in entries], cfg)


def match_rows_to_manifest(
    in_pdaf: str | Path,
    features_pdaf: str | Path,
    manifest_path: str | Path,
) -> list[Path]:
    """Map incoming raw feature rows back to their image paths.

    Rows are matched by exact float32 payload against the extraction stored
    alongside the manifest (same row order), which the engine round-trips
    bitwise.
    """
    incoming, _ = read_pdaf(in_pdaf)
    reference, _ = read_pdaf(features_pdaf)
    entries = read_manifest(manifest_path)
    if len(reference) != len(entries):
        raise ValueError(
            f"manifest lists {len(entries)} images but the feature file has "
            f"{len(reference)} rows"
        )
    index = {reference[i].tobytes(): i for i in range(len(reference))}
    paths: list[Path] = []
    for row_no, row in enumerate(incoming):
        idx = index.get(row.tobytes())
        if idx is None:
            raise ValueError(
                f"input row {row_no} does not match any extracted feature row"
            )
        paths.append(entries[idx][1])
    return paths

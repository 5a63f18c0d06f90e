"""Pixel-space robustness transforms: Gaussian blur and JPEG compression."""

from __future__ import annotations

from pathlib import Path

import cv2

BLUR_KERNELS = (3, 5, 7)
JPEG_QUALITY_FACTORS = (90, 70, 50)


def transform_images(src_dir: str | Path, transform: str, out_dir: str | Path) -> list[Path]:
    """Apply a named transform to every image in a directory.

    Names: ``gaussian_blur:<k>`` with kernel k in {3, 5, 7}, or
    ``jpeg:<qf>`` with quality factor in {90, 70, 50}.
    """
    from .features import list_images

    name, _, arg = transform.partition(":")
    src_dir = Path(src_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if name == "gaussian_blur":
        k = int(arg)
        if k not in BLUR_KERNELS:
            raise ValueError(f"blur kernel must be one of {BLUR_KERNELS}, got {k}")
        for path in list_images(src_dir):
            img = cv2.imread(str(path), cv2.IMREAD_COLOR)
            if img is None:
                continue
            out = out_dir / path.name
            cv2.imwrite(str(out), cv2.GaussianBlur(img, (k, k), 0))
            written.append(out)
        return written

    if name == "jpeg":
        qf = int(arg)
        if qf not in JPEG_QUALITY_FACTORS:
            raise ValueError(
                f"jpeg quality factor must be one of {JPEG_QUALITY_FACTORS}, got {qf}"
            )
        for path in list_images(src_dir):
            img = cv2.imread(str(path), cv2.IMREAD_COLOR)
            if img is None:
                continue
            out = out_dir / (path.stem + ".jpg")
            cv2.imwrite(str(out), img, [cv2.IMWRITE_JPEG_QUALITY, qf])
            written.append(out)
        return written

    raise ValueError(f"unsupported transform {transform!r}")

"""Penultimate-layer feature extraction with a torchvision backbone."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision import models, transforms

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp", ".ppm")

_PREPROCESS = transforms.Compose(
    [
        transforms.ToTensor(),
        transforms.Resize(256, antialias=True),
        transforms.CenterCrop(224),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ]
)


@dataclass
class AdapterConfig:
    """Backbone / generator selection and batching.

    ``weights``: "none" for a seeded random initialization (contract tests),
    "imagenet" for the torchvision pretrained weights, or a path to a
    state-dict checkpoint of a trained detector backbone.
    """

    backbone: str = "resnet50"
    weights: str = "none"
    generator: str = "identity"
    device: str = "cpu"
    batch_size: int = 16
    seed: int = 0
    regen_strength: float = 0.6
    regen_steps: int = 30
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def _strip_head(backbone: str, net: nn.Module) -> tuple[nn.Module, int]:
    if backbone.startswith("resnet"):
        dim = net.fc.in_features
        net.fc = nn.Identity()
        return net, dim
    if backbone.startswith("vgg"):
        dim = net.classifier[-1].in_features
        net.classifier[-1] = nn.Identity()
        return net, dim
    raise ValueError(f"unsupported backbone {backbone!r}")


def load_backbone(cfg: AdapterConfig) -> tuple[nn.Module, int]:
    """Build the feature extractor: the backbone minus its final classifier."""
    factory = getattr(models, cfg.backbone, None)
    if factory is None:
        raise ValueError(f"unsupported backbone {cfg.backbone!r}")
    if cfg.weights == "imagenet":
        net = factory(weights="IMAGENET1K_V1")
    else:
        torch.manual_seed(cfg.seed)
        net = factory(weights=None)
    if cfg.weights not in ("none", "imagenet"):
        state = torch.load(cfg.weights, map_location="cpu")
        net.load_state_dict(state)
    net, dim = _strip_head(cfg.backbone, net)
    net.eval()
    net.to(cfg.device)
    return net, dim


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def load_image(path: str | Path) -> np.ndarray | None:
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        return None
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def extract_from_paths(paths: list[Path], cfg: AdapterConfig) -> tuple[np.ndarray, list[Path]]:
    """Feature rows for each decodable image, order preserved.

    Undecodable images are skipped with a log line; the returned path list
    names the rows actually produced.
    """
    net, dim = load_backbone(cfg)
    rows: list[np.ndarray] = []
    kept: list[Path] = []
    batch: list[torch.Tensor] = []

    def flush() -> None:
        if not batch:
            return
        with torch.no_grad():
            out = net(torch.stack(batch).to(cfg.device))
        rows.extend(out.cpu().numpy().astype(np.float32))
        batch.clear()

    for path in paths:
        img = load_image(path)
        if img is None:
            logger.warning("skipping undecodable image %s", path)
            continue
        kept.append(path)
        batch.append(_PREPROCESS(img))
        if len(batch) >= cfg.batch_size:
            flush()
    flush()
    matrix = np.asarray(rows, dtype=np.float32) if rows else np.zeros((0, dim), np.float32)
    return matrix, kept


def extract_features(images_dir: str | Path, cfg: AdapterConfig) -> tuple[np.ndarray, list[Path]]:
    """One feature row per image in directory-sorted order."""
    return extract_from_paths(list_images(images_dir), cfg)

"""Pixel-space bridge between image directories and the detection engine."""

from .features import AdapterConfig, extract_features, load_backbone
from .pdaf import read_pdaf, write_pdaf
from .regen import read_manifest, regenerate_and_extract, regenerate_image
from .transform import transform_images

__version__ = "0.1.0"

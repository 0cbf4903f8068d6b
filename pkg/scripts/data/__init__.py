"""
Synthetic clips, clip directories and frozen patch features.

This package renders seeded moving-sprite videos with instance ground truth, reads and
writes clip directories (frames, label maps, meta.json), and turns frames into the
patch-feature grids that are both model input and reconstruction target.
"""

from .synth import GeneratorConfig, SpriteVideo, generate_sprite_video, rasterize, shape_area, shape_perimeter
from .features import FeatureEncoderParams, FeatureGrid, extract_features, patch_coordinates
from .frames import load_frames_dir, write_clip, read_clip, list_clip_dirs, load_dataset, instances_from_label_map

__all__ = [
    "GeneratorConfig",
    "SpriteVideo",
    "generate_sprite_video",
    "rasterize",
    "shape_area",
    "shape_perimeter",
    "FeatureEncoderParams",
    "FeatureGrid",
    "extract_features",
    "patch_coordinates",
    "load_frames_dir",
    "write_clip",
    "read_clip",
    "list_clip_dirs",
    "load_dataset",
    "instances_from_label_map",
]

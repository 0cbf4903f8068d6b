# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import torch

from scripts.errors import ContractError
from scripts.nn import check_finite
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)


# ─── SCHEMAS ─────────────────────────────────────────────────────────────────────────
@dataclass
class FeatureEncoderParams:
    """
    Frozen random patch projection standing in for a pretrained backbone.

    projection has shape (P*P*C + 2, D_feature); the two extra rows weight the normalised
    patch-centre coordinates. Rebuilt bit-identically from `seed`, never trained.
    """

    projection: torch.Tensor
    seed: int
    patch_size: int
    channels: int = 3

    def __post_init__(self):
        expected_rows = self.patch_size * self.patch_size * self.channels + 2
        if self.projection.dim() != 2 or self.projection.shape[0] != expected_rows:
            raise ValueError(
                f"projection must have {expected_rows} rows for P={self.patch_size}, C={self.channels}; "
                f"got shape {tuple(self.projection.shape)}"
            )
        self.projection = self.projection.detach()
        self.projection.requires_grad_(False)

    @property
    def d_feature(self) -> int:
        return self.projection.shape[1]

    @classmethod
    def create(cls, seed: int, patch_size: int, d_feature: int, channels: int = 3, dtype=torch.float32):
        """Entries drawn from N(0, (1/sqrt(D_feature))^2) by a generator seeded with `seed`."""
        generator = torch.Generator().manual_seed(seed)
        rows = patch_size * patch_size * channels + 2
        projection = torch.randn(rows, d_feature, generator=generator, dtype=torch.float64) / math.sqrt(d_feature)
        return cls(projection=projection.to(dtype), seed=seed, patch_size=patch_size, channels=channels)


@dataclass
class FeatureGrid:
    """Patch features of T frames: features (T, N, D_feature) with rows*cols == N."""

    features: torch.Tensor
    patch_grid: Tuple[int, int]

    def __post_init__(self):
        if self.features.dim() != 3:
            raise ValueError(f"features must be (T, N, D), got shape {tuple(self.features.shape)}")
        rows, cols = self.patch_grid
        if rows * cols != self.features.shape[1]:
            raise ValueError(f"patch grid {self.patch_grid} does not cover N={self.features.shape[1]}")
        check_finite(self.features, "feature grid")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def num_patches(self) -> int:
        return self.features.shape[1]


# ─── EXTRACTION ──────────────────────────────────────────────────────────────────────
def patch_coordinates(rows: int, cols: int, dtype=torch.float32) -> torch.Tensor:
    """(rows*cols, 2) patch centres as (x, y) in [-1, 1], row-major."""
    ys = (torch.arange(rows, dtype=torch.float64) + 0.5) * 2.0 / rows - 1.0
    xs = (torch.arange(cols, dtype=torch.float64) + 0.5) * 2.0 / cols - 1.0
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x.reshape(-1), grid_y.reshape(-1)], dim=-1).to(dtype)


def extract_features(
    frames: Union[np.ndarray, torch.Tensor], enc: FeatureEncoderParams, patch_size: int = None
) -> FeatureGrid:
    """
    Project flattened patches (plus their centre coordinates) through the frozen matrix.

    Args:
        frames (np.ndarray | torch.Tensor): (T, H, W, C) frames in [0, 1].
        enc (FeatureEncoderParams): Frozen projection.
        patch_size (int, optional): Must match `enc.patch_size` when given.

    Returns:
        FeatureGrid: Features of shape (T, (H/P)*(W/P), D_feature).

    Raises:
        ContractError: If H or W is not divisible by P, or the channel count differs.
    """
    patch = patch_size or enc.patch_size
    if patch != enc.patch_size:
        raise ContractError(f"patch size {patch} does not match the encoder's {enc.patch_size}")
    pixels = torch.as_tensor(np.asarray(frames) if not torch.is_tensor(frames) else frames)
    if pixels.dim() != 4:
        raise ContractError(f"frames must be (T, H, W, C), got shape {tuple(pixels.shape)}")
    num_frames, height, width, channels = pixels.shape
    if height % patch or width % patch:
        raise ContractError(f"frame size {height}x{width} is not divisible by patch size {patch}")
    if channels != enc.channels:
        raise ContractError(f"frames have {channels} channels, encoder expects {enc.channels}")

    dtype = enc.projection.dtype
    rows, cols = height // patch, width // patch
    patches = (
        pixels.to(dtype)
        .reshape(num_frames, rows, patch, cols, patch, channels)
        .permute(0, 1, 3, 2, 4, 5)
        .reshape(num_frames, rows * cols, patch * patch * channels)
    )
    coords = patch_coordinates(rows, cols, dtype).expand(num_frames, -1, -1)
    features = torch.cat([patches, coords], dim=-1) @ enc.projection
    return FeatureGrid(features=features, patch_grid=(rows, cols))

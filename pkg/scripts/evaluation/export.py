# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import torch
from PIL import Image

from scripts.data.frames import to_uint8
from scripts.errors import ContractError
from utils import load_config, save_to_json, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

# slot colours for overlays, cycled when K exceeds the table
PALETTE = np.array(
    [
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (250, 190, 212),
        (0, 128, 128),
        (170, 110, 40),
    ],
    dtype=np.float64,
)
OVERLAY_ALPHA = 0.5
SOFT_MASKS_FILE = "soft_masks.f32"
SOFT_MASKS_META = "soft_masks.json"


def write_label_maps(labels: np.ndarray, out_dir: Path) -> List[Path]:
    """One 8-bit PGM per frame holding the slot index of every pixel."""
    if labels.ndim != 3:
        raise ContractError(f"label maps must be (L, H, W), got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ContractError("slot indices must fit an 8-bit label map")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(labels):
        path = out_dir / f"labels_{t:05d}.pgm"
        Image.fromarray(frame.astype(np.uint8)).save(path)
        paths.append(path)
    return paths


def overlay(frame: np.ndarray, labels: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend a slot colour per pixel into an (H, W, 3) frame in [0, 1]; returns uint8 RGB."""
    colours = PALETTE[labels % len(PALETTE)] / 255.0
    return to_uint8((1.0 - alpha) * np.asarray(frame, dtype=np.float64) + alpha * colours)


def write_overlays(frames: np.ndarray, labels: np.ndarray, out_dir: Path) -> List[Path]:
    if frames.shape[:3] != labels.shape:
        raise ContractError(f"frames {frames.shape[:3]} and label maps {labels.shape} differ in size")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(labels.shape[0]):
        path = out_dir / f"overlay_{t:05d}.png"
        Image.fromarray(overlay(frames[t], labels[t])).save(path)
        paths.append(path)
    return paths


def write_soft_masks(masks: torch.Tensor, patch_grid: Tuple[int, int], out_dir: Path) -> Path:
    """
    Store the decoder's per-slot masks as raw little-endian float32 with a JSON sidecar.

    Args:
        masks (torch.Tensor): (L, K, N) soft masks.
        patch_grid (Tuple[int, int]): (rows, cols) of the patch grid.
        out_dir (Path): Destination directory.

    Returns:
        Path: The binary file; its shape (L, K, rows, cols) is in the sidecar.
    """
    rows, cols = patch_grid
    values = masks.detach().to(torch.float32).cpu().numpy()
    if values.ndim != 3 or values.shape[2] != rows * cols:
        raise ContractError(f"soft masks of shape {values.shape} do not fit the patch grid {patch_grid}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / SOFT_MASKS_FILE
    path.write_bytes(values.astype("<f4").tobytes())
    save_to_json(
        {"dtype": "float32", "byte_order": "little", "shape": [values.shape[0], values.shape[1], rows, cols]},
        out_dir / SOFT_MASKS_META,
    )
    return path


def export_clip(clip, patch_grid: Tuple[int, int], out_dir: Path) -> Path:
    """Label maps, overlays and soft masks of one evaluated clip under `out_dir/<clip_id>`."""
    clip_dir = Path(out_dir) / clip.clip_id
    write_label_maps(clip.pred_labels, clip_dir / "labels")
    write_overlays(clip.video.frames, clip.pred_labels, clip_dir / "overlays")
    write_soft_masks(torch.stack([d.masks for d in clip.result.decoded]), patch_grid, clip_dir)
    logger.info("Exported masks of clip '%s' to '%s'", clip.clip_id, clip_dir)
    return clip_dir


def write_reports(report, out_dir: Path, name: str = "aggregate") -> Dict[str, Any]:
    """Write `clips/<clip_id>.json` per clip and `<name>.json` for the pooled scores."""
    out_dir = Path(out_dir)
    for record in report.clips:
        save_to_json(record, out_dir / "clips" / f"{record['clip_id']}.json")
    save_to_json(report.aggregate, out_dir / f"{name}.json")
    logger.info("Wrote %s clip reports and '%s.json' to '%s'", len(report.clips), name, out_dir)
    return report.aggregate

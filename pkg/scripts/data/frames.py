# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from scripts.data.synth import SpriteVideo
from scripts.errors import IngestionError
from scripts.evaluation.metrics import mask_to_box
from utils import find_image_files, load_config, load_from_json, save_to_json, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

FRAMES_DIR = "frames"
MASKS_DIR = "masks"
META_FILE = "meta.json"


# ─── IMAGE IO ────────────────────────────────────────────────────────────────────────
def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_image(path: Path, single_channel: bool) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if single_channel:
                if image.mode not in ("L", "P", "I", "I;16", "1"):
                    raise IngestionError(path, f"mask must be a single-channel label map, got mode {image.mode}")
                return np.array(image, dtype=np.int64)
            return np.array(image.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise IngestionError(path, f"unreadable image ({e})") from e


def _read_stack(paths: List[Path], single_channel: bool) -> np.ndarray:
    arrays = []
    for path in paths:
        array = _read_image(path, single_channel)
        if arrays and array.shape != arrays[0].shape:
            raise IngestionError(path, f"dimensions {array.shape[:2]} differ from {arrays[0].shape[:2]} of {paths[0].name}")
        arrays.append(array)
    return np.stack(arrays)


def instances_from_label_map(labels: np.ndarray) -> Tuple[List[np.ndarray], List[int]]:
    """Split an integer label map into one mask per nonzero label, in increasing id order."""
    ids = [int(c) for c in np.unique(labels) if c > 0]
    return [labels == c for c in ids], ids


# ─── INGESTION ───────────────────────────────────────────────────────────────────────
def load_frames_dir(path: Path) -> SpriteVideo:
    """
    Ingest a directory of frames with an optional sibling directory of label maps.

    `path` may be a clip directory holding `frames/` (and optionally `masks/`), or the
    frames directory itself, in which case masks are looked up in `../masks`.

    Args:
        path (Path): Clip or frames directory.

    Returns:
        SpriteVideo: Frames in [0, 1]; annotations from the label maps, or empty
        annotations with `annotated=False` when no mask directory exists.

    Raises:
        IngestionError: Empty directory, unreadable file, inconsistent dimensions or a
            mask/frame count mismatch; the message names the offending file.
    """
    path = Path(path)
    frames_dir = path / FRAMES_DIR if (path / FRAMES_DIR).is_dir() else path
    masks_dir = frames_dir.parent / MASKS_DIR

    frame_paths = find_image_files(frames_dir)
    if not frame_paths:
        raise IngestionError(frames_dir, "no image files found")
    frames = _read_stack(frame_paths, single_channel=False).astype(np.float32) / 255.0
    num_frames = len(frame_paths)

    mask_paths = find_image_files(masks_dir) if masks_dir.is_dir() and masks_dir != frames_dir else []
    if not mask_paths:
        logger.info("Ingested %s frames from %s without annotations", num_frames, frames_dir)
        empty = [[] for _ in range(num_frames)]
        return SpriteVideo(frames=frames, gt_masks=empty, gt_boxes=[[] for _ in range(num_frames)],
                           object_ids=[[] for _ in range(num_frames)], annotated=False)

    if len(mask_paths) != num_frames:
        raise IngestionError(masks_dir, f"{len(mask_paths)} mask files for {num_frames} frames")
    labels = _read_stack(mask_paths, single_channel=True)
    if labels.shape[1:3] != frames.shape[1:3]:
        raise IngestionError(mask_paths[0], f"mask size {labels.shape[1:3]} differs from frame size {frames.shape[1:3]}")

    gt_masks, gt_boxes, object_ids = [], [], []
    for label_map in labels:
        masks, ids = instances_from_label_map(label_map)
        gt_masks.append(masks)
        gt_boxes.append([mask_to_box(m) for m in masks])
        object_ids.append(ids)
    logger.info("Ingested %s frames with label maps from %s", num_frames, frames_dir)
    return SpriteVideo(frames=frames, gt_masks=gt_masks, gt_boxes=gt_boxes, object_ids=object_ids)


# ─── CLIP DIRECTORIES ────────────────────────────────────────────────────────────────
def write_clip(video: SpriteVideo, clip_dir: Path, meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Persist a clip as `frames/%05d.ppm`, `masks/%05d.pgm` and `meta.json`.

    Masks are written as 8-bit label maps holding the object id on instance pixels.
    """
    clip_dir = Path(clip_dir)
    (clip_dir / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    if video.annotated:
        (clip_dir / MASKS_DIR).mkdir(parents=True, exist_ok=True)
    label_maps = video.label_maps()
    if label_maps.max(initial=0) > 255:
        raise IngestionError(clip_dir, "object ids above 255 do not fit an 8-bit label map")

    for t in range(video.num_frames):
        Image.fromarray(to_uint8(video.frames[t])).save(clip_dir / FRAMES_DIR / f"{t:05d}.ppm")
        if video.annotated:
            Image.fromarray(label_maps[t].astype(np.uint8)).save(clip_dir / MASKS_DIR / f"{t:05d}.pgm")

    record = dict(meta or {})
    record["object_ids"] = video.object_ids
    record["num_frames"] = video.num_frames
    save_to_json(record, clip_dir / META_FILE)
    return clip_dir


def read_clip(clip_dir: Path) -> Tuple[SpriteVideo, Dict[str, Any]]:
    """Load a clip directory and its meta.json (empty dict when absent)."""
    clip_dir = Path(clip_dir)
    return load_frames_dir(clip_dir), load_from_json(clip_dir / META_FILE)


def list_clip_dirs(data_dir: Path) -> List[Path]:
    """Clip directories under `data_dir` in name order; `data_dir` itself if it is a clip."""
    data_dir = Path(data_dir)
    if (data_dir / FRAMES_DIR).is_dir():
        return [data_dir]
    if not data_dir.is_dir():
        raise IngestionError(data_dir, "data directory does not exist")
    clips = sorted((p for p in data_dir.iterdir() if (p / FRAMES_DIR).is_dir()), key=lambda p: p.name)
    if not clips:
        raise IngestionError(data_dir, "no clip directories (expected sub-directories with frames/)")
    return clips


def load_dataset(data_dir: Path) -> List[Tuple[str, SpriteVideo]]:
    """Every clip under `data_dir` as (clip id, video)."""
    return [(clip.name, load_frames_dir(clip)) for clip in list_clip_dirs(data_dir)]

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Tuple

import numpy as np

from scripts.errors import ConfigError
from scripts.evaluation.metrics import Box, mask_to_box
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

SHAPES = ("circle", "square", "triangle")
BACKGROUNDS = ("solid", "two_tone")
PLACEMENT_ATTEMPTS = 200
COLOR_ATTEMPTS = 50
MIN_COLOR_CONTRAST = 0.3


# ─── SCHEMAS ─────────────────────────────────────────────────────────────────────────
@dataclass
class GeneratorConfig:
    """
    Settings for one synthetic moving-sprite clip.

    Sprites move linearly and bounce off the walls; with `entry_exit` one sprite enters
    and (given two or more sprites) one leaves mid-clip, so the per-frame instance count
    changes.
    """

    canvas: int = 64
    num_sprites: int = 2
    radius_min: int = 5
    radius_max: int = 9
    shapes: Tuple[str, ...] = SHAPES
    background: str = "solid"
    entry_exit: bool = False
    max_speed: float = 2.0
    num_frames: int = 10
    channels: int = 3

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        if self.canvas not in (32, 64):
            raise ConfigError("canvas", "must be 32 or 64")
        if not 0 <= self.num_sprites <= 4:
            raise ConfigError("num_sprites", "must be between 0 and 4")
        if self.radius_min < 1 or self.radius_min > self.radius_max:
            raise ConfigError("radius_min", "must satisfy 1 <= radius_min <= radius_max")
        if 2 * self.radius_max > self.canvas:
            raise ConfigError("radius_max", f"sprite larger than canvas ({2 * self.radius_max} > {self.canvas})")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ConfigError("shapes", f"must be a non-empty subset of {list(SHAPES)}")
        if self.background not in BACKGROUNDS:
            raise ConfigError("background", f"must be one of {list(BACKGROUNDS)}")
        if self.max_speed < 0:
            raise ConfigError("max_speed", "must be >= 0")
        if self.num_frames < 1:
            raise ConfigError("num_frames", "must be >= 1")
        if self.channels != 3:
            raise ConfigError("channels", "only RGB (3) is supported")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["shapes"] = list(self.shapes)
        return data


@dataclass
class SpriteVideo:
    """
    Frames plus per-frame ground truth.

    frames: (T, H, W, C) float32 in [0, 1]. For frame t, gt_masks[t][i], gt_boxes[t][i] and
    object_ids[t][i] describe the same instance; masks within a frame are disjoint and each
    box is the tight box of its mask. `annotated` is False for ingested clips without masks.
    """

    frames: np.ndarray
    gt_masks: List[List[np.ndarray]]
    gt_boxes: List[List[Box]]
    object_ids: List[List[int]]
    annotated: bool = True

    def __post_init__(self):
        if not isinstance(self.frames, np.ndarray) or self.frames.ndim != 4:
            raise ValueError("frames must be a (T, H, W, C) numpy array")
        if self.frames.shape[0] < 1:
            raise ValueError("a video needs at least one frame")
        num_frames = self.frames.shape[0]
        for name in ("gt_masks", "gt_boxes", "object_ids"):
            if len(getattr(self, name)) != num_frames:
                raise ValueError(f"{name} must have one entry per frame ({num_frames})")
        for t in range(num_frames):
            if not len(self.gt_masks[t]) == len(self.gt_boxes[t]) == len(self.object_ids[t]):
                raise ValueError(f"frame {t}: masks, boxes and object ids differ in count")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def label_maps(self) -> np.ndarray:
        """(T, H, W) integer maps: object id on instance pixels, 0 on background."""
        labels = np.zeros(self.frames.shape[:3], dtype=np.int64)
        for t in range(self.num_frames):
            for mask, object_id in zip(self.gt_masks[t], self.object_ids[t]):
                labels[t][mask] = object_id
        return labels

    def truncated(self, length: int) -> "SpriteVideo":
        length = max(1, min(length, self.num_frames))
        return SpriteVideo(
            frames=self.frames[:length],
            gt_masks=self.gt_masks[:length],
            gt_boxes=self.gt_boxes[:length],
            object_ids=self.object_ids[:length],
            annotated=self.annotated,
        )


@dataclass
class _Sprite:
    object_id: int
    shape: str
    radius: int
    color: np.ndarray
    position: np.ndarray  # (y, x) centre, float
    velocity: np.ndarray
    enter: int = 0
    exit: Optional[int] = None

    def active(self, t: int) -> bool:
        return t >= self.enter and (self.exit is None or t < self.exit)


# ─── RASTERISATION ───────────────────────────────────────────────────────────────────
def rasterize(shape: str, center: Tuple[float, float], radius: float, height: int, width: int) -> np.ndarray:
    """
    Boolean mask of a shape; pixel (y, x) is inside when its centre (y+0.5, x+0.5) is.

    circle: radius r; square: half-side r; triangle: apex up, half-base r, height 2r.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    cy, cx = center
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    if shape == "square":
        return (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
    if shape == "triangle":
        top = cy - radius
        return (yy >= top) & (yy <= cy + radius) & (np.abs(xx - cx) <= (yy - top) / 2.0)
    raise ConfigError("shapes", f"unknown shape '{shape}'")


def shape_area(shape: str, radius: float) -> float:
    """Analytic area of the continuous shape drawn by `rasterize`."""
    return {"circle": math.pi * radius**2, "square": 4.0 * radius**2, "triangle": 2.0 * radius**2}[shape]


def shape_perimeter(shape: str, radius: float) -> float:
    """
    Analytic perimeter of the continuous shape; bounds how far a rasterized mask's pixel
    count may stray from `shape_area`. Helper for checking generated masks, not used by
    generation itself.
    """
    return {
        "circle": 2.0 * math.pi * radius,
        "square": 8.0 * radius,
        "triangle": 2.0 * radius + 2.0 * math.hypot(radius, 2.0 * radius),
    }[shape]


# ─── GENERATION ──────────────────────────────────────────────────────────────────────
def _background(cfg: GeneratorConfig, rng: np.random.Generator) -> Tuple[np.ndarray, List[np.ndarray]]:
    tones = [rng.uniform(0.0, 0.5, size=cfg.channels)]
    frame = np.empty((cfg.canvas, cfg.canvas, cfg.channels), dtype=np.float64)
    frame[:] = tones[0]
    if cfg.background == "two_tone":
        tones.append(rng.uniform(0.0, 0.5, size=cfg.channels))
        frame[:, cfg.canvas // 2 :] = tones[1]
    return frame, tones


def _sprite_color(tones: List[np.ndarray], rng: np.random.Generator, channels: int) -> np.ndarray:
    color = rng.uniform(0.1, 1.0, size=channels)
    for _ in range(COLOR_ATTEMPTS):
        if all(np.max(np.abs(color - tone)) >= MIN_COLOR_CONTRAST for tone in tones):
            break
        color = rng.uniform(0.1, 1.0, size=channels)
    return color


def _place_sprites(cfg: GeneratorConfig, rng: np.random.Generator, tones: List[np.ndarray]) -> List[_Sprite]:
    sprites: List[_Sprite] = []
    for index in range(cfg.num_sprites):
        shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        radius = int(rng.integers(cfg.radius_min, cfg.radius_max + 1))
        color = _sprite_color(tones, rng, cfg.channels)

        # rejection-sample a centre whose bounding circle clears the sprites already placed
        position = rng.uniform(radius, cfg.canvas - radius, size=2)
        for _ in range(PLACEMENT_ATTEMPTS):
            if all(
                np.linalg.norm(position - other.position) > math.sqrt(2.0) * (radius + other.radius) + 1.0
                for other in sprites
            ):
                break
            position = rng.uniform(radius, cfg.canvas - radius, size=2)

        angle = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(0.5 * cfg.max_speed, cfg.max_speed) if cfg.max_speed > 0 else 0.0
        velocity = np.array([math.sin(angle), math.cos(angle)]) * speed
        sprites.append(_Sprite(index + 1, shape, radius, color, position, velocity))

    if cfg.entry_exit and sprites:
        entry = max(1, cfg.num_frames // 3)
        sprites[-1].enter = entry
        if len(sprites) >= 2:
            sprites[0].exit = max(entry + 1, (2 * cfg.num_frames) // 3)
    return sprites


def _advance(sprite: _Sprite, canvas: int) -> None:
    sprite.position = sprite.position + sprite.velocity
    low, high = float(sprite.radius), float(canvas - sprite.radius)
    for axis in range(2):
        if sprite.position[axis] < low:
            sprite.position[axis] = 2.0 * low - sprite.position[axis]
            sprite.velocity[axis] = -sprite.velocity[axis]
        elif sprite.position[axis] > high:
            sprite.position[axis] = 2.0 * high - sprite.position[axis]
            sprite.velocity[axis] = -sprite.velocity[axis]


def generate_sprite_video(cfg: GeneratorConfig, seed: int) -> SpriteVideo:
    """
    Render a seeded moving-sprite clip with instance masks, boxes and stable object ids.

    Later sprites occlude earlier ones; every instance mask holds the visible pixels only,
    so masks within a frame are disjoint. Identical (cfg, seed) give bitwise-identical output.

    Args:
        cfg (GeneratorConfig): Generator settings.
        seed (int): Seed of the numpy generator driving every random choice.

    Returns:
        SpriteVideo: Frames in [0, 1] with per-frame ground truth.
    """
    rng = np.random.default_rng(seed)
    background, tones = _background(cfg, rng)
    sprites = _place_sprites(cfg, rng, tones)

    frames = np.empty((cfg.num_frames, cfg.canvas, cfg.canvas, cfg.channels), dtype=np.float32)
    gt_masks, gt_boxes, object_ids = [], [], []
    for t in range(cfg.num_frames):
        frame = background.copy()
        owner = np.zeros((cfg.canvas, cfg.canvas), dtype=np.int64)
        for sprite in sprites:
            if not sprite.active(t):
                continue
            pixels = rasterize(sprite.shape, tuple(sprite.position), sprite.radius, cfg.canvas, cfg.canvas)
            frame[pixels] = sprite.color
            owner[pixels] = sprite.object_id

        masks, boxes, ids = [], [], []
        for sprite in sprites:
            visible = owner == sprite.object_id
            if visible.any():
                masks.append(visible)
                boxes.append(mask_to_box(visible))
                ids.append(sprite.object_id)
        frames[t] = frame.astype(np.float32)
        gt_masks.append(masks)
        gt_boxes.append(boxes)
        object_ids.append(ids)

        for sprite in sprites:
            _advance(sprite, cfg.canvas)

    logger.debug(
        "Generated clip seed=%s: %s frames, instance counts %s",
        seed,
        cfg.num_frames,
        [len(ids) for ids in object_ids],
    )
    return SpriteVideo(frames=frames, gt_masks=gt_masks, gt_boxes=gt_boxes, object_ids=object_ids)

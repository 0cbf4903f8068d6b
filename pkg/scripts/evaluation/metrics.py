"""
Unsupervised object-discovery metrics over binary masks, label maps and boxes.

Every function here is pure numpy/scipy. Set-level metrics (mBO-F, mBHD, FG-ARI, CorLoc)
return None when there is no ground truth to score; `MetricAccumulator` pools the
per-instance values across frames and clips before averaging.
"""

# ─── IMPORTS ─────────────────────────────────────────────────────────────────────────
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial.distance import directed_hausdorff
from scipy.special import comb

from scripts.errors import ContractError

# 4-neighbourhood used to decide which mask pixels lie on the boundary
FOUR_NEIGHBOURHOOD = generate_binary_structure(2, 1)


# ─── BOXES ───────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Box:
    """Inclusive integer pixel box."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"invalid box {self.to_tuple()}: min must not exceed max")

    def to_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    @classmethod
    def from_tuple(cls, values: Sequence[int]) -> "Box":
        x_min, y_min, x_max, y_max = (int(v) for v in values)
        return cls(x_min, y_min, x_max, y_max)


def mask_to_box(mask: np.ndarray) -> Optional[Box]:
    """Tight inclusive box around the true pixels; None for an empty mask."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if ys.size == 0:
        return None
    return Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_iou(a: Box, b: Box) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    intersection = ix * iy
    return intersection / (a.area + b.area - intersection)


# ─── MASK OVERLAP ────────────────────────────────────────────────────────────────────
def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ContractError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks of any rank; both empty gives 0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _same_shape(a, b, "iou")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def best_overlaps(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> List[float]:
    """For each ground-truth mask, the best IoU over the predictions (0 when there are none)."""
    return [max((iou(p, g) for p in pred), default=0.0) for g in gt]


def mbo_frame(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> Optional[float]:
    """
    Mean best overlap of one frame.

    Args:
        pred (Sequence[np.ndarray]): Predicted instance masks (argmax masks of the valid slots).
        gt (Sequence[np.ndarray]): Ground-truth instance masks.

    Returns:
        Optional[float]: Mean over GT of the best IoU, or None when there is no GT.
    """
    overlaps = best_overlaps(pred, gt)
    if not overlaps:
        return None
    return float(np.mean(overlaps))


def mbo_video(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> Optional[float]:
    """Mean over GT tubes (T, H, W) of the best voxel IoU against the predicted tubes."""
    lengths = {np.asarray(t).shape[0] for t in list(pred) + list(gt)}
    if len(lengths) > 1:
        raise ContractError(f"mbo_video: tubes have different lengths {sorted(lengths)}")
    return mbo_frame(pred, gt)


# ─── BOUNDARY DISTANCE ───────────────────────────────────────────────────────────────
def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one false 4-neighbour; outside the image counts as false."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, structure=FOUR_NEIGHBOURHOOD, border_value=0)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """
    Symmetric Hausdorff distance in pixels between the boundaries of two masks.

    If either mask is empty, the image diagonal is returned as a penalty. Distances are taken
    between boundary pixel indices, so nearest-neighbour x2 upscaling doubles the result
    exactly only for masks whose boundary pixels lack both vertical or both horizontal
    neighbours (single pixels, thin lines); otherwise the upscaled value lies within sqrt(2)
    of twice the original.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _same_shape(a, b, "hausdorff")
    points_a = np.argwhere(boundary(a)).astype(np.float64)
    points_b = np.argwhere(boundary(b)).astype(np.float64)
    if len(points_a) == 0 or len(points_b) == 0:
        height, width = a.shape
        return math.hypot(height, width)
    return float(max(directed_hausdorff(points_a, points_b)[0], directed_hausdorff(points_b, points_a)[0]))


def best_distances(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> List[float]:
    """For each ground-truth mask, the smallest Hausdorff distance over the predictions."""
    distances = []
    for g in gt:
        g = np.asarray(g, dtype=bool)
        if len(pred) == 0:
            distances.append(math.hypot(*g.shape))
        else:
            distances.append(min(hausdorff(p, g) for p in pred))
    return distances


def mbhd(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray]) -> Optional[float]:
    """Mean best Hausdorff distance of one frame (lower is better); None without GT."""
    distances = best_distances(pred, gt)
    if not distances:
        return None
    return float(np.mean(distances))


# ─── FOREGROUND ARI ──────────────────────────────────────────────────────────────────
def fg_ari(pred_labels: np.ndarray, gt_labels: np.ndarray, fg: np.ndarray) -> Optional[float]:
    """
    Adjusted Rand index between two labelings restricted to foreground pixels.

    Computed from the contingency table of (gt, pred) label pairs. When the denominator
    vanishes the partitions are compared directly: 1.0 if identical, else 0.0.

    Args:
        pred_labels (np.ndarray): Integer label map (argmax slot index per pixel).
        gt_labels (np.ndarray): Integer ground-truth label map.
        fg (np.ndarray): Boolean foreground mask (union of GT instances).

    Returns:
        Optional[float]: The index, or None when the foreground is empty.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    fg = np.asarray(fg, dtype=bool)
    _same_shape(pred_labels, gt_labels, "fg_ari")
    _same_shape(pred_labels, fg, "fg_ari")
    if not fg.any():
        return None

    _, gt_index = np.unique(gt_labels[fg], return_inverse=True)
    _, pred_index = np.unique(pred_labels[fg], return_inverse=True)
    contingency = np.zeros((gt_index.max() + 1, pred_index.max() + 1), dtype=np.int64)
    np.add.at(contingency, (gt_index, pred_index), 1)

    n = int(fg.sum())
    sum_pairs = comb(contingency, 2).sum()
    sum_rows = comb(contingency.sum(axis=1), 2).sum()
    sum_cols = comb(contingency.sum(axis=0), 2).sum()
    total_pairs = comb(n, 2)
    expected = sum_rows * sum_cols / total_pairs if total_pairs > 0 else 0.0
    denominator = 0.5 * (sum_rows + sum_cols) - expected

    if total_pairs == 0 or denominator == 0:
        identical = bool(
            ((contingency > 0).sum(axis=1) == 1).all() and ((contingency > 0).sum(axis=0) == 1).all()
        )
        return 1.0 if identical else 0.0
    return float((sum_pairs - expected) / denominator)


# ─── CORLOC ──────────────────────────────────────────────────────────────────────────
def corloc_frame(pred_boxes: Sequence[Box], gt_boxes: Sequence[Box], threshold: float = 0.5) -> Optional[bool]:
    """Whether any (pred, gt) pair reaches the IoU threshold; None for frames without GT."""
    if not gt_boxes:
        return None
    return any(box_iou(p, g) >= threshold for p in pred_boxes for g in gt_boxes)


def corloc(
    pred_boxes: Sequence[Sequence[Box]], gt_boxes: Sequence[Sequence[Box]], threshold: float = 0.5
) -> Optional[float]:
    """Percentage of scored frames (frames with GT boxes) localized correctly."""
    if len(pred_boxes) != len(gt_boxes):
        raise ContractError(f"corloc: {len(pred_boxes)} predicted frames vs {len(gt_boxes)} GT frames")
    outcomes = [corloc_frame(p, g, threshold) for p, g in zip(pred_boxes, gt_boxes)]
    scored = [o for o in outcomes if o is not None]
    if not scored:
        return None
    return 100.0 * sum(scored) / len(scored)


# ─── CONVERSIONS ─────────────────────────────────────────────────────────────────────
def upsample_nearest(array: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upscaling of the last two axes by an integer factor."""
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    return np.repeat(np.repeat(array, factor, axis=-2), factor, axis=-1)


# ─── POOLING ─────────────────────────────────────────────────────────────────────────
@dataclass
class MetricAccumulator:
    """
    Sufficient statistics pooled across frames and clips.

    Per-GT-instance values are pooled before averaging, so every ground-truth object
    counts once regardless of which frame or clip it came from.
    """

    overlaps: List[float] = field(default_factory=list)
    video_overlaps: List[float] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    ari_values: List[float] = field(default_factory=list)
    corloc_correct: int = 0
    corloc_scored: int = 0
    active_slots: List[int] = field(default_factory=list)

    def add_frame(
        self,
        pred_masks: Sequence[np.ndarray],
        gt_masks: Sequence[np.ndarray],
        pred_labels: np.ndarray,
        gt_labels: np.ndarray,
        pred_boxes: Sequence[Box],
        gt_boxes: Sequence[Box],
        corloc_iou: float = 0.5,
    ) -> None:
        self.overlaps.extend(best_overlaps(pred_masks, gt_masks))
        self.distances.extend(best_distances(pred_masks, gt_masks))
        if gt_masks:
            fg = np.logical_or.reduce([np.asarray(m, dtype=bool) for m in gt_masks])
            ari = fg_ari(pred_labels, gt_labels, fg)
            if ari is not None:
                self.ari_values.append(ari)
        outcome = corloc_frame(pred_boxes, gt_boxes, corloc_iou)
        if outcome is not None:
            self.corloc_scored += 1
            self.corloc_correct += int(outcome)

    def add_tubes(self, pred_tubes: Sequence[np.ndarray], gt_tubes: Sequence[np.ndarray]) -> None:
        if gt_tubes:
            lengths = {np.asarray(t).shape[0] for t in list(pred_tubes) + list(gt_tubes)}
            if len(lengths) > 1:
                raise ContractError(f"mbo_video: tubes have different lengths {sorted(lengths)}")
        self.video_overlaps.extend(best_overlaps(pred_tubes, gt_tubes))

    def merge(self, other: "MetricAccumulator") -> None:
        self.overlaps.extend(other.overlaps)
        self.video_overlaps.extend(other.video_overlaps)
        self.distances.extend(other.distances)
        self.ari_values.extend(other.ari_values)
        self.corloc_correct += other.corloc_correct
        self.corloc_scored += other.corloc_scored
        self.active_slots.extend(other.active_slots)

    def summary(self) -> Dict[str, Optional[float]]:
        def mean(values):
            return float(np.mean(values)) if values else None

        return {
            "mbo_v": mean(self.video_overlaps),
            "mbo_f": mean(self.overlaps),
            "mbhd": mean(self.distances),
            "fg_ari": mean(self.ari_values),
            "corloc": 100.0 * self.corloc_correct / self.corloc_scored if self.corloc_scored else None,
            "mean_active_slots": mean(self.active_slots),
        }

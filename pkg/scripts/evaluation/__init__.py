"""
Object-discovery metrics.

Only the pure metric functions are re-exported here; the clip evaluator and report export
live in `scripts.evaluation.evaluator` and `scripts.evaluation.export` and are imported
from there, since they depend on the data and model packages.
"""

from .metrics import (
    Box,
    MetricAccumulator,
    box_iou,
    boundary,
    corloc,
    corloc_frame,
    fg_ari,
    hausdorff,
    iou,
    mask_to_box,
    mbhd,
    mbo_frame,
    mbo_video,
    upsample_nearest,
)

__all__ = [
    "Box",
    "MetricAccumulator",
    "box_iou",
    "boundary",
    "corloc",
    "corloc_frame",
    "fg_ari",
    "hausdorff",
    "iou",
    "mask_to_box",
    "mbhd",
    "mbo_frame",
    "mbo_video",
    "upsample_nearest",
]

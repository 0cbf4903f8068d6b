# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import torch

from scripts.data.synth import SpriteVideo
from scripts.errors import ConfigError, ContractError
from scripts.models import check_compatible
from scripts.nn import ParamStore
from scripts.runconfig import RunConfig
from scripts.training.pipeline import RolloutResult, clip_features, feature_encoder, rollout
from utils import load_config, setup_logger
from .metrics import MetricAccumulator, mask_to_box, upsample_nearest

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

METRIC_KEYS = ("mbo_v", "mbo_f", "mbhd", "fg_ari", "corloc", "mean_active_slots")


# ─── PREDICTIONS TO MASKS ────────────────────────────────────────────────────────────
def slot_label_maps(masks: torch.Tensor, valid: torch.Tensor, patch_grid: Tuple[int, int], patch_size: int) -> np.ndarray:
    """
    Per-pixel argmax over valid slot masks, upsampled to pixel resolution.

    Args:
        masks (torch.Tensor): (L, K, N) decoder masks.
        valid (torch.Tensor): (L, K) slot validity.
        patch_grid (Tuple[int, int]): (rows, cols) with rows * cols == N.
        patch_size (int): Nearest-neighbour upscaling factor.

    Returns:
        np.ndarray: (L, rows * P, cols * P) slot-index label maps.
    """
    scores = masks.detach().to(torch.float64).masked_fill(~valid.bool().unsqueeze(-1), float("-inf"))
    labels = scores.argmax(dim=-2).cpu().numpy()
    rows, cols = patch_grid
    return upsample_nearest(labels.reshape(labels.shape[0], rows, cols), patch_size)


def score_clip(
    video: SpriteVideo,
    pred_labels: np.ndarray,
    pred_ids: Sequence[int],
    active_slots_per_frame: Sequence[int],
    corloc_iou: float = 0.5,
) -> MetricAccumulator:
    """
    Pool one clip's metric statistics.

    Predicted instances of a frame are the masks `pred_labels == i` for every id in
    `pred_ids`; predicted tubes follow the same id across frames, ground-truth tubes follow
    the object id.
    """
    if pred_labels.shape != video.frames.shape[:3]:
        raise ContractError(f"label maps {pred_labels.shape} do not match clip frames {video.frames.shape[:3]}")
    acc = MetricAccumulator(active_slots=[int(a) for a in active_slots_per_frame])
    gt_labels = video.label_maps()
    for t in range(video.num_frames):
        pred_masks = [pred_labels[t] == i for i in pred_ids]
        pred_boxes = [box for box in (mask_to_box(m) for m in pred_masks) if box is not None]
        acc.add_frame(
            pred_masks,
            video.gt_masks[t],
            pred_labels[t],
            gt_labels[t],
            pred_boxes,
            video.gt_boxes[t],
            corloc_iou,
        )
    object_ids = sorted({i for ids in video.object_ids for i in ids})
    acc.add_tubes([pred_labels == i for i in pred_ids], [gt_labels == i for i in object_ids])
    return acc


def oracle_predictions(video: SpriteVideo) -> Tuple[np.ndarray, List[int]]:
    """Ground-truth label maps posing as predictions; background (0) is one more instance."""
    ids = sorted({0} | {i for ids in video.object_ids for i in ids})
    return video.label_maps(), ids


# ─── RESULTS ─────────────────────────────────────────────────────────────────────────
@dataclass
class ClipResult:
    clip_id: str
    video: SpriteVideo
    result: RolloutResult
    pred_labels: np.ndarray
    stats: MetricAccumulator
    seconds: float

    @property
    def latency_ms(self) -> float:
        return 1000.0 * self.seconds / self.video.num_frames

    def report(self, config_echo: Dict[str, Any]) -> Dict[str, Any]:
        record: Dict[str, Any] = dict(self.stats.summary())
        record.update(
            {
                "clip_id": self.clip_id,
                "num_frames": self.video.num_frames,
                "annotated": self.video.annotated,
                "active_slots_per_frame": self.result.active_slots_per_frame,
                "config": config_echo,
            }
        )
        return record


@dataclass
class EvalReport:
    clips: List[Dict[str, Any]] = field(default_factory=list)
    aggregate: Dict[str, Any] = field(default_factory=dict)
    latency_ms: float = 0.0


# ─── EVALUATOR ───────────────────────────────────────────────────────────────────────
class Evaluator:
    """
    Rolls a trained model over evaluation clips and scores the decoder masks.

    Clips without annotations are rolled out (so their masks can be exported) but do
    not contribute to the scores.
    """

    def __init__(self, run_cfg: RunConfig, store: ParamStore):
        self.config = load_config()
        self.logger = setup_logger(__name__, self.config)
        self.run_cfg = run_cfg
        check_compatible(store, run_cfg.model_dims())
        self.store = store
        self.encoder = feature_encoder(run_cfg, dtype=store.dtype)
        self.patch_grid = (run_cfg.canvas // run_cfg.P, run_cfg.canvas // run_cfg.P)

    def evaluate_clip(self, clip_id: str, video: SpriteVideo) -> ClipResult:
        cfg = self.run_cfg
        if cfg.eval_clip_length:
            video = video.truncated(cfg.eval_clip_length)
        if (video.height, video.width) != (cfg.canvas, cfg.canvas):
            raise ContractError(
                f"clip '{clip_id}' has {video.height}x{video.width} frames, the checkpoint config expects "
                f"{cfg.canvas}x{cfg.canvas}"
            )
        features = clip_features(video.frames, cfg, self.encoder)

        started = time.perf_counter()
        result = rollout(features, self.store, cfg)
        seconds = time.perf_counter() - started

        masks = torch.stack([d.masks for d in result.decoded])
        pred_labels = slot_label_maps(masks, result.m_s, self.patch_grid, cfg.P)
        if video.annotated:
            stats = score_clip(video, pred_labels, range(cfg.K), result.active_slots_per_frame, cfg.corloc_iou)
        else:
            self.logger.warning("Clip '%s' has no annotations; rolled out but not scored", clip_id)
            stats = MetricAccumulator(active_slots=result.active_slots_per_frame)
        self.logger.debug("Clip '%s': %s frames in %.3fs", clip_id, video.num_frames, seconds)
        return ClipResult(clip_id, video, result, pred_labels, stats, seconds)

    def evaluate(self, dataset: Sequence[Tuple[str, SpriteVideo]], keep_results: bool = False):
        """
        Score every clip and pool the statistics.

        Returns:
            EvalReport, or (EvalReport, List[ClipResult]) when `keep_results` is set.
        """
        if not dataset:
            raise ContractError("evaluation needs at least one clip")
        config_echo = self.run_cfg.to_dict()
        report = EvalReport()
        pooled = MetricAccumulator()
        results = []
        total_seconds, total_frames = 0.0, 0
        for clip_id, video in dataset:
            clip = self.evaluate_clip(clip_id, video)
            report.clips.append(clip.report(config_echo))
            pooled.merge(clip.stats)
            total_seconds += clip.seconds
            total_frames += clip.video.num_frames
            if keep_results:
                results.append(clip)

        report.aggregate = dict(pooled.summary())
        report.aggregate.update(
            {
                "num_clips": len(report.clips),
                "num_scored_clips": sum(1 for c in report.clips if c["annotated"]),
                "config": config_echo,
            }
        )
        report.latency_ms = 1000.0 * total_seconds / max(total_frames, 1)
        self.logger.info(
            "Evaluated %s clips: %s",
            len(report.clips),
            ", ".join(f"{k}={report.aggregate[k]}" for k in METRIC_KEYS),
        )
        return (report, results) if keep_results else report


# ─── SWEEPS ──────────────────────────────────────────────────────────────────────────
SWEEPS = {
    "theta": lambda value: {"theta": float(value)},
    "clip_length": lambda value: {"eval_clip_length": int(value)},
    "slot_count": lambda value: {"K": int(value), "use_merger": False},
}


def run_sweep(
    store: ParamStore, base_cfg: RunConfig, dataset: Sequence[Tuple[str, SpriteVideo]], sweep: str, values: Sequence
) -> Dict[str, Any]:
    """
    Evaluate once per value of one setting and collect the aggregates.

    `theta` varies the merge threshold, `clip_length` truncates every clip and
    `slot_count` fixes K with merging disabled.
    """
    if sweep not in SWEEPS:
        raise ConfigError("sweep", f"must be one of {sorted(SWEEPS)}")
    entries = []
    for value in values:
        cfg = base_cfg.with_overrides(**SWEEPS[sweep](value))
        report = Evaluator(cfg, store).evaluate(dataset)
        entries.append({"value": value, "aggregate": report.aggregate})
        logger.info("Sweep %s=%s: %.2f ms per frame", sweep, value, report.latency_ms)
    return {"sweep": sweep, "entries": entries}

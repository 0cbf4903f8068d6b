"""
Forward pipelines shared by training, gradient checks and inference.

The loss functions are pure given (features, parameters, config, generator): every random
decision of a step is drawn from the generator passed in, in a fixed order, so the same
generator seed always reproduces the same loss.
"""

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import torch

from scripts.data.features import FeatureEncoderParams, extract_features
from scripts.errors import ContractError
from scripts.models import (
    DecodedFrame,
    SlotFrame,
    SlotSequence,
    apply_mask,
    decode_frame,
    dtst_forward,
    f_sa,
    init_slots_gaussian,
    init_slots_gaussian_batch,
    merge_frame,
    merge_sequence,
    predict_next,
    recon_loss,
    sample_mask_plan,
)
from scripts.nn import ParamStore, check_finite
from scripts.runconfig import RunConfig
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

SEED_BOUND = 2**31 - 1

BRANCH_PRETRAIN = "pretrain"
BRANCH_BYPASS = "bypass"
BRANCH_DTST = "dtst"
BRANCH_DTST_MERGER = "dtst+merger"


@dataclass
class StepOutcome:
    loss: torch.Tensor
    branch: str
    active_slots: float


@dataclass
class StepDraws:
    """Random decisions of one step, drawn in this order."""

    base_seed: int
    bypass: bool = False
    drop_merger: bool = False
    mask_seed: int = 0


def draw_seed(generator: torch.Generator) -> int:
    return int(torch.randint(0, SEED_BOUND, (1,), generator=generator).item())


def draw_uniform(generator: torch.Generator) -> float:
    return float(torch.rand(1, generator=generator, dtype=torch.float64).item())


def draw_stage2(generator: torch.Generator, cfg: RunConfig) -> StepDraws:
    base_seed = draw_seed(generator)
    bypass = draw_uniform(generator) < cfg.p_b
    drop_merger = draw_uniform(generator) < cfg.p_d
    mask_seed = draw_seed(generator)
    return StepDraws(base_seed=base_seed, bypass=bypass, drop_merger=drop_merger, mask_seed=mask_seed)


# ─── FEATURES ────────────────────────────────────────────────────────────────────────
def feature_encoder(cfg: RunConfig, dtype=torch.float32) -> FeatureEncoderParams:
    return FeatureEncoderParams.create(cfg.feature_seed, cfg.P, cfg.D_feature, dtype=dtype)


def clip_features(frames, cfg: RunConfig, enc: Optional[FeatureEncoderParams] = None) -> torch.Tensor:
    """(L, N, D_feature) features of one clip's (L, H, W, C) frames."""
    enc = enc or feature_encoder(cfg)
    grid = extract_features(frames, enc)
    if grid.num_patches != cfg.num_patches:
        raise ContractError(
            f"clip yields {grid.num_patches} patches per frame, the run config expects {cfg.num_patches} "
            f"(canvas={cfg.canvas}, P={cfg.P})"
        )
    return grid.features


# ─── ENCODING ────────────────────────────────────────────────────────────────────────
def gaussian_init(cfg: RunConfig, batch: int, base_seed: int, dtype) -> SlotFrame:
    """Clip b of the batch starts from Gaussian slots seeded with base_seed + b."""
    return init_slots_gaussian_batch(cfg.K, cfg.d_slot, [base_seed + b for b in range(batch)], dtype)


def encode_recurrent(x: torch.Tensor, store: ParamStore, cfg: RunConfig, init: SlotFrame) -> SlotSequence:
    """Slot attention per frame, each frame initialised with the previous frame's slots."""
    frames: List[SlotFrame] = []
    s_init = init
    for t in range(x.shape[-3]):
        slots = f_sa(x.select(-3, t), s_init, store, cfg.n_iter)
        frames.append(slots)
        s_init = slots
    return SlotSequence.stack(frames)


def encode_dynamic(
    x: torch.Tensor, store: ParamStore, cfg: RunConfig, init: SlotFrame, detach_init: bool = True
) -> SlotSequence:
    """
    Slot attention per frame with frames after the first initialised by predict_next.

    The buffer fed to predict_next holds up to T previous frames and is detached from the
    graph when `detach_init` is set, so no gradient reaches earlier frames through the
    initialisation path.
    """
    merger_cfg = cfg.merger_config() if cfg.use_merger else None
    frames: List[SlotFrame] = []
    s_init = init
    for t in range(x.shape[-3]):
        if t > 0:
            buffer = SlotSequence.stack(frames[-cfg.T :])
            if detach_init:
                buffer = buffer.detach()
            s_init = predict_next(buffer, store, cfg.dtst_config(), merger_cfg)
        frames.append(f_sa(x.select(-3, t), s_init, store, cfg.n_iter))
    return SlotSequence.stack(frames)


def decode_sequence(seq: SlotSequence, store: ParamStore) -> DecodedFrame:
    return decode_frame(SlotFrame(seq.slots, seq.valid), store)


# ─── LOSSES ──────────────────────────────────────────────────────────────────────────
def pretrain_loss(x: torch.Tensor, store: ParamStore, cfg: RunConfig, generator: torch.Generator) -> StepOutcome:
    """
    Reconstruction loss of the recurrent-initialisation pipeline.

    Args:
        x (torch.Tensor): Features (B, T, N, D_feature).
        store (ParamStore): Parameters.
        cfg (RunConfig): Run settings.
        generator (torch.Generator): Source of the Gaussian initialisation seed.
    """
    draws = StepDraws(base_seed=draw_seed(generator))
    seq = encode_recurrent(x, store, cfg, gaussian_init(cfg, x.shape[0], draws.base_seed, x.dtype))
    decoded = decode_sequence(seq, store)
    loss = check_finite(recon_loss(decoded.x_recon, x), "pretraining loss")
    return StepOutcome(loss=loss, branch=BRANCH_PRETRAIN, active_slots=float(seq.valid.sum(-1).double().mean()))


def stage2_loss(
    x: torch.Tensor, store: ParamStore, cfg: RunConfig, generator: torch.Generator, detach_init: Optional[bool] = None
) -> StepOutcome:
    """
    Reconstruction loss of the dynamic pipeline.

    Slots are initialised by predict_next (or carried over when use_xslot is off). One
    uniform draw decides whether decoding bypasses the transformer; otherwise tokens are
    randomly masked, refined by the transformer and, unless the drop-path draw skips it,
    merged before decoding.

    Args:
        x (torch.Tensor): Features (B, T, N, D_feature).
        store (ParamStore): Parameters.
        cfg (RunConfig): Run settings.
        generator (torch.Generator): Source of every random decision of the step.
        detach_init (bool, optional): Overrides cfg.detach_init.
    """
    draws = draw_stage2(generator, cfg)
    init = gaussian_init(cfg, x.shape[0], draws.base_seed, x.dtype)
    detach = cfg.detach_init if detach_init is None else detach_init
    if cfg.use_xslot:
        seq = encode_dynamic(x, store, cfg, init, detach_init=detach)
    else:
        seq = encode_recurrent(x, store, cfg, init)

    if not cfg.use_dtst or draws.bypass:
        branch = BRANCH_BYPASS
    else:
        plan = sample_mask_plan(seq.valid, cfg.mask_ratio, draws.mask_seed)
        seq = dtst_forward(apply_mask(seq, plan, store), store, cfg.dtst_config(), masked=plan.masked)
        branch = BRANCH_DTST
        if cfg.use_merger and not draws.drop_merger:
            seq, _ = merge_sequence(seq, cfg.merger_config())
            branch = BRANCH_DTST_MERGER

    decoded = decode_sequence(seq, store)
    loss = check_finite(recon_loss(decoded.x_recon, x), "stage-2 loss")
    return StepOutcome(loss=loss, branch=branch, active_slots=float(seq.valid.sum(-1).double().mean()))


def stage_loss(x: torch.Tensor, store: ParamStore, cfg: RunConfig, generator: torch.Generator) -> StepOutcome:
    if cfg.stage == "pretrain":
        return pretrain_loss(x, store, cfg, generator)
    return stage2_loss(x, store, cfg, generator)


# ─── INFERENCE ───────────────────────────────────────────────────────────────────────
@dataclass
class RolloutResult:
    """Per-frame outputs of an inference rollout; m_s is (L, K)."""

    slots: List[SlotFrame] = field(default_factory=list)
    decoded: List[DecodedFrame] = field(default_factory=list)
    m_s: Optional[torch.Tensor] = None
    max_buffer_len: int = 0

    @property
    def active_slots_per_frame(self) -> List[int]:
        return [int(v) for v in self.m_s.sum(dim=-1)]


def refine_last(buffer: SlotSequence, store: ParamStore, cfg: RunConfig) -> SlotFrame:
    """Inference refinement of the newest frame: transformer over the buffer, then merging."""
    if cfg.use_dtst:
        refined = dtst_forward(buffer, store, cfg.dtst_config())
        frame = refined.frame(refined.num_frames - 1)
    else:
        frame = buffer.frame(buffer.num_frames - 1)
    if cfg.use_merger:
        result = merge_frame(frame, cfg.merger_config())
        if result.num_clusters < int(frame.valid.sum()):
            logger.debug("Merged %d valid slots into %d", int(frame.valid.sum()), result.num_clusters)
        frame = result.merged
    return frame


def rollout(features: torch.Tensor, store: ParamStore, cfg: RunConfig) -> RolloutResult:
    """
    Run the model over a clip of any length with a sliding buffer of the last T frames.

    Frame 0 starts from Gaussian slots seeded with cfg.eval_seed; later frames start from
    predict_next over the buffer (or the previous slots when use_xslot is off). Decoding
    always goes through the refinement path, never the bypass.

    Args:
        features (torch.Tensor): (L, N, D_feature) features of one clip.
        store (ParamStore): Trained parameters.
        cfg (RunConfig): Run settings.

    Returns:
        RolloutResult: Refined slots, decoder outputs and validity per frame.

    Raises:
        ContractError: If the clip is empty.
    """
    if features.dim() != 3 or features.shape[0] == 0:
        raise ContractError(f"rollout needs (L, N, D) features with L >= 1, got shape {tuple(features.shape)}")
    merger_cfg = cfg.merger_config() if cfg.use_merger else None
    buffer: deque = deque(maxlen=cfg.T)
    result = RolloutResult()

    with torch.no_grad():
        for t in range(features.shape[0]):
            if t == 0:
                s_init = init_slots_gaussian(cfg.K, cfg.d_slot, cfg.eval_seed, features.dtype)
            elif cfg.use_xslot:
                s_init = predict_next(SlotSequence.stack(list(buffer)), store, cfg.dtst_config(), merger_cfg)
            else:
                s_init = buffer[-1]
            buffer.append(f_sa(features[t], s_init, store, cfg.n_iter))
            result.max_buffer_len = max(result.max_buffer_len, len(buffer))

            frame = refine_last(SlotSequence.stack(list(buffer)), store, cfg)
            result.slots.append(frame)
            result.decoded.append(decode_frame(frame, store))

    result.m_s = torch.stack([f.valid for f in result.slots])
    logger.debug("Rollout over %s frames, active slots %s", features.shape[0], result.active_slots_per_frame)
    return result

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import math
from dataclasses import dataclass
from typing import Optional

import torch

from scripts.errors import ConfigError, ContractError
from scripts.models.merger import MergerConfig, merge_frames
from scripts.models.slot_attention import SlotFrame, SlotSequence
from scripts.nn import ParamStore, init_layer_norm, init_linear, init_mlp, init_normal, layer_norm, masked_softmax, mlp_forward
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

MASK_TOKEN_STD = 0.02


# ─── SCHEMAS ─────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class DTSTConfig:
    layers: int = 3
    heads: int = 4
    ff_mult: int = 4
    t_max: int = 64

    def __post_init__(self):
        if self.layers < 0:
            raise ConfigError("dtst_layers", f"must be >= 0, got {self.layers}")
        if self.heads < 1:
            raise ConfigError("dtst_heads", f"must be >= 1, got {self.heads}")
        if self.ff_mult < 1:
            raise ConfigError("dtst_ff_mult", f"must be >= 1, got {self.ff_mult}")
        if self.t_max < 2:
            raise ConfigError("T_max", f"must be >= 2, got {self.t_max}")


@dataclass
class MaskPlan:
    """Which (frame, slot) tokens are replaced by the mask token; masked has shape (..., T, K)."""

    masked: torch.Tensor
    ratio: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio must be in [0, 1], got {self.ratio}")
        self.masked = self.masked.to(torch.bool)


# ─── PARAMETERS ──────────────────────────────────────────────────────────────────────
def init_dtst_params(
    store: ParamStore, d_slot: int, cfg: DTSTConfig, generator: torch.Generator, dtype=torch.float32
) -> None:
    if d_slot % cfg.heads:
        raise ConfigError("dtst_heads", f"d_slot={d_slot} is not divisible by {cfg.heads} heads")
    init_normal(store, "dtst.mask_token", (d_slot,), MASK_TOKEN_STD, generator, dtype)
    for layer in range(cfg.layers):
        prefix = f"dtst.layer{layer}"
        init_layer_norm(store, f"{prefix}.ln1", d_slot, dtype)
        init_linear(store, f"{prefix}.W_qkv", d_slot, 3 * d_slot, generator, dtype)
        store.add(f"{prefix}.b_qkv", torch.zeros(3 * d_slot, dtype=dtype))
        init_linear(store, f"{prefix}.W_o", d_slot, d_slot, generator, dtype)
        store.add(f"{prefix}.b_o", torch.zeros(d_slot, dtype=dtype))
        init_layer_norm(store, f"{prefix}.ln2", d_slot, dtype)
        init_mlp(store, f"{prefix}.ff", d_slot, cfg.ff_mult * d_slot, d_slot, generator, dtype)


# ─── TEMPORAL ENCODING ───────────────────────────────────────────────────────────────
def temporal_pe(t: int, d_slot: int, t_max: int = 64, dtype=torch.float32) -> torch.Tensor:
    """Sinusoid for frame t: dim 2i holds sin(t / 10000^(2i/d)), dim 2i+1 the cosine."""
    if not 0 <= t < t_max:
        raise ContractError(f"frame index {t} outside [0, {t_max})")
    index = torch.arange(d_slot, dtype=torch.float64)
    angle = t / torch.pow(10000.0, 2.0 * torch.div(index, 2, rounding_mode="floor") / d_slot)
    pe = torch.where(index % 2 == 0, torch.sin(angle), torch.cos(angle))
    return pe.to(dtype)


def temporal_pe_table(num_frames: int, d_slot: int, t_max: int = 64, dtype=torch.float32) -> torch.Tensor:
    if num_frames > t_max:
        raise ContractError(f"{num_frames} frames exceed the temporal context of {t_max}")
    return torch.stack([temporal_pe(t, d_slot, t_max, dtype) for t in range(num_frames)])


# ─── MASKING ─────────────────────────────────────────────────────────────────────────
def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def sample_mask_plan(valid: torch.Tensor, ratio: float, seed: int) -> MaskPlan:
    """
    Pick round_half_up(ratio * n_valid) valid tokens per clip uniformly without replacement.

    Args:
        valid (torch.Tensor): (..., T, K) validity; leading dims are clips.
        ratio (float): Fraction of valid tokens to mask.
        seed (int): Seed of the sampling generator.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio must be in [0, 1], got {ratio}")
    generator = torch.Generator().manual_seed(int(seed))
    valid = valid.to(torch.bool)
    flat_valid = valid.reshape(-1, valid.shape[-2] * valid.shape[-1])
    masked = torch.zeros_like(flat_valid)
    for clip in range(flat_valid.shape[0]):
        positions = torch.nonzero(flat_valid[clip]).reshape(-1)
        count = round_half_up(ratio * positions.numel())
        chosen = positions[torch.randperm(positions.numel(), generator=generator)[:count]]
        masked[clip, chosen] = True
    return MaskPlan(masked=masked.reshape(valid.shape), ratio=ratio, seed=int(seed))


def apply_mask(seq: SlotSequence, plan: MaskPlan, params: ParamStore) -> SlotSequence:
    """Replace masked tokens by the zero vector plus the learned mask-flag embedding."""
    if tuple(plan.masked.shape) != tuple(seq.valid.shape):
        raise ContractError(f"mask plan shape {tuple(plan.masked.shape)} does not match slots {tuple(seq.valid.shape)}")
    if bool((plan.masked & ~seq.valid).any()):
        raise ContractError("mask plan masks an invalid slot")
    token = params["dtst.mask_token"]
    slots = torch.where(plan.masked.unsqueeze(-1), token.expand_as(seq.slots), seq.slots)
    return SlotSequence(slots, seq.valid)


# ─── TRANSFORMER ─────────────────────────────────────────────────────────────────────
def _attention_mask(valid: torch.Tensor, masked: Optional[torch.Tensor], num_frames: int, num_slots: int) -> torch.Tensor:
    """
    (..., L, L) boolean of allowed (query, key) pairs over L = T*K tokens in frame-major order.

    Keys must be valid. Unmasked queries see every valid token. Queries at masked positions,
    which include the frame predict_next appends, only see tokens of their own slot track:
    masked tokens of a frame are otherwise identical and would decode identically. This is
    the one exception to the bidirectional attention of `dtst_forward`.
    """
    key_valid = valid.reshape(*valid.shape[:-2], 1, num_frames * num_slots)
    if masked is None:
        return key_valid
    slot_index = torch.arange(num_slots).repeat(num_frames)
    same_track = slot_index.unsqueeze(-1) == slot_index.unsqueeze(0)
    query_masked = masked.reshape(*masked.shape[:-2], num_frames * num_slots, 1)
    return key_valid & (~query_masked | same_track)


def dtst_forward(
    seq: SlotSequence, params: ParamStore, cfg: DTSTConfig, masked: Optional[torch.Tensor] = None
) -> SlotSequence:
    """
    Bidirectional pre-norm transformer over the T x K slot tokens. Mask-token queries are
    the exception: they attend along their own slot track only (see `_attention_mask`).

    The temporal embedding of each token's frame is added to the normalised input of every
    layer, so the residual stream carries the slots themselves; with no layers or with
    zero weights the output equals the input. Invalid tokens are never attended to and
    come out as zeros.

    Args:
        seq (SlotSequence): Slots (..., T, K, d_slot).
        params (ParamStore): Store holding the "dtst.*" entries.
        cfg (DTSTConfig): Layer count, heads and temporal context.
        masked (torch.Tensor, optional): (..., T, K) positions holding mask tokens; their
            queries attend along their own slot track only.

    Returns:
        SlotSequence: Same shape and validity as the input.
    """
    d_slot = params["dtst.mask_token"].shape[0]
    if seq.d_slot != d_slot:
        raise ContractError(f"slot width {seq.d_slot} does not match DTST width {d_slot}")
    if d_slot % cfg.heads:
        raise ContractError(f"d_slot={d_slot} is not divisible by {cfg.heads} heads")
    if cfg.layers == 0:
        return seq

    num_frames, num_slots = seq.num_frames, seq.num_slots
    lead = seq.slots.shape[:-3]
    length = num_frames * num_slots
    head_dim = d_slot // cfg.heads

    x = seq.slots.reshape(*lead, length, d_slot)
    pe = temporal_pe_table(num_frames, d_slot, cfg.t_max, x.dtype).repeat_interleave(num_slots, dim=0)
    allowed = _attention_mask(seq.valid, masked, num_frames, num_slots).unsqueeze(-3)

    for layer in range(cfg.layers):
        prefix = f"dtst.layer{layer}"
        h = layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"]) + pe
        qkv = h @ params[f"{prefix}.W_qkv"] + params[f"{prefix}.b_qkv"]
        q, k, v = (
            part.reshape(*lead, length, cfg.heads, head_dim).transpose(-2, -3) for part in qkv.split(d_slot, dim=-1)
        )
        scores = q @ k.transpose(-1, -2) / math.sqrt(head_dim)
        attn = masked_softmax(scores, allowed, axis=-1)
        context = (attn @ v).transpose(-2, -3).reshape(*lead, length, d_slot)
        x = x + context @ params[f"{prefix}.W_o"] + params[f"{prefix}.b_o"]
        x = x + mlp_forward(layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"]), params, f"{prefix}.ff")

    slots = x.reshape(seq.slots.shape)
    slots = torch.where(seq.valid.unsqueeze(-1), slots, torch.zeros_like(slots))
    return SlotSequence(slots, seq.valid)


def predict_next(
    buffer: SlotSequence, params: ParamStore, cfg: DTSTConfig, merger_cfg: Optional[MergerConfig]
) -> SlotFrame:
    """
    Predict the slots of the frame after `buffer`.

    One frame of K mask tokens (zero slots carrying the mask-flag embedding) is appended at
    temporal position len(buffer), the transformer runs over the extended sequence, and
    the appended frame's outputs are merged when `merger_cfg` is given.

    Args:
        buffer (SlotSequence): The most recent frames (..., T', K, d_slot), T' >= 1.
        params (ParamStore): Store holding the "dtst.*" entries.
        cfg (DTSTConfig): Transformer settings.
        merger_cfg (MergerConfig, optional): Applied to the prediction; None skips merging.

    Returns:
        SlotFrame: Initial slots for the next slot-attention call.

    Raises:
        ContractError: If the buffer is empty.
    """
    if buffer.slots.dim() < 3 or buffer.num_frames < 1:
        raise ContractError("predict_next needs a buffer with at least one frame")
    lead = buffer.slots.shape[:-3]
    num_slots, d_slot = buffer.num_slots, buffer.d_slot
    token = params["dtst.mask_token"]

    future = token.expand(*lead, 1, num_slots, d_slot)
    future_valid = torch.ones(*lead, 1, num_slots, dtype=torch.bool)
    extended = SlotSequence(
        torch.cat([buffer.slots, future], dim=-3), torch.cat([buffer.valid, future_valid], dim=-2)
    )
    masked = torch.zeros_like(extended.valid)
    masked[..., -1, :] = True

    out = dtst_forward(extended, params, cfg, masked=masked)
    prediction = SlotFrame(out.slots.select(-3, -1), out.valid.select(-2, -1))
    if merger_cfg is None:
        return prediction
    return merge_frames(prediction, merger_cfg)

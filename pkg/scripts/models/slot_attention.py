# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from scripts.errors import ContractError
from scripts.nn import (
    ParamStore,
    gru_cell,
    init_gru,
    init_layer_norm,
    init_linear,
    init_mlp,
    layer_norm,
    masked_softmax,
    mlp_forward,
)
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

# added to the per-slot location sum so all-zero (invalid) columns normalise to zero
WEIGHT_EPS = 1e-8


# ─── SLOT CONTAINERS ─────────────────────────────────────────────────────────────────
@dataclass
class SlotFrame:
    """
    Slots of one frame with their validity mask.

    slots: (..., K, d_slot); valid: (..., K) booleans. Leading dims are a batch.
    Every frame has at least one valid slot and invalid rows are exactly zero.
    """

    slots: torch.Tensor
    valid: torch.Tensor

    def __post_init__(self):
        if self.slots.dim() < 2:
            raise ContractError(f"slots must be (..., K, d), got shape {tuple(self.slots.shape)}")
        if self.valid.dtype != torch.bool:
            self.valid = self.valid.to(torch.bool)
        if tuple(self.valid.shape) != tuple(self.slots.shape[:-1]):
            raise ContractError(
                f"validity mask shape {tuple(self.valid.shape)} does not match slots {tuple(self.slots.shape[:-1])}"
            )
        if not bool(self.valid.any(dim=-1).all()):
            raise ContractError("a slot frame needs at least one valid slot")
        if bool((self.slots.detach()[~self.valid] != 0).any()):
            raise ContractError("invalid slots must be exactly zero")

    @property
    def num_slots(self) -> int:
        return self.slots.shape[-2]

    @property
    def d_slot(self) -> int:
        return self.slots.shape[-1]

    def num_valid(self) -> torch.Tensor:
        return self.valid.sum(dim=-1)

    def permute(self, order: Sequence[int]) -> "SlotFrame":
        index = torch.as_tensor(list(order), dtype=torch.long)
        return SlotFrame(self.slots.index_select(-2, index), self.valid.index_select(-1, index))

    def detach(self) -> "SlotFrame":
        return SlotFrame(self.slots.detach(), self.valid)


@dataclass
class SlotSequence:
    """Slots over T frames: slots (..., T, K, d_slot), valid (..., T, K)."""

    slots: torch.Tensor
    valid: torch.Tensor

    def __post_init__(self):
        if self.slots.dim() < 3:
            raise ContractError(f"slot sequence must be (..., T, K, d), got shape {tuple(self.slots.shape)}")
        if self.valid.dtype != torch.bool:
            self.valid = self.valid.to(torch.bool)
        if tuple(self.valid.shape) != tuple(self.slots.shape[:-1]):
            raise ContractError(
                f"validity mask shape {tuple(self.valid.shape)} does not match slots {tuple(self.slots.shape[:-1])}"
            )

    @property
    def num_frames(self) -> int:
        return self.slots.shape[-3]

    @property
    def num_slots(self) -> int:
        return self.slots.shape[-2]

    @property
    def d_slot(self) -> int:
        return self.slots.shape[-1]

    def frame(self, t: int) -> SlotFrame:
        return SlotFrame(self.slots.select(-3, t), self.valid.select(-2, t))

    def detach(self) -> "SlotSequence":
        return SlotSequence(self.slots.detach(), self.valid)

    @classmethod
    def stack(cls, frames: List[SlotFrame]) -> "SlotSequence":
        if not frames:
            raise ContractError("cannot stack an empty list of slot frames")
        shapes = {(f.num_slots, f.d_slot) for f in frames}
        if len(shapes) != 1:
            raise ContractError(f"slot frames differ in (K, d_slot): {sorted(shapes)}")
        return cls(torch.stack([f.slots for f in frames], dim=-3), torch.stack([f.valid for f in frames], dim=-2))


# ─── PARAMETERS ──────────────────────────────────────────────────────────────────────
def init_slot_attention_params(
    store: ParamStore, d_feature: int, d_slot: int, mlp_hidden: int, generator: torch.Generator, dtype=torch.float32
) -> None:
    init_linear(store, "sa.W_q", d_slot, d_slot, generator, dtype)
    init_linear(store, "sa.W_k", d_feature, d_slot, generator, dtype)
    init_linear(store, "sa.W_v", d_feature, d_slot, generator, dtype)
    init_layer_norm(store, "sa.ln_in", d_feature, dtype)
    init_layer_norm(store, "sa.ln_slot", d_slot, dtype)
    init_layer_norm(store, "sa.ln_mlp", d_slot, dtype)
    init_gru(store, "sa.gru", d_slot, generator, dtype)
    init_mlp(store, "sa.mlp", d_slot, mlp_hidden, d_slot, generator, dtype)


# ─── INITIALISATION ──────────────────────────────────────────────────────────────────
def init_slots_gaussian(num_slots: int, d_slot: int, seed: int, dtype=torch.float32) -> SlotFrame:
    """K slots with i.i.d. N(0, 1) entries from a generator seeded with `seed`; all valid."""
    if num_slots < 1 or d_slot < 1:
        raise ContractError(f"need K >= 1 and d_slot >= 1, got K={num_slots}, d_slot={d_slot}")
    generator = torch.Generator().manual_seed(int(seed))
    slots = torch.randn(num_slots, d_slot, generator=generator, dtype=torch.float64).to(dtype)
    return SlotFrame(slots, torch.ones(num_slots, dtype=torch.bool))


def init_slots_gaussian_batch(num_slots: int, d_slot: int, seeds: Sequence[int], dtype=torch.float32) -> SlotFrame:
    frames = [init_slots_gaussian(num_slots, d_slot, seed, dtype) for seed in seeds]
    return SlotFrame(torch.stack([f.slots for f in frames]), torch.stack([f.valid for f in frames]))


# ─── SLOT ATTENTION ──────────────────────────────────────────────────────────────────
def attention_step(x: torch.Tensor, sf: SlotFrame, params: ParamStore) -> Tuple[SlotFrame, torch.Tensor]:
    """
    One round of competitive attention followed by the recurrent and residual updates.

    Softmax runs over the valid slots for every location, so slots compete for features;
    each slot then takes the attention-weighted mean of the values and feeds it to the GRU.

    Args:
        x (torch.Tensor): Features (..., N, D_feature).
        sf (SlotFrame): Current slots (..., K, d_slot).
        params (ParamStore): Store holding the "sa.*" entries.

    Returns:
        Tuple[SlotFrame, torch.Tensor]: Updated slots (invalid rows stay zero) and the
        attention map (..., N, K) whose rows sum to one over the valid slots.
    """
    if x.shape[-1] != params["sa.W_k"].shape[0]:
        raise ContractError(f"features have width {x.shape[-1]}, slot attention expects {params['sa.W_k'].shape[0]}")
    slots, valid = sf.slots, sf.valid
    d_slot = slots.shape[-1]

    features = layer_norm(x, params["sa.ln_in.gain"], params["sa.ln_in.bias"])
    keys = features @ params["sa.W_k"]
    values = features @ params["sa.W_v"]
    queries = layer_norm(slots, params["sa.ln_slot.gain"], params["sa.ln_slot.bias"]) @ params["sa.W_q"]

    logits = keys @ queries.transpose(-1, -2) / math.sqrt(d_slot)
    attn = masked_softmax(logits, valid.unsqueeze(-2), axis=-1)
    weights = attn / (attn.sum(dim=-2, keepdim=True) + WEIGHT_EPS)
    updates = weights.transpose(-1, -2) @ values

    new_slots = gru_cell(slots, updates, params, prefix="sa.gru")
    new_slots = new_slots + mlp_forward(
        layer_norm(new_slots, params["sa.ln_mlp.gain"], params["sa.ln_mlp.bias"]), params, "sa.mlp"
    )
    new_slots = torch.where(valid.unsqueeze(-1), new_slots, torch.zeros_like(new_slots))
    return SlotFrame(new_slots, valid), attn


def f_sa_with_attention(
    x: torch.Tensor, s_init: SlotFrame, params: ParamStore, n_iter: int
) -> Tuple[SlotFrame, Optional[torch.Tensor]]:
    """`f_sa` that also returns the attention map of the last iteration (None when n_iter=0)."""
    if n_iter < 0:
        raise ContractError(f"n_iter must be >= 0, got {n_iter}")
    sf, attn = s_init, None
    for _ in range(n_iter):
        sf, attn = attention_step(x, sf, params)
    return sf, attn


def f_sa(x: torch.Tensor, s_init: SlotFrame, params: ParamStore, n_iter: int) -> SlotFrame:
    """Slot encoder: `n_iter` attention steps starting from `s_init`; n_iter=0 is the identity."""
    return f_sa_with_attention(x, s_init, params, n_iter)[0]

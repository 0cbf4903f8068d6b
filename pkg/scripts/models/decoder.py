# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from dataclasses import dataclass
from typing import Tuple

import torch

from scripts.errors import ContractError
from scripts.models.slot_attention import SlotFrame
from scripts.nn import ParamStore, init_mlp, init_normal, masked_softmax, mlp_forward
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

POS_STD = 0.02


@dataclass
class DecodedFrame:
    """
    Decoder output for one (or a batch of) frame(s).

    x_recon: (..., N, D_feature); masks: (..., K, N), summing to one over valid slots with
    invalid rows identically zero; per_slot_features: (..., K, N, D_feature).
    """

    x_recon: torch.Tensor
    masks: torch.Tensor
    per_slot_features: torch.Tensor


def init_decoder_params(
    store: ParamStore,
    num_patches: int,
    d_slot: int,
    d_feature: int,
    hidden: int,
    generator: torch.Generator,
    dtype=torch.float32,
) -> None:
    init_normal(store, "dec.pos", (num_patches, d_slot), POS_STD, generator, dtype)
    init_mlp(store, "dec.mlp", d_slot, hidden, d_feature + 1, generator, dtype)


def decode_slot(slot: torch.Tensor, params: ParamStore) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Broadcast a slot to every patch position and decode it with the shared MLP.

    Args:
        slot (torch.Tensor): (..., d_slot); leading dims may hold a batch and the slot axis.
        params (ParamStore): Store holding "dec.pos" and the "dec.mlp" entries.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: Features (..., N, D_feature) and alpha logits (..., N).
    """
    pos = params["dec.pos"]
    if slot.shape[-1] != pos.shape[-1]:
        raise ContractError(f"slot width {slot.shape[-1]} does not match positional encoding width {pos.shape[-1]}")
    tokens = slot.unsqueeze(-2) + pos
    out = mlp_forward(tokens, params, "dec.mlp")
    return out[..., :-1], out[..., -1]


def combine_slots(features: torch.Tensor, alpha: torch.Tensor, valid: torch.Tensor) -> DecodedFrame:
    """
    Softmax the alpha logits across valid slots and take the mask-weighted sum of features.

    Args:
        features (torch.Tensor): Per-slot features (..., K, N, D_feature).
        alpha (torch.Tensor): Per-slot alpha logits (..., K, N).
        valid (torch.Tensor): (..., K) booleans; at least one valid slot per frame.

    Raises:
        ContractError: If a frame has no valid slot or the shapes disagree.
    """
    if tuple(alpha.shape) != tuple(features.shape[:-1]) or tuple(valid.shape) != tuple(alpha.shape[:-1]):
        raise ContractError(
            f"combine_slots: features {tuple(features.shape)}, alpha {tuple(alpha.shape)} and "
            f"valid {tuple(valid.shape)} are inconsistent"
        )
    if not bool(valid.any(dim=-1).all()):
        raise ContractError("combine_slots: a frame has no valid slot")
    masks = masked_softmax(alpha, valid.unsqueeze(-1), axis=-2)
    x_recon = (masks.unsqueeze(-1) * features).sum(dim=-3)
    return DecodedFrame(x_recon=x_recon, masks=masks, per_slot_features=features)


def decode_frame(sf: SlotFrame, params: ParamStore) -> DecodedFrame:
    features, alpha = decode_slot(sf.slots, params)
    return combine_slots(features, alpha, sf.valid)


def recon_loss(x_recon: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over every element (frames, patches, channels, batch)."""
    if tuple(x_recon.shape) != tuple(x.shape):
        raise ContractError(f"recon_loss: shape mismatch {tuple(x_recon.shape)} vs {tuple(x.shape)}")
    return ((x_recon - x) ** 2).mean()

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from scripts.errors import ConfigError, ContractError
from scripts.models.slot_attention import SlotFrame, SlotSequence
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)


# ─── SCHEMAS ─────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class MergerConfig:
    theta: float = 0.90
    eps: float = 1e-8

    def __post_init__(self):
        if not -1.0 <= self.theta <= 1.0:
            raise ConfigError("theta", f"must be in [-1, 1], got {self.theta}")
        if not self.eps > 0:
            raise ConfigError("merge_eps", f"must be > 0, got {self.eps}")


@dataclass
class MergeResult:
    """
    Outcome of merging one frame.

    merged holds each cluster's mean in its representative (lowest-index) row and zeros
    elsewhere; cluster_of maps every slot to its representative index, -1 for slots that
    were already invalid.
    """

    merged: SlotFrame
    valid: torch.Tensor
    cluster_of: torch.Tensor

    @property
    def num_clusters(self) -> int:
        return int(self.valid.sum())


# ─── SIMILARITY ──────────────────────────────────────────────────────────────────────
def cosine_similarity(a, b, eps: float = 1e-8) -> float:
    """a.b / (|a| |b| + eps); zero vectors give 0."""
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape or a.dim() != 1:
        raise ContractError(f"cosine_similarity expects two vectors of equal length, got {tuple(a.shape)}, {tuple(b.shape)}")
    return float((a @ b) / (torch.linalg.vector_norm(a) * torch.linalg.vector_norm(b) + eps))


def similarity_matrix(slots: torch.Tensor, eps: float) -> torch.Tensor:
    """Pairwise cosine similarity (..., K, K) of the rows of `slots` (..., K, d)."""
    norms = torch.linalg.vector_norm(slots, dim=-1)
    return (slots @ slots.transpose(-1, -2)) / (norms.unsqueeze(-1) * norms.unsqueeze(-2) + eps)


# ─── MERGING ─────────────────────────────────────────────────────────────────────────
def merge_clusters(slots: torch.Tensor, valid: torch.Tensor, cfg: MergerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cluster the valid slots of one frame.

    Edges join valid pairs with similarity >= theta; clusters are the connected components.

    Returns:
        Tuple[np.ndarray, np.ndarray]: cluster_of (K,) representative index per slot (-1 for
        invalid slots) and the boolean representative mask.
    """
    with torch.no_grad():
        sim = similarity_matrix(slots.detach().to(torch.float64), cfg.eps).numpy()
    valid_np = valid.detach().numpy().astype(bool)
    num_slots = valid_np.shape[0]
    adjacency = (sim >= cfg.theta) & valid_np[:, None] & valid_np[None, :]
    np.fill_diagonal(adjacency, False)

    _, labels = connected_components(coo_matrix(adjacency), directed=False)
    cluster_of = np.full(num_slots, -1, dtype=np.int64)
    for label in np.unique(labels[valid_np]):
        members = np.flatnonzero(valid_np & (labels == label))
        cluster_of[members] = members.min()
    representatives = np.zeros(num_slots, dtype=bool)
    representatives[cluster_of[valid_np]] = True
    return cluster_of, representatives


def merge_frame(sf: SlotFrame, cfg: MergerConfig) -> MergeResult:
    """
    Merge redundant slots of a single frame (slots (K, d)).

    The clustering decision is discrete and taken without gradients; the merged rows are
    a linear average of the members, so gradients reach every member slot.

    Args:
        sf (SlotFrame): Unbatched slot frame.
        cfg (MergerConfig): Threshold and epsilon.

    Returns:
        MergeResult: Merged slots, the new validity mask and the cluster map.
    """
    if sf.slots.dim() != 2:
        raise ContractError(f"merge_frame expects one frame (K, d), got shape {tuple(sf.slots.shape)}")
    cluster_of, representatives = merge_clusters(sf.slots, sf.valid, cfg)
    cluster_tensor = torch.from_numpy(cluster_of)
    valid = torch.from_numpy(representatives)

    if bool((valid == sf.valid).all()):
        return MergeResult(merged=sf, valid=sf.valid, cluster_of=cluster_tensor)

    num_slots = sf.num_slots
    averaging = np.zeros((num_slots, num_slots), dtype=np.float64)
    for rep in np.flatnonzero(representatives):
        members = np.flatnonzero(cluster_of == rep)
        averaging[rep, members] = 1.0 / len(members)
    merged = torch.from_numpy(averaging).to(sf.slots.dtype) @ sf.slots
    return MergeResult(merged=SlotFrame(merged, valid), valid=valid, cluster_of=cluster_tensor)


def merge_frames(sf: SlotFrame, cfg: MergerConfig) -> SlotFrame:
    """`merge_frame` over any leading batch dims of `sf`."""
    if sf.slots.dim() == 2:
        return merge_frame(sf, cfg).merged
    num_slots, d_slot = sf.slots.shape[-2:]
    lead = sf.slots.shape[:-2]
    flat_slots = sf.slots.reshape(-1, num_slots, d_slot)
    flat_valid = sf.valid.reshape(-1, num_slots)
    results = [merge_frame(SlotFrame(flat_slots[i], flat_valid[i]), cfg).merged for i in range(flat_slots.shape[0])]
    return SlotFrame(
        torch.stack([r.slots for r in results]).reshape(*lead, num_slots, d_slot),
        torch.stack([r.valid for r in results]).reshape(*lead, num_slots),
    )


def merge_sequence(seq: SlotSequence, cfg: MergerConfig) -> Tuple[SlotSequence, torch.Tensor]:
    """Merge every frame independently; returns the merged sequence and m_s (..., T, K)."""
    merged = merge_frames(SlotFrame(seq.slots, seq.valid), cfg)
    return SlotSequence(merged.slots, merged.valid), merged.valid

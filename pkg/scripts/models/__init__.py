"""
Learned modules: slot attention, broadcast decoder, slot merger and the temporal slot transformer.

Every module is a set of pure functions over a shared ParamStore; `build_params` creates
the store for a given set of ModelDims.
"""

from .slot_attention import (
    SlotFrame,
    SlotSequence,
    attention_step,
    f_sa,
    f_sa_with_attention,
    init_slots_gaussian,
    init_slots_gaussian_batch,
)
from .decoder import DecodedFrame, combine_slots, decode_frame, decode_slot, recon_loss
from .merger import MergeResult, MergerConfig, cosine_similarity, merge_frame, merge_frames, merge_sequence
from .dtst import (
    DTSTConfig,
    MaskPlan,
    apply_mask,
    dtst_forward,
    predict_next,
    sample_mask_plan,
    temporal_pe,
)
from .params import ModelDims, build_params, check_compatible

__all__ = [
    "SlotFrame",
    "SlotSequence",
    "attention_step",
    "f_sa",
    "f_sa_with_attention",
    "init_slots_gaussian",
    "init_slots_gaussian_batch",
    "DecodedFrame",
    "combine_slots",
    "decode_frame",
    "decode_slot",
    "recon_loss",
    "MergeResult",
    "MergerConfig",
    "cosine_similarity",
    "merge_frame",
    "merge_frames",
    "merge_sequence",
    "DTSTConfig",
    "MaskPlan",
    "apply_mask",
    "dtst_forward",
    "predict_next",
    "sample_mask_plan",
    "temporal_pe",
    "ModelDims",
    "build_params",
    "check_compatible",
]

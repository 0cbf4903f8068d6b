"""
Training and inference pipelines: losses of both stages, the optimizer, the Trainer and
the sliding-buffer rollout.
"""

from .optimizer import OptimizerState, adam_update
from .pipeline import (
    BRANCH_BYPASS,
    BRANCH_DTST,
    BRANCH_DTST_MERGER,
    BRANCH_PRETRAIN,
    RolloutResult,
    StepOutcome,
    clip_features,
    encode_dynamic,
    encode_recurrent,
    feature_encoder,
    pretrain_loss,
    rollout,
    stage2_loss,
    stage_loss,
)
from .trainer import Trainer, initial_store
from .gradcheck import run_gradcheck, stage2_check_config

__all__ = [
    "OptimizerState",
    "adam_update",
    "BRANCH_BYPASS",
    "BRANCH_DTST",
    "BRANCH_DTST_MERGER",
    "BRANCH_PRETRAIN",
    "RolloutResult",
    "StepOutcome",
    "clip_features",
    "encode_dynamic",
    "encode_recurrent",
    "feature_encoder",
    "pretrain_loss",
    "rollout",
    "stage2_loss",
    "stage_loss",
    "Trainer",
    "initial_store",
    "run_gradcheck",
    "stage2_check_config",
]

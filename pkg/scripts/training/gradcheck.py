# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from typing import Dict

import torch

from scripts.data.synth import generate_sprite_video
from scripts.models import build_params
from scripts.nn import ParamStore, gradient_check
from scripts.runconfig import RunConfig
from utils import load_config, setup_logger
from .pipeline import clip_features, feature_encoder, pretrain_loss, stage2_loss

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

GRADCHECK_SEED = 7


def stage2_check_config(cfg: RunConfig) -> RunConfig:
    """
    Stage-2 settings whose loss is smooth in the parameters.

    Merging only fires for exactly parallel slots at theta=1, so the cluster structure
    does not flip under finite-difference perturbations; the transformer branch with
    merging is always taken.
    """
    return cfg.with_overrides(
        stage="stage2", theta=1.0, p_b=0.0, p_d=0.0, use_dtst=True, use_merger=True, use_xslot=True
    )


def check_batch(cfg: RunConfig, seed: int = GRADCHECK_SEED) -> torch.Tensor:
    """(1, T, N, D) float64 features of one generated clip."""
    video = generate_sprite_video(cfg.generator_config(), seed)
    features = clip_features(video.frames, cfg, feature_encoder(cfg, dtype=torch.float64))
    return features[: cfg.T].unsqueeze(0)


def run_gradcheck(cfg: RunConfig, seed: int = GRADCHECK_SEED, eps: float = 1e-5) -> Dict[str, float]:
    """
    Finite-difference check of the pretraining and stage-2 losses in 64-bit mode.

    Args:
        cfg (RunConfig): Dimensions to check (normally `RunConfig.tiny()`).
        seed (int): Seeds parameters, clip and the per-call step generator.
        eps (float): Finite-difference step.

    Returns:
        Dict[str, float]: Maximum relative error per pipeline.
    """
    x = check_batch(cfg, seed)
    store: ParamStore = build_params(cfg.model_dims(), seed=seed, dtype=torch.float64)
    stage2_cfg = stage2_check_config(cfg)

    def pretrain(params: ParamStore) -> torch.Tensor:
        return pretrain_loss(x, params, cfg, torch.Generator().manual_seed(seed)).loss

    def stage2(params: ParamStore) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        return stage2_loss(x, params, stage2_cfg, generator, detach_init=False).loss

    errors = {
        "pretrain": gradient_check(pretrain, store, eps=eps),
        "stage2": gradient_check(stage2, store, eps=eps),
    }
    logger.info("Gradient check: %s", errors)
    return errors

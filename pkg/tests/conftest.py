from typing import List, NamedTuple

import pytest
import torch

from scripts.data import GeneratorConfig, SpriteVideo, generate_sprite_video
from scripts.models import build_params
from scripts.nn import ParamStore
from scripts.runconfig import RunConfig
from scripts.training import Trainer, clip_features, initial_store


class OverfitRun(NamedTuple):
    cfg: RunConfig
    store: ParamStore
    videos: List[SpriteVideo]
    clips: List[torch.Tensor]
    first_loss: float
    last_loss: float


@pytest.fixture()
def tiny_cfg() -> RunConfig:
    """Smallest run configuration (N=4, K=2, d_slot=4, D_feature=4, T=2)."""
    return RunConfig.tiny()


@pytest.fixture()
def tiny_store(tiny_cfg: RunConfig):
    """Freshly initialised float64 parameters for the tiny configuration."""
    return build_params(tiny_cfg.model_dims(), seed=0, dtype=torch.float64)


@pytest.fixture(scope="session")
def overfit_run() -> OverfitRun:
    """
    Seed-0 two-stage run on 8 generated clips: 1500 pretraining steps, then 500 stage-2 steps.

    Minutes of CPU time; only requested by tests marked slow.
    """
    cfg = RunConfig(num_sprites=2, T=5, K=7, lr=4e-4, steps=1500)
    videos = [generate_sprite_video(GeneratorConfig(num_sprites=2, num_frames=10), seed) for seed in range(8)]
    clips = [clip_features(v.frames, cfg) for v in videos]

    pretrain = Trainer(cfg, clips)
    first = pretrain.fit()[0]["loss"]
    stage2_cfg = cfg.with_overrides(stage="stage2", steps=500)
    stage2 = Trainer(stage2_cfg, clips, store=initial_store(stage2_cfg, pretrain.state()))
    last = stage2.fit()[-1]["loss"]
    return OverfitRun(stage2_cfg, stage2.store, videos, clips, first, last)

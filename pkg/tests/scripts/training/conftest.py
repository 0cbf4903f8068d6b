import pytest

from scripts.data import generate_sprite_video
from scripts.training import clip_features


@pytest.fixture()
def tiny_clips(tiny_cfg):
    """Features of three generated clips at the tiny configuration."""
    return [clip_features(generate_sprite_video(tiny_cfg.generator_config(), seed).frames, tiny_cfg) for seed in range(3)]

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from dataclasses import dataclass, field

import torch

from scripts.errors import ConfigError
from scripts.models.decoder import init_decoder_params
from scripts.models.dtst import DTSTConfig, init_dtst_params
from scripts.models.slot_attention import init_slot_attention_params
from scripts.nn import ParamStore
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)


@dataclass(frozen=True)
class ModelDims:
    """Extents of every learned module. No parameter shape depends on the slot count."""

    num_slots: int
    d_slot: int
    d_feature: int
    num_patches: int
    n_iter: int = 3
    sa_mlp_hidden: int = 128
    decoder_hidden: int = 128
    dtst: DTSTConfig = field(default_factory=DTSTConfig)

    def __post_init__(self):
        for key, value in (
            ("K", self.num_slots),
            ("d_slot", self.d_slot),
            ("D_feature", self.d_feature),
            ("N", self.num_patches),
            ("sa_mlp_hidden", self.sa_mlp_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ):
            if value < 1:
                raise ConfigError(key, f"must be >= 1, got {value}")
        if self.n_iter < 0:
            raise ConfigError("n_iter", f"must be >= 0, got {self.n_iter}")
        if self.d_slot % self.dtst.heads:
            raise ConfigError("dtst_heads", f"d_slot={self.d_slot} is not divisible by {self.dtst.heads} heads")


def build_params(dims: ModelDims, seed: int, dtype=torch.float32) -> ParamStore:
    """
    Fresh parameters for slot attention, decoder and DTST from one seeded generator.

    Modules are initialised in a fixed order so a seed always yields the same store.
    """
    generator = torch.Generator().manual_seed(int(seed))
    store = ParamStore()
    init_slot_attention_params(store, dims.d_feature, dims.d_slot, dims.sa_mlp_hidden, generator, dtype)
    init_decoder_params(store, dims.num_patches, dims.d_slot, dims.d_feature, dims.decoder_hidden, generator, dtype)
    init_dtst_params(store, dims.d_slot, dims.dtst, generator, dtype)
    logger.info(
        "Built %s parameter tensors (%s values) with seed %s",
        len(store),
        sum(t.numel() for _, t in store.items()),
        seed,
    )
    return store


def check_compatible(store: ParamStore, dims: ModelDims) -> None:
    """Raise ConfigError if a stored tensor's shape disagrees with `dims`."""
    expected = build_shapes(dims)
    actual = store.shapes()
    missing = sorted(set(expected) - set(actual))
    if missing:
        raise ConfigError("model", f"checkpoint lacks parameters {missing[:3]}")
    for name, shape in expected.items():
        if actual[name] != shape:
            raise ConfigError("model", f"parameter '{name}' has shape {actual[name]} in the checkpoint, config implies {shape}")


def build_shapes(dims: ModelDims) -> dict:
    return build_params(dims, seed=0, dtype=torch.float32).shapes()

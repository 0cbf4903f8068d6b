"""
Experiment configuration: one flat, validated record for generator, model, merger,
transformer, training and evaluation settings.

Application settings (directories, logging) stay in config.yaml; everything that
changes what a run computes lives here and is echoed into checkpoints and reports.
"""

# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

from scripts.data.synth import SHAPES, GeneratorConfig
from scripts.errors import ConfigError
from scripts.models.dtst import DTSTConfig
from scripts.models.merger import MergerConfig
from scripts.models.params import ModelDims
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

STAGES = ("pretrain", "stage2")


@dataclass
class RunConfig:
    # generator
    canvas: int = 64
    num_sprites: int = 2
    radius_min: int = 5
    radius_max: int = 9
    shapes: List[str] = field(default_factory=lambda: list(SHAPES))
    background: str = "solid"
    entry_exit: bool = False
    max_speed: float = 2.0
    num_frames: int = 10
    # model
    K: int = 7
    d_slot: int = 64
    D_feature: int = 64
    P: int = 8
    T: int = 5
    n_iter: int = 3
    sa_mlp_hidden: int = 128
    decoder_hidden: int = 128
    feature_seed: int = 0
    # merger
    theta: float = 0.90
    merge_eps: float = 1e-8
    # dtst
    dtst_layers: int = 3
    dtst_heads: int = 4
    dtst_ff_mult: int = 4
    T_max: int = 64
    # training
    stage: str = "pretrain"
    p_b: float = 0.5
    p_d: float = 0.5
    mask_ratio: float = 0.15
    lr: float = 4e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1500
    batch: int = 4
    seed: int = 0
    use_dtst: bool = True
    use_merger: bool = True
    use_xslot: bool = True
    cold_start: bool = False
    detach_init: bool = True
    log_every: int = 10
    # evaluation
    eval_seed: int = 1234
    corloc_iou: float = 0.5
    eval_clip_length: int = 0

    def __post_init__(self):
        self._check_types()
        self._check_ranges()

    # ─── VALIDATION ──────────────────────────────────────────────────────────
    def _check_types(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in (int, "int"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f.name, f"expected an integer, got {value!r}")
            elif f.type in (float, "float"):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f.name, f"expected a number, got {value!r}")
                setattr(self, f.name, float(value))
            elif f.type in (bool, "bool"):
                if not isinstance(value, bool):
                    raise ConfigError(f.name, f"expected true/false, got {value!r}")
            elif f.type in (str, "str"):
                if not isinstance(value, str):
                    raise ConfigError(f.name, f"expected a string, got {value!r}")
            elif not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f.name, f"expected a list of strings, got {value!r}")

    def _check_ranges(self) -> None:
        # sub-configs validate their own keys
        self.generator_config()
        self.merger_config()
        self.dtst_config()

        if self.P < 1 or self.canvas % self.P:
            raise ConfigError("P", f"canvas {self.canvas} must be divisible by the patch size {self.P}")
        if self.T < 1:
            raise ConfigError("T", f"must be >= 1, got {self.T}")
        if self.T + 1 > self.T_max:
            raise ConfigError("T", f"T + 1 must not exceed T_max={self.T_max}")
        if self.num_frames < self.T:
            raise ConfigError("num_frames", f"clips of {self.num_frames} frames are shorter than the window T={self.T}")
        self.model_dims()

        if self.stage not in STAGES:
            raise ConfigError("stage", f"must be one of {list(STAGES)}")
        for key in ("p_b", "p_d", "mask_ratio"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(key, f"must be in [0, 1], got {getattr(self, key)}")
        if self.use_xslot and not self.use_dtst:
            raise ConfigError("use_xslot", "next-slot initialisation needs the transformer (use_dtst)")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr}")
        for key in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(key, f"must be in [0, 1), got {getattr(self, key)}")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps", f"must be > 0, got {self.adam_eps}")
        if self.steps < 0:
            raise ConfigError("steps", f"must be >= 0, got {self.steps}")
        if self.batch < 1:
            raise ConfigError("batch", f"must be >= 1, got {self.batch}")
        if self.log_every < 1:
            raise ConfigError("log_every", f"must be >= 1, got {self.log_every}")
        if not 0.0 < self.corloc_iou <= 1.0:
            raise ConfigError("corloc_iou", f"must be in (0, 1], got {self.corloc_iou}")
        if self.eval_clip_length < 0:
            raise ConfigError("eval_clip_length", f"must be >= 0, got {self.eval_clip_length}")

    # ─── DERIVED SETTINGS ────────────────────────────────────────────────────
    @property
    def num_patches(self) -> int:
        return (self.canvas // self.P) ** 2

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            canvas=self.canvas,
            num_sprites=self.num_sprites,
            radius_min=self.radius_min,
            radius_max=self.radius_max,
            shapes=tuple(self.shapes),
            background=self.background,
            entry_exit=self.entry_exit,
            max_speed=self.max_speed,
            num_frames=self.num_frames,
        )

    def merger_config(self) -> MergerConfig:
        return MergerConfig(theta=self.theta, eps=self.merge_eps)

    def dtst_config(self) -> DTSTConfig:
        return DTSTConfig(layers=self.dtst_layers, heads=self.dtst_heads, ff_mult=self.dtst_ff_mult, t_max=self.T_max)

    def model_dims(self) -> ModelDims:
        return ModelDims(
            num_slots=self.K,
            d_slot=self.d_slot,
            d_feature=self.D_feature,
            num_patches=self.num_patches,
            n_iter=self.n_iter,
            sa_mlp_hidden=self.sa_mlp_hidden,
            decoder_hidden=self.decoder_hidden,
            dtst=self.dtst_config(),
        )

    # ─── SERIALISATION ───────────────────────────────────────────────────────
    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build a config from a mapping; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            values[key] = _coerce(known[key].type, value)
        return cls(**values)

    def with_overrides(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)

    @classmethod
    def tiny(cls, **changes) -> "RunConfig":
        """Smallest useful configuration: N=4, K=2, d_slot=4, D_feature=4, T=2, one 2-head layer."""
        data = dict(
            canvas=32,
            num_sprites=1,
            radius_min=4,
            radius_max=6,
            num_frames=3,
            K=2,
            d_slot=4,
            D_feature=4,
            P=16,
            T=2,
            n_iter=2,
            sa_mlp_hidden=8,
            decoder_hidden=8,
            dtst_layers=1,
            dtst_heads=2,
            dtst_ff_mult=2,
            batch=1,
            steps=10,
        )
        data.update(changes)
        return cls.from_dict(data)


def _coerce(kind, value):
    # PyYAML reads exponent-only numbers such as 1e-8 as strings
    if kind in (float, "float") and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_override(item: str) -> tuple:
    """Split `key=value`; the value is read as a YAML scalar or list."""
    if "=" not in item:
        raise ConfigError(item, "override must have the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as e:
        raise ConfigError(key, f"unparseable value {raw!r} ({e})") from e
    return key, value


def parse_config(
    path: Optional[Path] = None, overrides: Iterable[str] = (), base: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Load a run configuration from a JSON file and apply `key=value` overrides.

    Args:
        path (Path, optional): JSON config file; None or an empty file gives all defaults.
        overrides (Iterable[str]): Later entries win.
        base (Dict[str, Any], optional): Starting values (e.g. a checkpoint's config echo);
            the file and the overrides are applied on top.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigError: Unknown key, type mismatch or range violation, naming the key.
    """
    data: Dict[str, Any] = dict(base or {})
    if path is not None:
        path = Path(path)
        try:
            with path.open("r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(str(path), "config file not found") from None
        except yaml.YAMLError as e:
            raise ConfigError(str(path), f"not valid JSON ({e})") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(str(path), "must contain a JSON object")
        data.update(loaded)

    overrides = list(overrides)
    for item in overrides:
        key, value = parse_override(item)
        data[key] = value

    run_config = RunConfig.from_dict(data)
    logger.info("Parsed run config from %s with %s overrides", path or "defaults", len(overrides))
    return run_config

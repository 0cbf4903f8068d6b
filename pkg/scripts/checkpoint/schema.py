from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

FORMAT_VERSION = 1
MAGIC = b"SLOTCKPT"
PAYLOAD_DTYPE = "float32"


@dataclass
class TensorRecord:
    """
    Location of one named tensor inside the checkpoint payload.

    offset and nbytes are in bytes from the start of the payload; values are stored as
    little-endian float32 in row-major order.
    """

    name: str
    shape: Tuple[int, ...]
    offset: int
    nbytes: int
    trainable: bool = True
    dtype: str = PAYLOAD_DTYPE

    def __post_init__(self):
        # manual runtime validation, same as the other schema classes
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("tensor name must be a non-empty string")
        self.shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in self.shape):
            raise ValueError(f"tensor '{self.name}' has a negative extent {self.shape}")
        if self.dtype != PAYLOAD_DTYPE:
            raise ValueError(f"tensor '{self.name}' has unsupported dtype '{self.dtype}'")
        if self.offset < 0 or self.nbytes != 4 * self.numel:
            raise ValueError(f"tensor '{self.name}': byte range ({self.offset}, {self.nbytes}) does not match shape {self.shape}")
        if not isinstance(self.trainable, bool):
            raise TypeError("trainable must be a bool")

    @property
    def numel(self) -> int:
        count = 1
        for s in self.shape:
            count *= s
        return count

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dtype": self.dtype,
            "shape": list(self.shape),
            "offset": self.offset,
            "nbytes": self.nbytes,
            "trainable": self.trainable,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TensorRecord":
        required = ["name", "shape", "offset", "nbytes"]
        for key in required:
            if key not in data:
                raise ValueError(f"Required field '{key}' missing from tensor record")
        return cls(
            name=data["name"],
            shape=tuple(data["shape"]),
            offset=int(data["offset"]),
            nbytes=int(data["nbytes"]),
            trainable=bool(data.get("trainable", True)),
            dtype=data.get("dtype", PAYLOAD_DTYPE),
        )


@dataclass
class CheckpointManifest:
    """
    Self-describing header of a checkpoint file.

    `tensors` covers the parameters followed by the optimizer moments (names prefixed with
    "adam.exp_avg/" and "adam.exp_avg_sq/"); `adam_steps` holds the per-parameter step counts.
    """

    tensors: List[TensorRecord]
    config: Dict[str, Any]
    stage: str
    step: int
    payload_sha256: str
    payload_nbytes: int
    rng_state: Optional[Dict[str, Any]] = None
    adam_steps: Dict[str, int] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if not isinstance(self.config, dict):
            raise TypeError("config must be a dict")
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        names = [t.name for t in self.tensors]
        if len(names) != len(set(names)):
            raise ValueError("tensor names in a manifest must be unique")
        end = 0
        for record in sorted(self.tensors, key=lambda r: r.offset):
            if record.offset != end:
                raise ValueError(f"tensor '{record.name}' starts at {record.offset}, expected {end}")
            end = record.offset + record.nbytes
        if end != self.payload_nbytes:
            raise ValueError(f"tensor records cover {end} bytes, payload has {self.payload_nbytes}")

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "tensors": [t.to_dict() for t in self.tensors],
            "config": self.config,
            "stage": self.stage,
            "step": self.step,
            "payload_sha256": self.payload_sha256,
            "payload_nbytes": self.payload_nbytes,
            "rng_state": self.rng_state,
            "adam_steps": self.adam_steps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CheckpointManifest":
        for key in ("tensors", "config", "stage", "step", "payload_sha256", "payload_nbytes"):
            if key not in data:
                raise ValueError(f"Required field '{key}' missing from checkpoint manifest")
        return cls(
            tensors=[TensorRecord.from_dict(t) for t in data["tensors"]],
            config=data["config"],
            stage=data["stage"],
            step=int(data["step"]),
            payload_sha256=data["payload_sha256"],
            payload_nbytes=int(data["payload_nbytes"]),
            rng_state=data.get("rng_state"),
            adam_steps={k: int(v) for k, v in data.get("adam_steps", {}).items()},
            format_version=int(data.get("format_version", FORMAT_VERSION)),
        )

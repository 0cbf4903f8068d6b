import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

from scripts.errors import CheckpointError
from scripts.nn import ParamStore
from utils import load_config, setup_logger
from .hashing import payload_digest, verify_digest
from .schema import FORMAT_VERSION, MAGIC, CheckpointManifest, TensorRecord

EXP_AVG = "adam.exp_avg/"
EXP_AVG_SQ = "adam.exp_avg_sq/"
PREAMBLE = struct.Struct("<8sIQ")  # magic, format version, header length


@dataclass
class TrainingState:
    """Everything needed to continue a run: parameters, optimizer moments, RNG, position."""

    store: ParamStore
    config: Dict[str, Any]
    stage: str
    step: int = 0
    optimizer_moments: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None


class CheckpointManager:
    """
    Reads and writes single-file checkpoints.

    Layout: b"SLOTCKPT", u32 LE format version, u64 LE header length, UTF-8 JSON manifest
    (sorted keys), then the payload of little-endian float32 tensors. The manifest records
    a SHA-256 digest of the payload, checked on load.
    """

    def __init__(self):
        self.config = load_config()
        self.logger = setup_logger(__name__, self.config)

    # ─── ENCODING ────────────────────────────────────────────────────────────
    @staticmethod
    def _tensor_bytes(tensor: torch.Tensor) -> bytes:
        return tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()

    def encode(self, state: TrainingState) -> bytes:
        chunks: List[bytes] = []
        records: List[TensorRecord] = []
        offset = 0

        def add(name: str, tensor: torch.Tensor, trainable: bool) -> None:
            nonlocal offset
            data = self._tensor_bytes(tensor)
            records.append(TensorRecord(name, tuple(tensor.shape), offset, len(data), trainable))
            chunks.append(data)
            offset += len(data)

        for name, tensor in state.store.items():
            add(name, tensor, state.store.is_trainable(name))
        adam_steps = {}
        for name in sorted(state.optimizer_moments):
            entry = state.optimizer_moments[name]
            add(EXP_AVG + name, entry["exp_avg"], False)
            add(EXP_AVG_SQ + name, entry["exp_avg_sq"], False)
            adam_steps[name] = int(entry["step"])

        payload = b"".join(chunks)
        manifest = CheckpointManifest(
            tensors=records,
            config=state.config,
            stage=state.stage,
            step=state.step,
            payload_sha256=payload_digest(payload),
            payload_nbytes=len(payload),
            rng_state=state.rng_state,
            adam_steps=adam_steps,
        )
        header = json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)) + header + payload

    def decode(self, blob: bytes, source: str = "<bytes>") -> TrainingState:
        if len(blob) < PREAMBLE.size:
            raise CheckpointError(f"{source}: file too short for a checkpoint header")
        magic, version, header_len = PREAMBLE.unpack_from(blob, 0)
        if magic != MAGIC:
            raise CheckpointError(f"{source}: bad magic {magic!r}, not a checkpoint")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: format version {version} is not supported (expected {FORMAT_VERSION})")
        header_end = PREAMBLE.size + header_len
        if len(blob) < header_end:
            raise CheckpointError(f"{source}: truncated header")
        try:
            manifest = CheckpointManifest.from_dict(json.loads(blob[PREAMBLE.size:header_end].decode("utf-8")))
        except (ValueError, TypeError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{source}: malformed manifest ({e})") from e

        payload = blob[header_end:]
        if len(payload) != manifest.payload_nbytes:
            raise CheckpointError(
                f"{source}: truncated payload ({len(payload)} bytes, manifest says {manifest.payload_nbytes})"
            )
        if not verify_digest(payload, manifest.payload_sha256):
            raise CheckpointError(f"{source}: payload checksum mismatch")

        store = ParamStore()
        moments: Dict[str, Dict[str, Any]] = {}
        for record in manifest.tensors:
            values = np.frombuffer(payload, dtype="<f4", count=record.numel, offset=record.offset)
            tensor = torch.from_numpy(values.astype(np.float32)).reshape(record.shape)
            if record.name.startswith(EXP_AVG_SQ):
                moments.setdefault(record.name[len(EXP_AVG_SQ):], {})["exp_avg_sq"] = tensor
            elif record.name.startswith(EXP_AVG):
                moments.setdefault(record.name[len(EXP_AVG):], {})["exp_avg"] = tensor
            else:
                store.add(record.name, tensor, trainable=record.trainable)
        for name, entry in moments.items():
            if name not in manifest.adam_steps or len(entry) != 2:
                raise CheckpointError(f"{source}: incomplete optimizer state for '{name}'")
            entry["step"] = manifest.adam_steps[name]

        return TrainingState(
            store=store,
            config=manifest.config,
            stage=manifest.stage,
            step=manifest.step,
            optimizer_moments=moments,
            rng_state=manifest.rng_state,
        )

    # ─── FILES ───────────────────────────────────────────────────────────────
    def save(self, state: TrainingState, path: Path) -> Path:
        """Write the checkpoint through a temporary file so a crash never leaves a partial file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = self.encode(state)
        tmp_path = path.with_name(path.name + ".tmp")
        tmp_path.write_bytes(blob)
        tmp_path.replace(path)
        self.logger.info("Saved %s checkpoint at step %s to '%s' (%s bytes)", state.stage, state.step, path, len(blob))
        return path

    def load(self, path: Path) -> TrainingState:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            self.logger.error("Cannot read checkpoint '%s': %s", path, e)
            raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
        state = self.decode(blob, source=str(path))
        self.logger.info("Loaded %s checkpoint at step %s from '%s'", state.stage, state.step, path)
        return state


def save_checkpoint(state: TrainingState, path: Path) -> Path:
    return CheckpointManager().save(state, path)


def load_checkpoint(path: Path) -> TrainingState:
    return CheckpointManager().load(path)

"""
Checkpoint persistence.

A checkpoint is one binary file with a JSON manifest and a float32 payload holding the
parameters, the optimizer moments, the RNG state and the run configuration.
"""

from .schema import CheckpointManifest, TensorRecord, FORMAT_VERSION, MAGIC
from .hashing import payload_digest, verify_digest
from .store import CheckpointManager, TrainingState, save_checkpoint, load_checkpoint

__all__ = [
    "CheckpointManifest",
    "TensorRecord",
    "FORMAT_VERSION",
    "MAGIC",
    "payload_digest",
    "verify_digest",
    "CheckpointManager",
    "TrainingState",
    "save_checkpoint",
    "load_checkpoint",
]

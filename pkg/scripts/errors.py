"""
Exception hierarchy shared by every slotforge module.

All errors derive from SlotforgeError so the CLI can report them uniformly; each also
derives from the builtin that best describes it, so callers may catch ValueError etc.
"""


class SlotforgeError(Exception):
    """Base class for all slotforge errors."""


class ContractError(SlotforgeError, ValueError):
    """An operation was called with inputs that violate its preconditions."""


class NonFiniteError(SlotforgeError, ArithmeticError):
    """A NaN or Inf appeared in a kernel output, a loss, or a gradient."""


class ConfigError(SlotforgeError, ValueError):
    """A run configuration key is unknown, mistyped, or out of range."""

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"config key '{key}': {constraint}")


class IngestionError(SlotforgeError, ValueError):
    """A frame or mask file could not be ingested."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class CheckpointError(SlotforgeError, ValueError):
    """A checkpoint file is malformed, corrupted, or incompatible."""

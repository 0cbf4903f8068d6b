import hashlib


def payload_digest(payload: bytes) -> str:
    """
    SHA-256 hex digest of a checkpoint payload.

    Args:
        payload (bytes): Raw payload bytes.

    Returns:
        str: 64-character lowercase hex digest.
    """
    if not isinstance(payload, (bytes, bytearray, memoryview)):
        raise TypeError(f"payload must be bytes, got {type(payload).__name__}")
    return hashlib.sha256(bytes(payload)).hexdigest()


def verify_digest(payload: bytes, expected: str) -> bool:
    """Whether the payload hashes to `expected`."""
    if not isinstance(expected, str) or len(expected) != 64:
        raise ValueError("expected digest must be a 64-character hex string")
    return payload_digest(payload) == expected.lower()

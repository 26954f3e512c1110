import re
from typing import Iterable

import numpy as np

from errors import StructuralError, SpecValidationError

HEX_PATTERN = re.compile(r'^[0-9a-f]*$')


def is_power_of_two(n: int) -> bool:
    """Check that n = 2^m for some integer m >= 0"""
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def validate_block_length(n: int) -> int:
    """Validate a block length and return its exponent"""
    if not is_power_of_two(n):
        raise StructuralError(f"block length must be a power of 2, got {n}")
    return int(n).bit_length() - 1


def validate_probability(value: float, name: str = "probability") -> float:
    """Validate that a value lies in [0, 1]"""
    if not 0.0 <= value <= 1.0:
        raise SpecValidationError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def as_bits(values: Iterable[int]) -> np.ndarray:
    """Convert a sequence of 0/1 values into a uint8 array"""
    bits = np.asarray(list(values) if not isinstance(values, np.ndarray) else values)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise StructuralError("bit sequences may only contain 0 and 1")
    return bits.astype(np.uint8).reshape(-1)


def bits_to_hex(bits: np.ndarray) -> str:
    """Serialize bits to lowercase hex, lowest index in the most significant bit"""
    if len(bits) == 0:
        return ""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def hex_to_bits(text: str, length: int) -> np.ndarray:
    """Parse the hex format produced by bits_to_hex"""
    text = text.strip().lower()
    if not HEX_PATTERN.match(text):
        raise StructuralError(f"invalid hex payload: {text!r}")
    if len(text) != 2 * ((length + 7) // 8):
        raise StructuralError(f"hex payload of {len(text)} digits cannot hold {length} bits")
    if length == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw)[:length].copy()

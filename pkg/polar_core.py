"""GF(2) bit blocks, index sets and the source polarization transform.

Public index conventions are 1-based: an ``IndexSet`` over a block of length
N holds integers in [1, N]. Bits are stored packed (``np.packbits``), most
significant bit of each byte = lowest index, which is also the hex wire
format produced by ``BitBlock.to_hex``.
"""

from typing import Iterable, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from errors import StructuralError
from utils import as_bits, bits_to_hex, hex_to_bits, is_power_of_two, validate_block_length

BitLike = Union["BitBlock", np.ndarray, Sequence[int]]


class BitBlock:
    """Immutable binary vector of length 2^n, stored packed"""

    __slots__ = ("_packed", "_length")

    def __init__(self, bits: BitLike):
        if isinstance(bits, BitBlock):
            self._packed = bits._packed
            self._length = bits._length
            return
        arr = as_bits(bits)
        validate_block_length(len(arr))
        self._length = len(arr)
        self._packed = np.packbits(arr)
        self._packed.setflags(write=False)

    @classmethod
    def zeros(cls, length: int) -> "BitBlock":
        return cls(np.zeros(length, dtype=np.uint8))

    @classmethod
    def from_hex(cls, text: str, length: int) -> "BitBlock":
        return cls(hex_to_bits(text, length))

    @property
    def bits(self) -> np.ndarray:
        """Unpacked copy of the bits, index 0 holding position 1"""
        return np.unpackbits(self._packed)[: self._length].copy()

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def to_hex(self) -> str:
        return bits_to_hex(self.bits)

    def __len__(self) -> int:
        return self._length

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitBlock):
            return NotImplemented
        return self._length == other._length and np.array_equal(self._packed, other._packed)

    def __hash__(self) -> int:
        return hash((self._length, self._packed.tobytes()))

    def __xor__(self, other: "BitBlock") -> "BitBlock":
        if len(other) != self._length:
            raise StructuralError(f"cannot xor blocks of length {self._length} and {len(other)}")
        out = BitBlock.__new__(BitBlock)
        out._length = self._length
        out._packed = np.bitwise_xor(self._packed, other._packed)
        out._packed.setflags(write=False)
        return out

    def __repr__(self) -> str:
        return f"BitBlock({''.join(str(b) for b in self.bits)})"


class IndexSet(BaseModel):
    """Sorted set of 1-based positions inside a block of length n_total"""

    model_config = ConfigDict(frozen=True)

    indices: tuple[int, ...] = ()
    n_total: int

    @model_validator(mode="after")
    def _check(self) -> "IndexSet":
        if not is_power_of_two(self.n_total):
            raise ValueError(f"n_total must be a power of 2, got {self.n_total}")
        previous = 0
        for idx in self.indices:
            if idx <= previous:
                raise ValueError("indices must be unique and sorted ascending")
            if idx > self.n_total:
                raise ValueError(f"index {idx} outside [1, {self.n_total}]")
            previous = idx
        return self

    @classmethod
    def of(cls, indices: Iterable[int], n_total: int) -> "IndexSet":
        """Build a set from any iterable of 1-based positions"""
        return cls(indices=tuple(sorted({int(i) for i in indices})), n_total=n_total)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "IndexSet":
        return cls(indices=tuple(int(i) + 1 for i in np.flatnonzero(mask)), n_total=len(mask))

    @classmethod
    def full(cls, n_total: int) -> "IndexSet":
        return cls(indices=tuple(range(1, n_total + 1)), n_total=n_total)

    @classmethod
    def empty(cls, n_total: int) -> "IndexSet":
        return cls(indices=(), n_total=n_total)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64) - 1

    def mask(self) -> np.ndarray:
        out = np.zeros(self.n_total, dtype=bool)
        out[self.zero_based] = True
        return out

    def complement(self) -> "IndexSet":
        return IndexSet.from_mask(~self.mask())

    def issubset(self, other: "IndexSet") -> bool:
        return set(self.indices) <= set(other.indices)

    def _same_frame(self, other: "IndexSet") -> None:
        if other.n_total != self.n_total:
            raise StructuralError(f"index sets over N={self.n_total} and N={other.n_total} do not combine")

    def __or__(self, other: "IndexSet") -> "IndexSet":
        self._same_frame(other)
        return IndexSet.of(set(self.indices) | set(other.indices), self.n_total)

    def __and__(self, other: "IndexSet") -> "IndexSet":
        self._same_frame(other)
        return IndexSet.of(set(self.indices) & set(other.indices), self.n_total)

    def __sub__(self, other: "IndexSet") -> "IndexSet":
        self._same_frame(other)
        return IndexSet.of(set(self.indices) - set(other.indices), self.n_total)

    def __contains__(self, idx: int) -> bool:
        return idx in self.indices

    def __len__(self) -> int:
        return len(self.indices)


def polar_transform_array(bits: np.ndarray) -> np.ndarray:
    """u = x G_N along the last axis, natural order, batched over leading axes"""
    arr = np.array(bits, dtype=np.uint8, copy=True)
    length = arr.shape[-1]
    validate_block_length(length)
    lead = arr.shape[:-1]
    half = length // 2
    while half >= 1:
        view = arr.reshape(*lead, -1, 2, half)
        view[..., 0, :] ^= view[..., 1, :]
        half //= 2
    return arr


def polar_transform(x: BitBlock) -> BitBlock:
    """Source polarization transform; G_N is its own inverse over GF(2)"""
    if not isinstance(x, BitBlock):
        x = BitBlock(x)
    return BitBlock(polar_transform_array(x.bits))


def _check_frame(u_len: int, s: IndexSet) -> None:
    if s.n_total != u_len:
        raise StructuralError(f"index set over N={s.n_total} applied to a block of length {u_len}")


def extract(u: BitLike, s: IndexSet) -> np.ndarray:
    """Bits of u at the positions of s, in ascending index order"""
    bits = u.bits if isinstance(u, BitBlock) else as_bits(u)
    _check_frame(len(bits), s)
    return bits[s.zero_based]


def scatter(u: BitLike, s: IndexSet, vals: Sequence[int]) -> BitBlock:
    """Copy of u with the positions of s overwritten by vals"""
    bits = u.bits if isinstance(u, BitBlock) else as_bits(u)
    _check_frame(len(bits), s)
    vals = as_bits(vals)
    if len(vals) != len(s):
        raise StructuralError(f"{len(vals)} values for an index set of size {len(s)}")
    bits[s.zero_based] = vals
    return BitBlock(bits)


def xor_pad(a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    """Elementwise XOR of two equal-length bit sequences"""
    a = as_bits(a)
    b = as_bits(b)
    if len(a) != len(b):
        raise StructuralError(f"cannot pad {len(a)} bits with {len(b)} bits")
    return np.bitwise_xor(a, b)

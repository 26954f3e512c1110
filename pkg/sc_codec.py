"""Successive-cancellation decoding and stochastic encoding.

The recursion works on log-likelihood ratios L = log P(0|.) / P(1|.) in
natural index order and is batched over any leading axes, so the same code
drives single-block decoding, genie-aided construction over many samples and
exhaustive enumeration over all realizations.
"""

from typing import TYPE_CHECKING, Callable, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import expit

from errors import CapacityError, StructuralError
from polar_core import BitBlock, IndexSet, polar_transform_array
from sources import PMF_TOLERANCE, marginal
from utils import as_bits, validate_block_length

if TYPE_CHECKING:
    from polarization import IndexSetBundle

MAX_SIDE_SYMBOLS = 16
MAX_LAW_BITS = 20

Decision = Callable[[int, np.ndarray], np.ndarray]
SideInput = Union[None, BitBlock, Sequence[BitBlock], np.ndarray]


class SymbolModel(BaseModel):
    """Per-symbol joint pmf p(bit, side), shape 2 x S with S <= 16"""

    model_config = ConfigDict(frozen=True)

    pmf: list[list[float]]

    @model_validator(mode="after")
    def _check(self) -> "SymbolModel":
        arr = np.asarray(self.pmf, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ValueError("symbol pmf must have shape (2, S)")
        if arr.shape[1] > MAX_SIDE_SYMBOLS:
            raise ValueError(f"side alphabet of {arr.shape[1]} symbols exceeds {MAX_SIDE_SYMBOLS}")
        if (arr < 0).any() or abs(arr.sum() - 1.0) > PMF_TOLERANCE:
            raise ValueError("symbol pmf must be non-negative and sum to 1")
        return self

    @classmethod
    def from_joint(cls, joint: np.ndarray, target_axis: int, side_axes: Sequence[int] = ()) -> "SymbolModel":
        """Collapse a dense joint pmf to (target bit, flattened side symbol)"""
        table = marginal(joint, [target_axis, *side_axes]).reshape(2, -1)
        return cls(pmf=table.tolist())

    @property
    def side_symbols(self) -> int:
        return len(self.pmf[0])

    def table(self) -> np.ndarray:
        return np.asarray(self.pmf, dtype=float)

    def llr_table(self) -> np.ndarray:
        """LLR per side symbol; unreachable symbols get 0"""
        table = self.table()
        with np.errstate(divide="ignore", invalid="ignore"):
            llr = np.log(table[0]) - np.log(table[1])
        return np.where(np.isnan(llr), 0.0, llr)

    def leaf_llr(self, side_symbols: np.ndarray) -> np.ndarray:
        return self.llr_table()[np.asarray(side_symbols, dtype=np.int64)]

    def prior(self) -> "SymbolModel":
        """The same target bit with the side information marginalized out"""
        return SymbolModel(pmf=self.table().sum(axis=1, keepdims=True).tolist())

    def prior_llr(self) -> float:
        return float(self.prior().llr_table()[0])


class FrozenMap(BaseModel):
    """Known (index, bit) pairs of a block of length n_total, 1-based"""

    model_config = ConfigDict(frozen=True)

    n_total: int
    indices: tuple[int, ...] = ()
    bits: tuple[int, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "FrozenMap":
        IndexSet(indices=self.indices, n_total=self.n_total)
        if len(self.bits) != len(self.indices):
            raise ValueError("frozen map needs one bit per index")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("frozen bits must be 0 or 1")
        return self

    @classmethod
    def from_values(cls, positions: IndexSet, values: Sequence[int]) -> "FrozenMap":
        values = as_bits(values)
        if len(values) != len(positions):
            raise StructuralError(f"{len(values)} frozen values for {len(positions)} positions")
        return cls(n_total=positions.n_total, indices=positions.indices, bits=tuple(int(b) for b in values))

    @classmethod
    def from_block(cls, u: BitBlock, positions: IndexSet) -> "FrozenMap":
        return cls.from_values(positions, u.bits[positions.zero_based])

    def index_set(self) -> IndexSet:
        return IndexSet(indices=self.indices, n_total=self.n_total)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """(mask, values) arrays of length N"""
        mask = np.zeros(self.n_total, dtype=bool)
        values = np.zeros(self.n_total, dtype=np.uint8)
        idx = np.asarray(self.indices, dtype=np.int64) - 1
        mask[idx] = True
        values[idx] = np.asarray(self.bits, dtype=np.uint8)
        return mask, values


def side_symbols(side: SideInput, n_len: int) -> np.ndarray:
    """Flatten one or more side blocks into symbol indices, first block most significant"""
    if side is None:
        return np.zeros(n_len, dtype=np.int64)
    if isinstance(side, BitBlock):
        side = [side]
    if isinstance(side, np.ndarray):
        rows = np.atleast_2d(side).astype(np.int64)
    else:
        rows = np.stack([block.bits for block in side]).astype(np.int64)
    if rows.shape[-1] != n_len:
        raise StructuralError(f"side block of length {rows.shape[-1]} for N={n_len}")
    weights = 1 << np.arange(rows.shape[0] - 1, -1, -1)
    return (rows * weights[:, None]).sum(axis=0)


def _check_node(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact boxplus 2 atanh(tanh(a/2) tanh(b/2)), stable for large and infinite inputs"""
    with np.errstate(invalid="ignore", over="ignore"):
        hard = np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
        correction = np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b)))
        finite = np.isfinite(a) & np.isfinite(b)
        return np.where(finite, hard + correction, hard)


def _variable_node(a: np.ndarray, b: np.ndarray, partial: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        out = b + np.where(partial == 1, -a, a)
    # inf - inf means the two halves contradict; treat as no information
    return np.where(np.isnan(out), 0.0, out)


def _walk(llr: np.ndarray, offset: int, decide: Decision) -> tuple[np.ndarray, np.ndarray]:
    length = llr.shape[-1]
    if length == 1:
        bit = np.asarray(decide(offset, llr[..., 0]), dtype=np.uint8)
        bit = np.broadcast_to(bit, llr.shape[:-1])[..., None]
        return bit, bit
    half = length // 2
    first, second = llr[..., :half], llr[..., half:]
    u_a, c_a = _walk(_check_node(first, second), offset, decide)
    u_b, c_b = _walk(_variable_node(first, second, c_a), offset + half, decide)
    return np.concatenate([u_a, u_b], axis=-1), np.concatenate([c_a ^ c_b, c_b], axis=-1)


def sc_walk(llr: np.ndarray, decide: Decision) -> np.ndarray:
    """Run the SC recursion over channel LLRs of shape (..., N).

    Args:
        llr: Leaf LLRs, last axis is the block.
        decide: Called once per index j (0-based) in natural order with the
            synthesized LLR of shape (...); returns the bits to commit.

    Returns:
        The committed u bits, shape (..., N).
    """
    validate_block_length(llr.shape[-1])
    u, _ = _walk(np.asarray(llr, dtype=float), 0, decide)
    return u


def sc_decode_batch(
    symbols: np.ndarray,
    frozen_mask: np.ndarray,
    frozen_values: np.ndarray,
    model: SymbolModel,
) -> np.ndarray:
    """Decode a batch of blocks; symbols (..., N), frozen_values broadcastable to it"""
    llr = model.leaf_llr(symbols)
    frozen_values = np.broadcast_to(np.asarray(frozen_values, dtype=np.uint8), llr.shape)

    def decide(j: int, leaf: np.ndarray) -> np.ndarray:
        if frozen_mask[j]:
            return frozen_values[..., j]
        return (leaf < 0).astype(np.uint8)

    return sc_walk(llr, decide)


def sc_decode(side_block: SideInput, frozen: FrozenMap, model: SymbolModel) -> BitBlock:
    """Successive-cancellation estimate of u = x G_N given side information.

    Frozen positions copy the map; every other position takes the sign of
    its synthesized LLR, a zero LLR decoding to 0.
    """
    n_len = frozen.n_total
    mask, values = frozen.dense()
    u = sc_decode_batch(side_symbols(side_block, n_len), mask, values, model)
    return BitBlock(u)


def posterior_trace_batch(u: np.ndarray, symbols: np.ndarray, model: SymbolModel) -> np.ndarray:
    """Genie-aided P(U_j = 1 | u^{<j}, side) for every index, shape (..., N)"""
    u = np.asarray(u, dtype=np.uint8)
    llr = np.broadcast_to(model.leaf_llr(symbols), u.shape)
    p_one = np.empty(u.shape, dtype=float)

    def decide(j: int, leaf: np.ndarray) -> np.ndarray:
        p_one[..., j] = expit(-leaf)
        return u[..., j]

    sc_walk(llr, decide)
    return p_one


def posterior_trace(target_block: BitBlock, side_block: SideInput, model: SymbolModel) -> np.ndarray:
    """Posterior of each true bit of u = x G_N with all earlier bits revealed"""
    u = polar_transform_array(target_block.bits)
    p_one = posterior_trace_batch(u, side_symbols(side_block, len(target_block)), model)
    return np.where(u == 1, p_one, 1.0 - p_one)


def _encoder_masks(h_u: IndexSet, v_ux: IndexSet) -> tuple[np.ndarray, np.ndarray]:
    if h_u.n_total != v_ux.n_total:
        raise StructuralError("H_U and V_U|X must share the block length")
    v_mask = v_ux.mask()
    return v_mask, h_u.mask() & ~v_mask


def _context_llr(x_bits: np.ndarray, model: SymbolModel) -> np.ndarray:
    """Stack the conditional-on-x and prior-only LLRs on a new leading axis"""
    cond = model.leaf_llr(x_bits)
    prior = np.full(cond.shape, model.prior_llr())
    return np.stack([cond, prior])


def sc_stochastic_encode_batch(
    x_bits: np.ndarray,
    r_bits: np.ndarray,
    h_u: IndexSet,
    v_ux: IndexSet,
    model: SymbolModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw V for a batch of x blocks of shape (B, N).

    Positions of V_U|X copy r_bits (B, |V_U|X|). Positions of H_U outside it
    are drawn from the SC posterior given x, the rest from the prior-only SC
    posterior. One uniform draw per drawn position and block.
    """
    x_bits = np.atleast_2d(np.asarray(x_bits, dtype=np.uint8))
    r_bits = np.atleast_2d(np.asarray(r_bits, dtype=np.uint8))
    batch, n_len = x_bits.shape
    v_mask, cond_mask = _encoder_masks(h_u, v_ux)
    if r_bits.shape != (batch, len(v_ux)):
        raise StructuralError(f"expected r bits of shape {(batch, len(v_ux))}, got {r_bits.shape}")
    r_column = np.cumsum(v_mask) - 1

    def decide(j: int, leaf: np.ndarray) -> np.ndarray:
        if v_mask[j]:
            return r_bits[:, r_column[j]]
        p_one = expit(-leaf[0] if cond_mask[j] else -leaf[1])
        return (rng.random(batch) < p_one).astype(np.uint8)

    return sc_walk(_context_llr(x_bits, model), decide)[0]


def sc_stochastic_encode(
    x_block: BitBlock,
    r_bits: Sequence[int],
    sets: "IndexSetBundle",
    model: SymbolModel,
    rng: np.random.Generator,
) -> BitBlock:
    """Stochastic SC encoding of one block with the bundle's H_U and V_U|X"""
    h_u, v_ux = sets.sets["H_U"], sets.sets["V_U|X"]
    out = sc_stochastic_encode_batch(x_block.bits[None, :], as_bits(r_bits)[None, :], h_u, v_ux, model, rng)
    return BitBlock(out[0])


def all_blocks(n_len: int) -> np.ndarray:
    """Every binary block of length n_len, row r = binary expansion of r, MSB first"""
    shifts = np.arange(n_len - 1, -1, -1)
    return ((np.arange(2**n_len)[:, None] >> shifts) & 1).astype(np.uint8)


def encoder_law(
    model: SymbolModel,
    h_u: IndexSet,
    v_ux: IndexSet,
    r_uniform: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact p(v|x) and the encoder-induced law p~(v|x), both (2^N x, 2^N v).

    Rows index the source block x and columns the polarized block v, both
    as the binary expansion of the row/column number. With r_uniform the
    V_U|X positions contribute a factor 1/2 each; otherwise they are left at
    1 so the caller can condition on a fixed r.
    """
    n_len = h_u.n_total
    if 2 * n_len > MAX_LAW_BITS:
        raise CapacityError(f"exact encoder law over 4^{n_len} pairs exceeds the enumeration budget")
    v_mask, cond_mask = _encoder_masks(h_u, v_ux)
    blocks = all_blocks(n_len)
    size = len(blocks)
    x = np.repeat(blocks, size, axis=0)
    v = np.tile(blocks, (size, 1))
    p_one = np.empty((2,) + v.shape, dtype=float)

    def decide(j: int, leaf: np.ndarray) -> np.ndarray:
        p_one[..., j] = expit(-leaf)
        return v[:, j]

    sc_walk(_context_llr(x, model), decide)
    factors = np.where(v[None] == 1, p_one, 1.0 - p_one)
    true_law = factors[0].prod(axis=1)
    fixed = 0.5 if r_uniform else 1.0
    encoder_factors = np.where(v_mask, fixed, np.where(cond_mask, factors[0], factors[1]))
    encoder = encoder_factors.prod(axis=1)
    return true_law.reshape(size, size), encoder.reshape(size, size)

"""Memoryless multi-terminal binary sources.

Every variant produces one joint pmf over a single symbol of all terminals
(axes ``X1..Xm`` in terminal order) followed by the eavesdropper bit ``Z``
when present. A quantization test channel p(u|x) can be attached on top of
terminal 1, which appends an auxiliary axis ``U``.
"""

import json
import logging
from collections import deque
from pathlib import Path
from typing import Annotated, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from errors import SpecValidationError, StructuralError
from polar_core import BitBlock
from utils import validate_block_length

logger = logging.getLogger(__name__)

PMF_TOLERANCE = 1e-12
MAX_TABLE_BITS = 8

Probability = Annotated[float, Field(ge=0.0, le=1.0)]


def bsc_matrix(p: float) -> np.ndarray:
    """Transition matrix of a binary symmetric channel, rows = input"""
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


class DbmsChain(BaseModel):
    """X ~ B(p_x), Y = X xor B(p), Z = Y xor B(q)"""
    variant: Literal["dbms_chain"] = "dbms_chain"
    p_x: Probability = 0.5
    p: Probability
    q: Probability = 0.5
    z_present: bool = True

    @property
    def terminals(self) -> int:
        return 2

    @property
    def eve(self) -> bool:
        return self.z_present

    def pmf(self) -> np.ndarray:
        joint = np.array([1.0 - self.p_x, self.p_x])[:, None] * bsc_matrix(self.p)
        if self.z_present:
            joint = joint[:, :, None] * bsc_matrix(self.q)[None, :, :]
        return joint


class BroadcastStar(BaseModel):
    """X1 ~ B(p_x1) and X_i = X1 xor B(p_{i-1}) for every other terminal"""
    variant: Literal["broadcast_star"] = "broadcast_star"
    p_x1: Probability = 0.5
    crossovers: list[Probability] = Field(min_length=1)

    @property
    def terminals(self) -> int:
        return len(self.crossovers) + 1

    @property
    def eve(self) -> bool:
        return False

    def pmf(self) -> np.ndarray:
        joint = np.array([1.0 - self.p_x1, self.p_x1])
        for p in self.crossovers:
            shape = (2,) + (1,) * (joint.ndim - 1) + (2,)
            joint = joint[..., None] * bsc_matrix(p).reshape(shape)
        return joint


class TreeEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    i: int = Field(ge=1)
    j: int = Field(ge=1)
    p: Probability


class MarkovTree(BaseModel):
    """Uniform bits on the vertices of a tree, BSC(p_ij) along every edge"""
    variant: Literal["markov_tree"] = "markov_tree"
    m: int = Field(ge=2)
    edges: list[TreeEdge]

    @property
    def terminals(self) -> int:
        return self.m

    @property
    def eve(self) -> bool:
        return False

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {v: [] for v in range(1, self.m + 1)}
        for edge in self.edges:
            adj[edge.i].append((edge.j, edge.p))
            adj[edge.j].append((edge.i, edge.p))
        for v in adj:
            adj[v].sort()
        return adj

    def validate_tree(self) -> None:
        if len(self.edges) != self.m - 1:
            raise SpecValidationError(f"a tree on {self.m} vertices needs {self.m - 1} edges, got {len(self.edges)}")
        for edge in self.edges:
            if edge.i > self.m or edge.j > self.m or edge.i == edge.j:
                raise SpecValidationError(f"invalid edge ({edge.i}, {edge.j}) for m={self.m}")
        seen = {1}
        queue = deque([1])
        adj = self.adjacency()
        while queue:
            v = queue.popleft()
            for w, _ in adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        if len(seen) != self.m:
            raise SpecValidationError("tree edges do not connect every vertex")

    def edge_p(self, i: int, j: int) -> float:
        for edge in self.edges:
            if {edge.i, edge.j} == {i, j}:
                return edge.p
        raise SpecValidationError(f"({i}, {j}) is not an edge")

    def pmf(self) -> np.ndarray:
        self.validate_tree()
        grid = np.indices((2,) * self.m)
        joint = np.full((2,) * self.m, 0.5)
        for edge in self.edges:
            same = grid[edge.i - 1] == grid[edge.j - 1]
            joint = joint * np.where(same, 1.0 - edge.p, edge.p)
        return joint


class GenericTable(BaseModel):
    """Explicit pmf over (X1..Xm[, Z]); index bits are read with X1 most significant"""
    variant: Literal["generic_table"] = "generic_table"
    m: int = Field(ge=1)
    z_present: bool = False
    pmf_values: list[Probability]

    @property
    def terminals(self) -> int:
        return self.m

    @property
    def eve(self) -> bool:
        return self.z_present

    def pmf(self) -> np.ndarray:
        width = self.m + int(self.z_present)
        if width > MAX_TABLE_BITS:
            raise SpecValidationError(f"generic tables are capped at {MAX_TABLE_BITS} bits, got {width}")
        if len(self.pmf_values) != 2 ** width:
            raise SpecValidationError(f"expected {2 ** width} pmf entries, got {len(self.pmf_values)}")
        return np.asarray(self.pmf_values, dtype=float).reshape((2,) * width)


JointSourceSpec = Annotated[
    Union[DbmsChain, BroadcastStar, MarkovTree, GenericTable],
    Field(discriminator="variant"),
]
source_adapter: TypeAdapter = TypeAdapter(JointSourceSpec)


class TestChannel(BaseModel):
    """Quantization test channel p(u|x) applied to terminal 1"""
    __test__ = False

    matrix: list[list[Probability]] = Field(min_length=2, max_length=2)

    @classmethod
    def bsc(cls, beta: float) -> "TestChannel":
        return cls(matrix=bsc_matrix(beta).tolist())

    @classmethod
    def identity(cls) -> "TestChannel":
        return cls(matrix=[[1.0, 0.0], [0.0, 1.0]])

    def as_array(self) -> np.ndarray:
        arr = np.asarray(self.matrix, dtype=float)
        if arr.shape != (2, 2) or not np.allclose(arr.sum(axis=1), 1.0, atol=PMF_TOLERANCE):
            raise SpecValidationError("test channel rows must be distributions over {0, 1}")
        return arr


class SampleBlock(BaseModel):
    """One block realization: a BitBlock per terminal plus the eavesdropper's"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    terminals: tuple[BitBlock, ...]
    eve: Optional[BitBlock] = None

    @property
    def length(self) -> int:
        return len(self.terminals[0])

    def terminal(self, index: int) -> BitBlock:
        """1-based terminal access"""
        return self.terminals[index - 1]


class DegradeFlags(BaseModel):
    markov_chain_xyz: bool


def load_source_spec(path: Path):
    return source_adapter.validate_json(Path(path).read_text(encoding="utf-8"))


def dump_source_spec(spec) -> str:
    return json.dumps(source_adapter.dump_python(spec, mode="json"), sort_keys=True)


def axis_labels(spec, channel: Optional[TestChannel] = None) -> list[str]:
    labels = [f"X{i}" for i in range(1, spec.terminals + 1)]
    if spec.eve:
        labels.append("Z")
    if channel is not None:
        labels.append("U")
    return labels


def joint_pmf(spec) -> np.ndarray:
    """Exact pmf over one symbol tuple, axes ordered X1..Xm then Z"""
    joint = spec.pmf()
    total = float(joint.sum())
    if abs(total - 1.0) > PMF_TOLERANCE:
        raise SpecValidationError(f"pmf sums to {total!r}, not 1")
    return joint


def extended_pmf(spec, channel: Optional[TestChannel] = None) -> np.ndarray:
    """Joint pmf with the auxiliary U ~ p(u|x1) appended as the last axis"""
    joint = joint_pmf(spec)
    if channel is None:
        return joint
    shape = (2,) + (1,) * (joint.ndim - 1) + (2,)
    return joint[..., None] * channel.as_array().reshape(shape)


def marginal(joint: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Marginal pmf over the given axes, returned in the order listed"""
    axes = list(axes)
    others = tuple(a for a in range(joint.ndim) if a not in axes)
    reduced = joint.sum(axis=others) if others else joint
    kept = sorted(axes)
    return np.transpose(reduced, [kept.index(a) for a in axes])


def _symbols_to_bits(symbols: np.ndarray, width: int) -> np.ndarray:
    """Split flat tuple indices into per-axis bits, shape (..., width, N)"""
    shifts = np.arange(width - 1, -1, -1)
    bits = (symbols[..., None, :] >> shifts[:, None]) & 1
    return bits.astype(np.uint8)


def sample_array(joint: np.ndarray, n_len: int, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """Inverse-CDF sampling of count blocks; returns bits of shape (count, axes, N)"""
    flat = joint.ravel()
    cdf = np.cumsum(flat)
    draws = rng.random((count, n_len)) * cdf[-1]
    symbols = np.minimum(np.searchsorted(cdf, draws, side="right"), len(flat) - 1)
    return _symbols_to_bits(symbols, joint.ndim)


def sample_block(spec, n_len: int, rng: np.random.Generator) -> SampleBlock:
    """N i.i.d. symbol tuples drawn from joint_pmf(spec)"""
    validate_block_length(n_len)
    bits = sample_array(joint_pmf(spec), n_len, rng)[0]
    terminals = tuple(BitBlock(bits[i]) for i in range(spec.terminals))
    eve = BitBlock(bits[spec.terminals]) if spec.eve else None
    return SampleBlock(terminals=terminals, eve=eve)


def sample_tree_edges(spec: MarkovTree, n_len: int, rng: np.random.Generator) -> SampleBlock:
    """Generative sampling along the tree: uniform root, one BSC draw per edge"""
    validate_block_length(n_len)
    spec.validate_tree()
    values: dict[int, np.ndarray] = {1: rng.integers(0, 2, n_len, dtype=np.uint8)}
    adj = spec.adjacency()
    queue = deque([1])
    while queue:
        v = queue.popleft()
        for w, p in adj[v]:
            if w not in values:
                flips = (rng.random(n_len) < p).astype(np.uint8)
                values[w] = values[v] ^ flips
                queue.append(w)
    return SampleBlock(terminals=tuple(BitBlock(values[v]) for v in range(1, spec.m + 1)))


def block_from_bits(spec, bits: np.ndarray) -> SampleBlock:
    """Wrap an (axes, N) bit array as a SampleBlock"""
    if bits.shape[0] != spec.terminals + int(spec.eve):
        raise StructuralError(f"expected {spec.terminals + int(spec.eve)} rows, got {bits.shape[0]}")
    terminals = tuple(BitBlock(bits[i]) for i in range(spec.terminals))
    eve = BitBlock(bits[spec.terminals]) if spec.eve else None
    return SampleBlock(terminals=terminals, eve=eve)


def degrade_check(spec) -> DegradeFlags:
    """Whether p(x, y, z) = p(x) p(y|x) p(z|y) for X = X1, Y = X2"""
    if isinstance(spec, DbmsChain) or not spec.eve or spec.terminals < 2:
        return DegradeFlags(markov_chain_xyz=True)
    joint = joint_pmf(spec)
    eve_axis = spec.terminals
    xyz = marginal(joint, [0, 1, eve_axis])
    xy = xyz.sum(axis=2)
    yz = xyz.sum(axis=0)
    y = xy.sum(axis=0)
    # p(x,y,z) p(y) == p(x,y) p(y,z) is the factorization without divisions
    lhs = xyz * y[None, :, None]
    rhs = xy[:, :, None] * yz[None, :, :]
    holds = bool(np.max(np.abs(lhs - rhs)) <= 1e-9)
    if not holds:
        logger.debug("source does not factor as X -> Y -> Z")
    return DegradeFlags(markov_chain_xyz=holds)

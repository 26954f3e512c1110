"""Figures of merit: exact small-N enumeration and trial-based estimates.

Information quantities are in bits. The variational distance is the
unnormalized L1 distance, so Pinsker's inequality reads V <= sqrt(2 ln2 D).
"""

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel
from scipy.stats import binomtest

from errors import CapacityError, InfiniteDivergence, SpecValidationError, StructuralError
from polar_core import IndexSet, polar_transform_array
from polarization import IndexSetBundle, _block_joint, delta_n, sc_error_bound, symbol_model
from protocols import (
    EncoderOutput,
    ProtocolReport,
    bio_zero_encode,
    chained_encode,
    star_encode,
    tree_encode,
    tree_publishers,
    tri_encode,
)
from sc_codec import all_blocks, encoder_law
from sources import TestChannel, axis_labels, joint_pmf, marginal

MAX_ENUMERATION_BITS = 26

ColumnSpec = Union[str, tuple[str, IndexSet]]

__all__ = [
    "BoundsReport",
    "EncoderCloseness",
    "ErrorRate",
    "ExactDistribution",
    "SecrecyReport",
    "delta_n",
    "delta_one",
    "delta_star",
    "delta_three",
    "delta_two",
    "empirical_error_rate",
    "error_rate",
    "encoder_closeness",
    "exact_protocol_distribution",
    "exact_secrecy",
    "kl_divergence",
    "mutual_information",
    "plug_in_secrecy",
    "sc_error_bound",
    "theoretical_bounds",
    "variational_distance",
]


def _entropy_of(probs: np.ndarray) -> float:
    probs = probs[probs > 0]
    return float(-(probs * np.log2(probs)).sum())


def mutual_information(joint: np.ndarray, axes_a: Sequence[int], axes_b: Optional[Sequence[int]] = None) -> float:
    """I(A;B) = sum p log2(p / (p_A p_B)) over a dense pmf; B defaults to the remaining axes"""
    joint = np.asarray(joint, dtype=float)
    axes_a = list(axes_a)
    axes_b = list(axes_b) if axes_b is not None else [a for a in range(joint.ndim) if a not in axes_a]
    if set(axes_a) & set(axes_b):
        raise StructuralError("mutual information needs disjoint axis groups")
    p_a = marginal(joint, axes_a).ravel()
    p_b = marginal(joint, axes_b).ravel()
    p_ab = marginal(joint, axes_a + axes_b).reshape(p_a.size, p_b.size)
    product = np.outer(p_a, p_b)
    mask = p_ab > 0
    return max(float((p_ab[mask] * np.log2(p_ab[mask] / product[mask])).sum()), 0.0)


def _same_shape(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise StructuralError(f"distributions over {p.size} and {q.size} outcomes")
    return p, q


def variational_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Unnormalized L1 distance sum |p - q|"""
    p, q = _same_shape(p, q)
    return float(np.abs(p - q).sum())


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """D(p||q) in bits.

    Raises:
        InfiniteDivergence: if q vanishes where p does not.
    """
    p, q = _same_shape(p, q)
    support = p > 0
    if (q[support] <= 0).any():
        raise InfiniteDivergence("q is zero on the support of p")
    return max(float((p[support] * np.log2(p[support] / q[support])).sum()), 0.0)


class SecrecyReport(BaseModel):
    leakage_bits: float
    uniformity_bits: float
    method: Literal["exact", "plugin"]
    trials: Optional[int] = None
    enumeration_size: Optional[int] = None
    bias_bound: Optional[float] = None


@dataclass
class ExactDistribution:
    """Sparse joint law: named bit columns (R, L) with one probability per row"""

    columns: dict[str, np.ndarray]
    prob: np.ndarray

    @property
    def size(self) -> int:
        return len(self.prob)

    def _bits(self, spec: ColumnSpec) -> np.ndarray:
        if isinstance(spec, tuple):
            name, positions = spec
            return self.columns[name][:, positions.zero_based]
        return self.columns[spec]

    def _codes(self, specs: Sequence[ColumnSpec]) -> np.ndarray:
        """One integer code per row identifying the value of the stacked columns"""
        stacked = np.concatenate([self._bits(s) for s in specs], axis=1) if specs else np.zeros((self.size, 0))
        if stacked.shape[1] == 0:
            return np.zeros(self.size, dtype=np.int64)
        packed = np.ascontiguousarray(np.packbits(stacked.astype(np.uint8), axis=1))
        keys = packed.view(np.dtype((np.void, packed.shape[1]))).ravel()
        _, inverse = np.unique(keys, return_inverse=True)
        return inverse.ravel()

    def pmf(self, specs: Sequence[ColumnSpec]) -> np.ndarray:
        return np.bincount(self._codes(specs), weights=self.prob)

    def entropy(self, specs: Sequence[ColumnSpec]) -> float:
        return _entropy_of(self.pmf(specs))

    def mutual_information(self, a: Sequence[ColumnSpec], b: Sequence[ColumnSpec]) -> float:
        value = self.entropy(a) + self.entropy(b) - self.entropy(list(a) + list(b))
        return value

    def width(self, specs: Sequence[ColumnSpec]) -> int:
        return sum(self._bits(s).shape[1] for s in specs)

    def uniformity(self, specs: Sequence[ColumnSpec]) -> float:
        """|K| - H(K)"""
        return self.width(specs) - self.entropy(specs)


def exact_secrecy(
    dist: ExactDistribution,
    key: Sequence[ColumnSpec] = ("K",),
    view: Sequence[ColumnSpec] = ("M", "Z"),
) -> SecrecyReport:
    view = [v for v in view if isinstance(v, tuple) or v in dist.columns]
    return SecrecyReport(
        leakage_bits=dist.mutual_information(key, view),
        uniformity_bits=dist.uniformity(key),
        method="exact",
        enumeration_size=dist.size,
    )


def _block_name(name: str, block: int) -> str:
    return f"{name}@{block + 1}"


@dataclass
class _Factor:
    data: dict[str, np.ndarray]
    prob: np.ndarray


def _check_rows(rows: int) -> None:
    if rows > 2**MAX_ENUMERATION_BITS:
        raise CapacityError(
            f"exact enumeration needs {rows} realizations, over 2^{MAX_ENUMERATION_BITS}; use the empirical path"
        )


def _product(*factors: _Factor) -> _Factor:
    out = factors[0]
    for nxt in factors[1:]:
        left, right = len(out.prob), len(nxt.prob)
        _check_rows(left * right)
        data = {name: np.repeat(arr, right, axis=0) for name, arr in out.data.items()}
        data.update({name: np.tile(arr, (left,) + (1,) * (arr.ndim - 1)) for name, arr in nxt.data.items()})
        out = _Factor(data, np.outer(out.prob, nxt.prob).ravel())
    return out


def _uniform(name: str, length: int) -> _Factor:
    _check_rows(2**length)
    return _Factor({name: all_blocks(length)}, np.full(2**length, 2.0**-length))


def _iid_block(joint: np.ndarray, axes: Sequence[int], names: Sequence[str], n_len: int) -> _Factor:
    """All N-symbol realizations of the given source axes with nonzero probability"""
    width = len(axes)
    _check_rows(2 ** (width * n_len))
    pmf = marginal(joint, axes).ravel()
    table = pmf
    for _ in range(1, n_len):
        table = np.multiply.outer(table, pmf)
    flat = table.ravel()
    rows = np.flatnonzero(flat > 0)
    powers = pmf.size ** np.arange(n_len - 1, -1, -1)
    symbols = (rows[:, None] // powers) % pmf.size
    shifts = np.arange(width - 1, -1, -1)
    bits = ((symbols[:, None, :] >> shifts[None, :, None]) & 1).astype(np.uint8)
    return _Factor({name: bits[:, i] for i, name in enumerate(names)}, flat[rows])


def _blocks_factor(spec, axes_names: Sequence[str], n_len: int, k: int) -> _Factor:
    labels = axis_labels(spec)
    joint = joint_pmf(spec)
    axes = [labels.index(name) for name in axes_names]
    factors = [
        _iid_block(joint, axes, [_block_name(name, i) for name in axes_names], n_len) for i in range(k)
    ]
    return _product(*factors)


def _stack(data: dict[str, np.ndarray], name: str, k: int) -> np.ndarray:
    return np.stack([data[_block_name(name, i)] for i in range(k)], axis=1)


def _columns(encoded: EncoderOutput, data: dict[str, np.ndarray], k: int, eve: bool) -> dict[str, np.ndarray]:
    columns: dict[str, np.ndarray] = {"K": encoded.key_bits(), "M": encoded.public_bits()}
    rows = columns["K"].shape[0]
    for i in range(k):
        if i < len(encoded.keys):
            columns[f"K{i + 1}"] = encoded.keys[i]
        if i < len(encoded.seeds_next):
            columns[f"S{i + 1}"] = encoded.seeds_next[i]
        parts = [m.bits for m in encoded.messages if m.block == i + 1]
        columns[f"M{i + 1}"] = np.concatenate(parts, axis=1) if parts else np.zeros((rows, 0), dtype=np.uint8)
    if eve:
        for i in range(k):
            columns[f"Z{i + 1}"] = data[_block_name("Z", i)]
        columns["Z"] = np.concatenate([data[_block_name("Z", i)] for i in range(k)], axis=1)
    return columns


def _auxiliary_factor(
    spec,
    sets: IndexSetBundle,
    channel: TestChannel,
    k: int,
    context: Literal["eve", "none", "source"],
) -> _Factor:
    """Exact law of (R_1, V_1..V_k, context_1..context_k) under the stochastic encoder"""
    n_len = sets.n_total
    v_ux = sets["V_U|X"]
    _, law = encoder_law(symbol_model(spec, "U", "X1", channel), sets["H_U"], v_ux, r_uniform=False)
    blocks = all_blocks(n_len)
    if context == "eve":
        p_zx = _block_joint(symbol_model(spec, "X1", "Z").table(), n_len)
        weights = law.T @ p_zx.T
    else:
        p_x = _block_joint(symbol_model(spec, "X1").table(), n_len)[0]
        weights = law.T @ p_x[:, None] if context == "none" else (law * p_x[:, None]).T

    pieces = []
    for r_value in all_blocks(len(v_ux)):
        match = (blocks[:, v_ux.zero_based] == r_value).all(axis=1)
        v_rows, c_rows = np.nonzero(weights * match[:, None] > 0)
        data = {"V": blocks[v_rows]}
        if context != "none":
            data["C"] = blocks[c_rows]
        per_block = _Factor(data, weights[v_rows, c_rows])
        renamed = [
            _Factor({_block_name(name, i): arr for name, arr in per_block.data.items()}, per_block.prob) for i in range(k)
        ]
        combined = _product(*renamed)
        rows = len(combined.prob)
        combined.data["R1"] = np.broadcast_to(r_value, (rows, len(r_value))).copy()
        combined.prob = combined.prob * 2.0 ** -len(v_ux)
        pieces.append(combined)
    _check_rows(sum(len(p.prob) for p in pieces))
    data = {name: np.concatenate([p.data[name] for p in pieces]) for name in pieces[0].data}
    out = _Factor(data, np.concatenate([p.prob for p in pieces]))
    if context == "eve":
        for i in range(k):
            out.data[_block_name("Z", i)] = out.data.pop(_block_name("C", i))
    elif context == "source":
        for i in range(k):
            out.data[_block_name("X", i)] = out.data.pop(_block_name("C", i))
    return out


def exact_protocol_distribution(
    model: str,
    spec,
    sets: IndexSetBundle,
    k: int = 1,
    channel: Optional[TestChannel] = None,
) -> ExactDistribution:
    """Exact joint law of the encoder's key, the public transcript and the eavesdropper's blocks.

    Only the source axes the encoder side depends on are enumerated, along
    with seeds, pads and (for the auxiliary models) the exact law of the
    quantized blocks.

    Columns: ``K``/``K{i}`` keys, ``S{i}`` next-block seeds, ``M``/``M{i}``
    public bits, ``Z``/``Z{i}`` eavesdropper blocks when present, ``V{i}``
    quantized blocks and ``X{i}`` enrollment blocks where they are defined.

    Raises:
        CapacityError: if the realization count exceeds 2^26.
    """
    if sets.model != model:
        raise SpecValidationError(f"index sets were built for {sets.model}, not {model}")
    n_len = sets.n_total
    eve = bool(spec.eve)
    eve_names = ["Z"] if eve else []

    if model in ("model1", "model3-star", "model3-tri"):
        encoder_axis = "X2" if model == "model3-tri" else "X1"
        k_eff = 1 if model == "model3-star" else k
        blocks = _blocks_factor(spec, [encoder_axis, *eve_names], n_len, k_eff)
        seed_len = len(sets["F'"]) * (k_eff if model == "model3-tri" else 1)
        factor = _product(blocks, _uniform("seed", seed_len))
        u = polar_transform_array(_stack(factor.data, encoder_axis, k_eff))
        seed = factor.data["seed"]
        if model == "model1":
            encoded = chained_encode(u, seed, sets, "A_XYZ")
        elif model == "model3-star":
            encoded = star_encode(u[:, 0], seed, sets)
        else:
            encoded = tri_encode(u, seed.reshape(len(seed), k_eff, len(sets["F'"])), sets)
        return ExactDistribution(_columns(encoded, factor.data, k_eff, eve), factor.prob)

    if model == "model4":
        publishers = tree_publishers(sets)
        names = [f"X{v}" for v in publishers]
        factor = _blocks_factor(spec, names + eve_names, n_len, 1)
        polarized = {v: polar_transform_array(factor.data[_block_name(f"X{v}", 0)]) for v in publishers}
        encoded = tree_encode(polarized, sets)
        return ExactDistribution(_columns(encoded, factor.data, 1, eve), factor.prob)

    if model in ("model2", "bio-gen", "bio-zero"):
        channel = channel or sets.channel
        if channel is None:
            raise SpecValidationError(f"{model} needs a test channel p(u|x)")
        context = "source" if model == "bio-zero" else ("eve" if eve else "none")
        law = _auxiliary_factor(spec, sets, channel, k, context)
        if model == "bio-zero":
            factor = _product(law, _uniform("pads", k * len(sets["P"])))
            pads = factor.data["pads"].reshape(len(factor.prob), k, len(sets["P"]))
            v = _stack(factor.data, "V", k)
            encoded = bio_zero_encode(v, factor.data["R1"], pads, sets)
        else:
            factor = _product(law, _uniform("seed", len(sets["F'"])))
            v = _stack(factor.data, "V", k)
            a_name = "A_UYZ" if model == "model2" else "A_UXY"
            encoded = chained_encode(v, factor.data["seed"], sets, a_name, r1=factor.data["R1"])
        columns = _columns(encoded, factor.data, k, eve and context == "eve")
        for i in range(k):
            columns[f"V{i + 1}"] = factor.data[_block_name("V", i)]
            if context == "source":
                columns[f"X{i + 1}"] = factor.data[_block_name("X", i)]
        if context == "source":
            columns["X"] = np.concatenate([factor.data[_block_name("X", i)] for i in range(k)], axis=1)
        return ExactDistribution(columns, factor.prob)

    raise SpecValidationError(f"unknown model {model!r}")


class ErrorRate(BaseModel):
    rate: float
    low: float
    high: float
    errors: int
    trials: int

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.rate * (1.0 - self.rate), 0.0) / self.trials)


def empirical_error_rate(
    run: Callable[[np.random.Generator], Union[ProtocolReport, bool]],
    trials: int,
    rng: np.random.Generator,
) -> ErrorRate:
    """Fraction of runs with any-terminal disagreement and its Wilson 95% interval.

    ``run`` receives a fresh generator per trial and returns a report or a
    boolean agreement flag.
    """
    if trials < 1:
        raise SpecValidationError("trials must be at least 1")
    seeds = rng.integers(0, 2**63 - 1, size=trials)
    errors = 0
    for child in seeds:
        outcome = run(np.random.default_rng(int(child)))
        agreed = outcome.agreement if isinstance(outcome, ProtocolReport) else bool(outcome)
        errors += int(not agreed)
    return error_rate(errors, trials)


def error_rate(errors: int, trials: int) -> ErrorRate:
    """Observed failure fraction with a Wilson 95% interval"""
    if trials < 1 or not 0 <= errors <= trials:
        raise SpecValidationError(f"need 0 <= errors <= trials and trials >= 1, got {errors}/{trials}")
    interval = binomtest(errors, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return ErrorRate(rate=errors / trials, low=interval.low, high=interval.high, errors=errors, trials=trials)


def _labels(values: Sequence) -> np.ndarray:
    _, inverse = np.unique(np.asarray([str(v) for v in values]), return_inverse=True)
    return inverse.ravel()


def plug_in_secrecy(keys: Sequence, views: Sequence, key_bits: int) -> SecrecyReport:
    """Histogram estimates of I(K; view) and |K| - H(K) from paired trial outcomes.

    Plug-in mutual information is biased upward; ``bias_bound`` is the
    first-order bias (n_kv - n_k - n_v + 1) / (2 T ln 2) of the observed
    alphabet sizes.
    """
    if len(keys) != len(views) or not keys:
        raise StructuralError("plug-in secrecy needs one view per key and at least one trial")
    trials = len(keys)
    key_codes = _labels(keys)
    view_codes = _labels(views)
    pair_codes = key_codes * (view_codes.max() + 1) + view_codes
    h_key = _entropy_of(np.bincount(key_codes) / trials)
    h_view = _entropy_of(np.bincount(view_codes) / trials)
    pair_counts = np.bincount(pair_codes)
    h_pair = _entropy_of(pair_counts / trials)
    n_k, n_v, n_kv = len(np.unique(key_codes)), len(np.unique(view_codes)), int((pair_counts > 0).sum())
    return SecrecyReport(
        leakage_bits=max(h_key + h_view - h_pair, 0.0),
        uniformity_bits=key_bits - h_key,
        method="plugin",
        trials=trials,
        bias_bound=max(n_kv - n_k - n_v + 1, 0) / (2.0 * trials * math.log(2.0)),
    )


def delta_star(n_len: int, beta: float) -> float:
    """-3 sqrt(2N ln2) N 2^(-N^beta/2) log2(3 sqrt(2N ln2) 2^(-N^beta/2))"""
    scale = 3.0 * math.sqrt(2.0 * n_len * math.log(2.0)) * 2.0 ** (-(n_len**beta) / 2.0)
    return -scale * n_len * math.log2(scale)


def _delta_c(c: float, n_len: int, delta: float) -> float:
    scale = c * math.sqrt(2.0 * math.log(2.0)) * math.sqrt(n_len * delta)
    return scale * (n_len - math.log2(scale))


def delta_one(n_len: int, delta: float) -> float:
    return _delta_c(2.0, n_len, delta)


def delta_two(n_len: int, delta: float) -> float:
    return _delta_c(6.0, n_len, delta)


def delta_three(n_len: int, delta: float) -> float:
    return _delta_c(3.0, n_len, delta)


class BoundsReport(BaseModel):
    model: str
    n_total: int
    k: int
    delta: float
    error_bound: float
    uniformity_bound: Optional[float] = None
    leakage_bound: Optional[float] = None


def theoretical_bounds(model: str, n_len: int, k: int, delta: float, beta: float = 0.25) -> BoundsReport:
    """Finite-N reliability, uniformity and leakage upper bounds of the chained schemes"""
    nd = n_len * delta
    if model == "model1":
        return BoundsReport(
            model=model,
            n_total=n_len,
            k=k,
            delta=delta,
            error_bound=k * (k + 1) / 2 * nd,
            uniformity_bound=k * nd,
            leakage_bound=2 * k * nd + (k - 1) * delta_star(n_len, beta),
        )
    if model in ("model2", "bio-gen"):
        d1, d2, d3 = delta_one(n_len, delta), delta_two(n_len, delta), delta_three(n_len, delta)
        return BoundsReport(
            model=model,
            n_total=n_len,
            k=k,
            delta=delta,
            error_bound=k * (k + 1) / 2 * (math.sqrt(2 * math.log(2)) * math.sqrt(nd) + nd),
            uniformity_bound=k * (d1 + d2),
            leakage_bound=(k - 1) * (k + 2) / 2 * d2 + k * (2 * d1 + d2 + d3),
        )
    return BoundsReport(model=model, n_total=n_len, k=k, delta=delta, error_bound=k * nd)


class EncoderCloseness(BaseModel):
    divergence: float
    variational: float
    divergence_bound: float
    variational_bound: float


def encoder_closeness(spec, sets: IndexSetBundle, channel: Optional[TestChannel] = None) -> EncoderCloseness:
    """Exact D(p_XV || p~_XV) and V(p~_V, p_V) of the stochastic encoder with uniform R_1"""
    channel = channel or sets.channel
    if channel is None:
        raise SpecValidationError("the encoder check needs a test channel p(u|x)")
    n_len = sets.n_total
    true_law, encoder = encoder_law(symbol_model(spec, "U", "X1", channel), sets["H_U"], sets["V_U|X"])
    p_x = _block_joint(symbol_model(spec, "X1").table(), n_len)[0]
    p_xv = p_x[:, None] * true_law
    q_xv = p_x[:, None] * encoder
    delta = max(sets.delta_high, sets.delta_very_high)
    return EncoderCloseness(
        divergence=kl_divergence(p_xv, q_xv),
        variational=variational_distance(q_xv.sum(axis=0), p_xv.sum(axis=0)),
        divergence_bound=n_len * delta,
        variational_bound=math.sqrt(2.0 * math.log(2.0)) * math.sqrt(n_len * delta),
    )

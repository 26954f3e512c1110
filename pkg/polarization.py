"""Per-index polarized statistics and the index sets each protocol needs.

Statistics are indexed by a context label ``"<target>|<side>"`` such as
``"X1|X2"``, ``"X1|Z"``, ``"U|X1"`` or ``"X1|-"`` (no side information).
Set names follow the same convention: ``H_X|Y``, ``V_U|Z``, ``K``, ...
"""

import logging
import math
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from capacity import binary_entropy, broadcast_capacity, min_mi_edge
from errors import CapacityError, InfeasibleConfiguration, SpecValidationError, StructuralError
from polar_core import IndexSet, polar_transform_array
from sources import (
    JointSourceSpec,
    MarkovTree,
    TestChannel,
    axis_labels,
    extended_pmf,
    marginal,
    sample_array,
)
from sc_codec import SymbolModel, all_blocks, posterior_trace_batch
from utils import validate_block_length

logger = logging.getLogger(__name__)

ModelTag = Literal["model1", "model2", "model3-star", "model3-tri", "model4", "bio-gen", "bio-zero"]
MODEL_TAGS: tuple[str, ...] = ("model1", "model2", "model3-star", "model3-tri", "model4", "bio-gen", "bio-zero")
AUXILIARY_MODELS = ("model2", "bio-gen", "bio-zero")

DEFAULT_BETA = 0.25
EXACT_TABLE_BITS = 24
MC_CHUNK = 4096

Side = Union[None, str, int, Sequence[Union[str, int]]]


def delta_n(n_len: int, beta: float = DEFAULT_BETA) -> float:
    """Polarization threshold 2^(-N^beta)"""
    return 2.0 ** (-(n_len**beta))


def validate_beta(beta: float) -> float:
    if not 0.0 < beta < 0.5:
        raise SpecValidationError(f"beta must lie in (0, 1/2), got {beta}")
    return float(beta)


def validate_delta(delta: float) -> float:
    if not 0.0 < delta <= 0.5:
        raise SpecValidationError(f"delta must lie in (0, 1/2], got {delta}")
    return float(delta)


def _side_labels(side: Side) -> tuple[str, ...]:
    if side is None:
        return ()
    if isinstance(side, (str, int)):
        side = [side]
    labels = []
    for item in side:
        label = f"X{item}" if isinstance(item, int) else str(item)
        if label != "-":
            labels.append(label)
    return tuple(labels)


def context_key(target: str, side: Side) -> str:
    labels = _side_labels(side)
    return f"{target}|{'.'.join(labels) if labels else '-'}"


class PolarIndexStats(BaseModel):
    """Per-index h = H(U_i | U^{<i}, side^N) and Z(U_i | U^{<i}, side^N)"""

    n: int
    target: str
    side: list[str] = Field(default_factory=list)
    method: Literal["exact", "mc"]
    samples: Optional[int] = None
    h_cond: list[float]
    z: list[float]

    @property
    def length(self) -> int:
        return 2**self.n

    @property
    def key(self) -> str:
        return context_key(self.target, self.side)

    def h_array(self) -> np.ndarray:
        return np.asarray(self.h_cond, dtype=float)

    def z_array(self) -> np.ndarray:
        return np.asarray(self.z, dtype=float)

    def high_set(self, delta: float) -> IndexSet:
        """Indices with h >= delta"""
        return IndexSet.from_mask(self.h_array() >= delta)

    def very_high_set(self, delta: float) -> IndexSet:
        """Indices with h >= 1 - delta"""
        return IndexSet.from_mask(self.h_array() >= 1.0 - delta)


def _resolve_axes(spec, target: str, side: Side, channel: Optional[TestChannel]) -> tuple[np.ndarray, list[int], tuple[str, ...]]:
    labels = axis_labels(spec, channel)
    side_labels = _side_labels(side)
    missing = [name for name in (target, *side_labels) if name not in labels]
    if missing:
        raise SpecValidationError(f"unknown source axes {missing}; available {labels}")
    joint = extended_pmf(spec, channel)
    return joint, [labels.index(target)] + [labels.index(name) for name in side_labels], side_labels


def symbol_model(spec, target: str = "X1", side: Side = None, channel: Optional[TestChannel] = None) -> SymbolModel:
    """SymbolModel of one target bit against the given side axes"""
    joint, axes, _ = _resolve_axes(spec, target, side, channel)
    return SymbolModel.from_joint(joint, axes[0], axes[1:])


def _block_joint(pair: np.ndarray, n_len: int) -> np.ndarray:
    """p(x^N, s^N) of N i.i.d. symbols as a (S^N, 2^N) table, x1 most significant"""
    symbols = pair.shape[1]
    table = pair
    for _ in range(1, n_len):
        table = np.multiply.outer(table, pair)
    table = table.reshape((2, symbols) * n_len)
    order = list(range(1, 2 * n_len, 2)) + list(range(0, 2 * n_len, 2))
    return table.transpose(order).reshape(symbols**n_len, 2**n_len)


def exact_index_stats(
    spec,
    n_len: int,
    side: Side = None,
    target: str = "X1",
    channel: Optional[TestChannel] = None,
) -> PolarIndexStats:
    """Exact per-index statistics by enumerating every (x^N, side^N) pair.

    The block joint is permuted from the x domain to the u = x G_N domain,
    then each index reads its prefix marginal p(u^{<i}, u_i, side^N).

    Raises:
        CapacityError: if the S^N x 2^N table exceeds 2^24 entries.
    """
    exponent = validate_block_length(n_len)
    model = symbol_model(spec, target, side, channel)
    pair = model.table()
    table_bits = n_len * (1 + math.log2(pair.shape[1]))
    if table_bits > EXACT_TABLE_BITS:
        raise CapacityError(
            f"exact enumeration of 2^{table_bits:.0f} entries exceeds 2^{EXACT_TABLE_BITS}; use mc_index_stats"
        )
    p_x = _block_joint(pair, n_len)
    u_index = polar_transform_array(all_blocks(n_len)) @ (1 << np.arange(n_len - 1, -1, -1))
    current = np.empty_like(p_x)
    current[:, u_index] = p_x

    h_cond = np.zeros(n_len)
    z = np.zeros(n_len)
    rows = current.shape[0]
    for i in range(n_len, 0, -1):
        q = current.reshape(rows, 2 ** (i - 1), 2)
        total = q.sum(axis=-1)
        p_one = np.divide(q[..., 1], total, out=np.zeros_like(total), where=total > 0)
        h_cond[i - 1] = float((total * binary_entropy(p_one)).sum())
        z[i - 1] = float(2.0 * np.sqrt(q[..., 0] * q[..., 1]).sum())
        current = total
    return PolarIndexStats(
        n=exponent,
        target=target,
        side=list(_side_labels(side)),
        method="exact",
        h_cond=np.clip(h_cond, 0.0, 1.0).tolist(),
        z=np.clip(z, 0.0, 1.0).tolist(),
    )


def mc_index_stats(
    spec,
    n_len: int,
    side: Side,
    samples: int,
    rng: np.random.Generator,
    target: str = "X1",
    channel: Optional[TestChannel] = None,
) -> PolarIndexStats:
    """Genie-aided Monte-Carlo estimates: mean H_b and mean 2 sqrt(p0 p1) of the SC posteriors"""
    exponent = validate_block_length(n_len)
    if samples < 1:
        raise SpecValidationError("samples must be at least 1")
    joint, axes, side_labels = _resolve_axes(spec, target, side, channel)
    model = SymbolModel.from_joint(joint, axes[0], axes[1:])
    reduced = marginal(joint, axes)
    weights = 1 << np.arange(len(axes) - 2, -1, -1) if len(axes) > 1 else np.zeros(0, dtype=np.int64)

    h_sum = np.zeros(n_len)
    z_sum = np.zeros(n_len)
    done = 0
    while done < samples:
        count = min(MC_CHUNK, samples - done)
        bits = sample_array(reduced, n_len, rng, count)
        u = polar_transform_array(bits[:, 0, :])
        symbols = (bits[:, 1:, :].astype(np.int64) * weights[None, :, None]).sum(axis=1)
        p_one = posterior_trace_batch(u, symbols, model)
        h_sum += binary_entropy(p_one).sum(axis=0)
        z_sum += (2.0 * np.sqrt(p_one * (1.0 - p_one))).sum(axis=0)
        done += count
    logger.debug("mc stats %s at N=%d from %d samples", context_key(target, side_labels), n_len, samples)
    return PolarIndexStats(
        n=exponent,
        target=target,
        side=list(side_labels),
        method="mc",
        samples=samples,
        h_cond=np.clip(h_sum / samples, 0.0, 1.0).tolist(),
        z=np.clip(z_sum / samples, 0.0, 1.0).tolist(),
    )


def bhattacharyya(joint: np.ndarray) -> float:
    """Z(X|Y) = 2 sum_y sqrt(p(0, y) p(1, y)) for a (2, S) joint pmf"""
    table = np.asarray(joint, dtype=float).reshape(2, -1)
    return float(min(2.0 * np.sqrt(table[0] * table[1]).sum(), 1.0))


class CombineCase(BaseModel):
    lhs: float
    rhs: float
    margin: float


class CombineBoundReport(BaseModel):
    cases: list[CombineCase]
    min_margin: float


def _combine_case(table: np.ndarray) -> CombineCase:
    z_single = bhattacharyya(table)
    # law of (X1 xor X2, Y1, Y2) for two independent drawings
    same = np.outer(table[0], table[0]) + np.outer(table[1], table[1])
    differ = np.outer(table[0], table[1]) + np.outer(table[1], table[0])
    lhs = float(2.0 * np.sqrt(same * differ).sum())
    rhs = math.sqrt(max(2.0 * z_single**2 - z_single**4, 0.0))
    return CombineCase(lhs=lhs, rhs=rhs, margin=lhs - rhs)


def check_combine_bound(
    joint: Optional[np.ndarray] = None,
    trials: int = 0,
    rng: Optional[np.random.Generator] = None,
    side_symbols: int = 4,
) -> CombineBoundReport:
    """Compare Z(X1 xor X2 | Y1 Y2) with sqrt(2 Z^2 - Z^4).

    Evaluates the given (2, S) joint, if any, and ``trials`` more joints
    drawn uniformly from the simplex.
    """
    tables = []
    if joint is not None:
        tables.append(np.asarray(joint, dtype=float).reshape(2, -1))
    if trials:
        rng = rng if rng is not None else np.random.default_rng()
        draws = rng.dirichlet(np.ones(2 * side_symbols), size=trials)
        tables.extend(draw.reshape(2, side_symbols) for draw in draws)
    cases = [_combine_case(table) for table in tables]
    return CombineBoundReport(cases=cases, min_margin=min((c.margin for c in cases), default=0.0))


class ModelPlan(BaseModel):
    """Role assignment that the set construction depends on"""

    i_min: Optional[int] = None
    root: Optional[int] = None
    partner: Optional[int] = None
    order: list[int] = Field(default_factory=list)
    parent: dict[int, int] = Field(default_factory=dict)
    children: dict[int, list[int]] = Field(default_factory=dict)
    star_child: dict[int, int] = Field(default_factory=dict)

    def path_to_root(self, terminal: int) -> list[int]:
        """Vertices from terminal's parent up to the root"""
        path = []
        vertex = terminal
        while vertex != self.root:
            vertex = self.parent[vertex]
            path.append(vertex)
        return path


def tree_plan(spec: MarkovTree) -> ModelPlan:
    """BFS from the lower endpoint of the least informative edge"""
    n0, n1, _ = min_mi_edge(spec)
    adjacency = spec.adjacency()
    order = [n0]
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {}
    cursor = 0
    while cursor < len(order):
        vertex = order[cursor]
        cursor += 1
        for nxt, _ in sorted(adjacency[vertex]):
            if nxt != n0 and nxt not in parent:
                parent[nxt] = vertex
                children.setdefault(vertex, []).append(nxt)
                order.append(nxt)
    star_child = {}
    for vertex, kids in children.items():
        star_child[vertex] = max(kids, key=lambda c: (spec.edge_p(vertex, c), -c))
    star_child[n0] = n1
    return ModelPlan(root=n0, partner=n1, order=order, parent=parent, children=children, star_child=star_child)


def model_plan(model: str, spec) -> ModelPlan:
    if model == "model3-star":
        return ModelPlan(i_min=broadcast_capacity(spec).auxiliary["i_min"])
    if model == "model4":
        if not isinstance(spec, MarkovTree):
            raise SpecValidationError("model4 needs a markov_tree source")
        return tree_plan(spec)
    return ModelPlan()


def required_contexts(model: str, spec, plan: Optional[ModelPlan] = None) -> list[tuple[str, tuple[str, ...]]]:
    """(target, side labels) pairs whose statistics the model's sets need"""
    plan = plan or model_plan(model, spec)
    eve = ("Z",) if spec.eve else ()
    if model == "model1":
        return [("X1", eve), ("X1", ("X2",))]
    if model == "model2":
        return [("U", ()), ("U", ("X1",)), ("U", eve), ("U", ("X2",))]
    if model in ("bio-gen", "bio-zero"):
        return [("U", ()), ("U", ("X1",)), ("U", ("X2",))]
    if model == "model3-star":
        return [("X1", ())] + [("X1", (f"X{j}",)) for j in range(2, spec.terminals + 1)]
    if model == "model3-tri":
        if spec.terminals != 3:
            raise SpecValidationError("model3-tri needs exactly three terminals")
        return [("X2", ()), ("X2", ("X1",)), ("X2", ("X3",))]
    if model == "model4":
        return [(f"X{v}", (f"X{c}",)) for v in plan.order for c in plan.children.get(v, [])]
    raise SpecValidationError(f"unknown model {model!r}")


def construct_stats(
    spec,
    n_len: int,
    model: str,
    method: Literal["exact", "mc"] = "exact",
    samples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    channel: Optional[TestChannel] = None,
) -> dict[str, PolarIndexStats]:
    """Statistics for every context the model needs, keyed by context label"""
    if model in AUXILIARY_MODELS and channel is None:
        raise SpecValidationError(f"{model} needs a test channel p(u|x)")
    rng = rng if rng is not None else np.random.default_rng()
    stats: dict[str, PolarIndexStats] = {}
    for target, side in required_contexts(model, spec):
        key = context_key(target, side)
        if key in stats:
            continue
        if method == "exact":
            stats[key] = exact_index_stats(spec, n_len, side, target, channel)
        else:
            stats[key] = mc_index_stats(spec, n_len, side, samples, rng, target, channel)
    return stats


def sc_error_bound(stats: PolarIndexStats, frozen: IndexSet) -> float:
    """Union bound sum of z over the positions the decoder must decide"""
    return float(stats.z_array()[~frozen.mask()].sum())


class IndexSetBundle(BaseModel):
    """Named index sets for one model, with the statistics they came from"""

    model_config = ConfigDict(protected_namespaces=())

    model: ModelTag
    n_total: int
    beta: float
    delta_high: float
    delta_very_high: float
    sets: dict[str, IndexSet]
    stats: dict[str, PolarIndexStats] = Field(default_factory=dict)
    plan: ModelPlan = Field(default_factory=ModelPlan)
    source: Optional[JointSourceSpec] = None
    channel: Optional[TestChannel] = None

    def __getitem__(self, name: str) -> IndexSet:
        try:
            return self.sets[name]
        except KeyError:
            raise StructuralError(f"{self.model} bundle has no set {name!r}") from None

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "IndexSetBundle":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def decode_contexts(self) -> list[tuple[str, str]]:
        """(stats context, frozen set name) for every SC decoder the model runs"""
        if self.model == "model1":
            return [("X1|X2", "H_X|Y")]
        if self.model in AUXILIARY_MODELS:
            return [("U|X2", "H_U|Y")]
        if self.model == "model3-star":
            return [(key, "H*") for key in self.stats if key != "X1|-"]
        if self.model == "model3-tri":
            return [("X2|X1", "H_X2|X1"), ("X2|X3", "H_X2|X3")]
        contexts = []
        for vertex in self.plan.order:
            for child in self.plan.children.get(vertex, []):
                contexts.append((f"X{vertex}|X{child}", f"H_X{vertex}|X{self.plan.star_child[vertex]}"))
        return contexts

    def summary(self, k: int = 1) -> dict:
        """Set sizes, predicted rates over k blocks and SC error bounds"""
        n_len = self.n_total
        size = {name: len(s) for name, s in self.sets.items()}
        key_bits, seed_bits, public_bits = predicted_bits(self, k)
        bounds = {}
        for context, frozen in self.decode_contexts():
            if context in self.stats:
                bounds[context] = sc_error_bound(self.stats[context], self.sets[frozen])
        return {
            "model": self.model,
            "N": n_len,
            "k": k,
            "beta": self.beta,
            "delta_high": self.delta_high,
            "delta_very_high": self.delta_very_high,
            "set_sizes": size,
            "key_bits": key_bits,
            "seed_bits": seed_bits,
            "public_bits": public_bits,
            "key_rate": key_bits / (k * n_len),
            "seed_rate": seed_bits / (k * n_len),
            "public_rate": public_bits / (k * n_len),
            "sc_error_bound": bounds,
        }


def predicted_bits(bundle: IndexSetBundle, k: int = 1) -> tuple[int, int, int]:
    """(total key bits, seed bits consumed, public bits) over k blocks"""
    s = {name: len(v) for name, v in bundle.sets.items()}
    model = bundle.model
    if model == "model1":
        return k * s["K"], s["F'"], k * (s["F"] + s["F'"])
    if model in ("model2", "bio-gen"):
        return k * s["K"], s["F'"], s["V_U|X"] + k * (s["F"] + s["F'"])
    if model == "bio-zero":
        return k * (s["K"] + s["F"]), k * s["P"], s["V_U|X"] + k * s["P"]
    if model == "model3-star":
        return s["K"], s["F'"], s["F"] + s["F'"]
    if model == "model3-tri":
        block_key = s["K_XM"] + s["Kbar"]
        return (
            k * block_key - s["Kbar"],
            k * s["F'"],
            k * (s["F21"] + s["F'"]) + s["Fbar_k"],
        )
    publishers = [f"H_X{v}|X{c}" for v, c in bundle.plan.star_child.items()]
    return s["K"], 0, sum(s[name] for name in publishers)


def _select_by_entropy(eligible: IndexSet, need: int, h: np.ndarray, name: str) -> IndexSet:
    """The ``need`` eligible indices with the highest h, ties to the lowest index"""
    if len(eligible) < need:
        raise InfeasibleConfiguration(
            f"{name} needs {need} indices but only {len(eligible)} are eligible",
            needed=need,
            available=len(eligible),
        )
    chosen = sorted(eligible.indices, key=lambda i: (-h[i - 1], i))[:need]
    return IndexSet.of(chosen, eligible.n_total)


def _lowest(eligible: IndexSet, need: int, name: str) -> IndexSet:
    if len(eligible) < need:
        raise InfeasibleConfiguration(
            f"{name} needs {need} indices but only {len(eligible)} are eligible",
            needed=need,
            available=len(eligible),
        )
    return IndexSet.of(eligible.indices[:need], eligible.n_total)


def _stats(stats: dict[str, PolarIndexStats], key: str) -> PolarIndexStats:
    if key not in stats:
        raise SpecValidationError(f"statistics for context {key!r} are missing")
    return stats[key]


def _chained_sets(
    secret: IndexSet,
    high_y: IndexSet,
    shared: IndexSet,
    h_secret: np.ndarray,
    a_name: str,
) -> dict[str, IndexSet]:
    """Key/seed/pad split shared by the chained two-terminal models.

    ``secret`` is the near-uniform set hidden from the eavesdropper, ``high_y``
    the decoder's frozen set and ``shared`` positions the decoder gets from
    elsewhere (R_1 for the auxiliary models).
    """
    to_send = high_y - shared
    eligible = secret - high_y - shared
    pad = to_send - secret
    chosen = _select_by_entropy(eligible, len(pad), h_secret, a_name)
    return {
        a_name: chosen,
        "K": eligible - chosen,
        "F": to_send & secret,
        "F'": pad,
    }


def _model1_sets(stats, spec, dh, dv) -> dict[str, IndexSet]:
    eve_key = "X1|Z" if spec.eve else "X1|-"
    eve_stats = _stats(stats, eve_key)
    v_xz = eve_stats.very_high_set(dv)
    h_xy = _stats(stats, "X1|X2").high_set(dh)
    n_len = eve_stats.length
    sets = {"V_X|Z": v_xz, "H_X|Y": h_xy}
    sets.update(_chained_sets(v_xz, h_xy, IndexSet.empty(n_len), eve_stats.h_array(), "A_XYZ"))
    return sets


def _model2_sets(stats, spec, dh, dv) -> dict[str, IndexSet]:
    prior = _stats(stats, "U|-")
    given_x = _stats(stats, "U|X1")
    given_y = _stats(stats, "U|X2")
    given_z = _stats(stats, "U|Z" if spec.eve else "U|-")
    sets = {
        "H_U": prior.high_set(dh),
        "V_U|X": given_x.very_high_set(dv),
        "H_U|X": given_x.high_set(dh),
        "V_U|Z": given_z.very_high_set(dv),
        "H_U|Y": given_y.high_set(dh),
        "V_U|Y": given_y.very_high_set(dv),
    }
    sets.update(_chained_sets(sets["V_U|Z"], sets["H_U|Y"], sets["V_U|X"], given_z.h_array(), "A_UYZ"))
    return sets


def _biometric_sets(stats, zero_leakage: bool, dh, dv) -> dict[str, IndexSet]:
    prior = _stats(stats, "U|-")
    given_x = _stats(stats, "U|X1")
    given_y = _stats(stats, "U|X2")
    sets = {
        "H_U": prior.high_set(dh),
        "V_U": prior.very_high_set(dv),
        "V_U|X": given_x.very_high_set(dv),
        "H_U|Y": given_y.high_set(dh),
    }
    if not zero_leakage:
        sets.update(_chained_sets(sets["V_U"], sets["H_U|Y"], sets["V_U|X"], prior.h_array(), "A_UXY"))
        return sets
    to_send = sets["H_U|Y"] - sets["V_U|X"]
    sets["K"] = sets["V_U"] - sets["H_U|Y"] - sets["V_U|X"]
    sets["F"] = to_send & sets["V_U"]
    sets["F'"] = to_send - sets["V_U"]
    sets["P"] = to_send
    return sets


def _star_sets(stats, spec, plan: ModelPlan, dh, dv) -> dict[str, IndexSet]:
    prior = _stats(stats, "X1|-")
    sets = {"V_X1": prior.very_high_set(dv), "H_X1": prior.high_set(dh)}
    for j in range(2, spec.terminals + 1):
        sets[f"H_X1|X{j}"] = _stats(stats, f"X1|X{j}").high_set(dh)
    h_star = sets[f"H_X1|X{plan.i_min}"]
    sets["H*"] = h_star
    sets["K"] = sets["V_X1"] - h_star
    sets["F"] = sets["V_X1"] & h_star
    sets["F'"] = h_star - sets["V_X1"]
    return sets


def _tri_sets(stats, dh, dv) -> dict[str, IndexSet]:
    v2 = _stats(stats, "X2|-").very_high_set(dv)
    h21 = _stats(stats, "X2|X1").high_set(dh)
    h23 = _stats(stats, "X2|X3").high_set(dh)
    kbar = (v2 - h21) & h23
    f21, f23 = h21 & v2, h23 & v2
    f_xm = _lowest(f21 - f23, len(kbar), "F_XM")
    return {
        "V_X2": v2,
        "H_X2|X1": h21,
        "H_X2|X3": h23,
        "K_XM": (v2 - h21) - h23,
        "Kbar": kbar,
        "F21": f21,
        "Fbar21": h21 - v2,
        "F23": f23,
        "Fbar23": h23 - v2,
        "F_XM": f_xm,
        "F2": f21 - f_xm,
        "F'": (h21 - v2) | (h23 - v2),
        "Fbar_k": f23 - f21,
    }


def _tree_sets(stats, plan: ModelPlan, dh) -> dict[str, IndexSet]:
    sets = {}
    for vertex in plan.order:
        for child in plan.children.get(vertex, []):
            sets[f"H_X{vertex}|X{child}"] = _stats(stats, f"X{vertex}|X{child}").high_set(dh)
    sets["K"] = sets[f"H_X{plan.root}|X{plan.partner}"].complement()
    return sets


def build_index_sets(
    stats: dict[str, PolarIndexStats],
    model: str,
    spec,
    beta: float = DEFAULT_BETA,
    delta: Optional[float] = None,
    delta_high: Optional[float] = None,
    delta_very_high: Optional[float] = None,
    channel: Optional[TestChannel] = None,
) -> IndexSetBundle:
    """Threshold the statistics and derive the model's named sets.

    ``i`` belongs to an H set when h >= delta_high and to a V set when
    h >= 1 - delta_very_high. Both default to delta, which defaults to
    2^(-N^beta).

    Raises:
        InfeasibleConfiguration: when a chaining subset of the required size
            does not exist.
    """
    if model not in MODEL_TAGS:
        raise SpecValidationError(f"unknown model {model!r}")
    lengths = {s.length for s in stats.values()}
    if len(lengths) != 1:
        raise StructuralError(f"statistics disagree on the block length: {sorted(lengths)}")
    n_len = lengths.pop()
    beta = validate_beta(beta)
    base = validate_delta(delta) if delta is not None else delta_n(n_len, beta)
    dh = validate_delta(delta_high) if delta_high is not None else base
    dv = validate_delta(delta_very_high) if delta_very_high is not None else base
    plan = model_plan(model, spec)

    if model == "model1":
        sets = _model1_sets(stats, spec, dh, dv)
    elif model == "model2":
        sets = _model2_sets(stats, spec, dh, dv)
    elif model in ("bio-gen", "bio-zero"):
        sets = _biometric_sets(stats, model == "bio-zero", dh, dv)
    elif model == "model3-star":
        sets = _star_sets(stats, spec, plan, dh, dv)
    elif model == "model3-tri":
        sets = _tri_sets(stats, dh, dv)
    else:
        sets = _tree_sets(stats, plan, dh)

    logger.info(
        "%s sets at N=%d: %s",
        model,
        n_len,
        ", ".join(f"{name}={len(s)}" for name, s in sets.items()),
    )
    return IndexSetBundle(
        model=model,
        n_total=n_len,
        beta=beta,
        delta_high=dh,
        delta_very_high=dv,
        sets=sets,
        stats=stats,
        plan=plan,
        source=spec,
        channel=channel,
    )


def construct(
    spec,
    n_len: int,
    model: str,
    method: Literal["exact", "mc"] = "exact",
    samples: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    channel: Optional[TestChannel] = None,
    beta: float = DEFAULT_BETA,
    delta: Optional[float] = None,
    delta_high: Optional[float] = None,
    delta_very_high: Optional[float] = None,
) -> IndexSetBundle:
    """Statistics plus sets in one call"""
    stats = construct_stats(spec, n_len, model, method, samples, rng, channel)
    return build_index_sets(stats, model, spec, beta, delta, delta_high, delta_very_high, channel)

"""Closed-form reference values: entropies, capacities and rate points.

All quantities are in bits per source symbol.
"""

import logging
import math
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import bisect
from scipy.special import entr
from scipy.stats import entropy

from errors import SpecValidationError, StructuralError
from sources import (
    BroadcastStar,
    MarkovTree,
    TestChannel,
    degrade_check,
    extended_pmf,
    joint_pmf,
    marginal,
)

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
ROOT_TOLERANCE = 1e-12
ROOT_MAX_ITER = 200


class CapacityResult(BaseModel):
    value: float
    model: str
    auxiliary: dict[str, Any] = Field(default_factory=dict)
    warnings: list[str] = Field(default_factory=list)


def _check_unit(value: float, name: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise StructuralError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """Vectorized H_b in bits, 0 at the endpoints"""
    p = np.asarray(p, dtype=float)
    return (entr(p) + entr(1.0 - p)) / LN2


def hb(p: float) -> float:
    """Binary entropy H_b(p) in bits"""
    return float(binary_entropy(_check_unit(p, "p")))


def star(a: float, b: float) -> float:
    """Binary convolution a * b = (1 - b) a + b (1 - a)"""
    a = _check_unit(a, "a")
    b = _check_unit(b, "b")
    return (1.0 - b) * a + b * (1.0 - a)


def entropy_bits(pmf: np.ndarray) -> float:
    flat = np.asarray(pmf, dtype=float).ravel()
    flat = flat[flat > 0]
    if flat.size == 0:
        return 0.0
    return float(entropy(flat, base=2))


def mutual_information_pmf(joint: np.ndarray, axes_a: Sequence[int], axes_b: Sequence[int]) -> float:
    """I(A;B) from a dense pmf, A and B given as disjoint axis groups"""
    a = marginal(joint, axes_a)
    b = marginal(joint, axes_b)
    ab = marginal(joint, list(axes_a) + list(axes_b))
    return max(entropy_bits(a) + entropy_bits(b) - entropy_bits(ab), 0.0)


def pairwise_mi(spec, i: int, j: int) -> float:
    """I(X_i; X_j) for 1-based terminals"""
    return mutual_information_pmf(joint_pmf(spec), [i - 1], [j - 1])


def cwsk_unlimited(spec) -> CapacityResult:
    """I(X;Y) - I(X;Z) with X = X1, Y = X2 and the eavesdropper bit Z"""
    if spec.terminals < 2:
        raise SpecValidationError("two legitimate terminals are required")
    joint = joint_pmf(spec)
    i_xy = mutual_information_pmf(joint, [0], [1])
    i_xz = mutual_information_pmf(joint, [0], [spec.terminals]) if spec.eve else 0.0
    result = CapacityResult(value=max(i_xy - i_xz, 0.0), model="model1", auxiliary={"I_XY": i_xy, "I_XZ": i_xz})
    if not degrade_check(spec).markov_chain_xyz:
        message = "source is not degraded; I(X;Y) - I(X;Z) is an achievable rate, not necessarily the capacity"
        logger.warning(message)
        result.warnings.append(message)
    return result


def example1_capacity(p: float, q: float, r_p: float) -> CapacityResult:
    """Rate-limited capacity of the binary cascade with public rate r_p"""
    if not (0.0 < p < 0.5 and 0.0 < q < 0.5):
        raise SpecValidationError(f"p and q must lie in (0, 1/2), got p={p}, q={q}")
    if r_p < 0.0:
        raise SpecValidationError(f"no beta_0 in [0, 1/2] reaches a negative public rate {r_p}")
    if r_p >= hb(p):
        value = hb(star(p, q)) - hb(p)
        return CapacityResult(value=value, model="model2", auxiliary={"beta0": 0.0, "unlimited": True})

    def gap(beta: float) -> float:
        return hb(star(p, beta)) - hb(beta) - r_p

    beta0 = bisect(gap, 0.0, 0.5, xtol=ROOT_TOLERANCE, maxiter=ROOT_MAX_ITER)
    value = hb(star(star(p, beta0), q)) - hb(star(p, beta0))
    return CapacityResult(value=max(value, 0.0), model="model2", auxiliary={"beta0": beta0, "unlimited": False})


def broadcast_capacity(spec: BroadcastStar) -> CapacityResult:
    """min over i of I(X1; Xi), with the argmin terminal (lowest index on ties)"""
    values = {i: pairwise_mi(spec, 1, i) for i in range(2, spec.terminals + 1)}
    i_min = min(values, key=lambda i: (values[i], i))
    return CapacityResult(value=values[i_min], model="model3-star", auxiliary={"i_min": i_min, "pairwise": values})


def min_mi_edge(spec: MarkovTree) -> tuple[int, int, float]:
    """(n0, n1, I) of the least informative edge; n0 is its lower endpoint"""
    spec.validate_tree()
    best: Optional[tuple[float, int, int]] = None
    for edge in spec.edges:
        lo, hi = sorted((edge.i, edge.j))
        key = (pairwise_mi(spec, lo, hi), lo, hi)
        if best is None or key < best:
            best = key
    value, n0, n1 = best
    return n0, n1, value


def tree_capacity(spec: MarkovTree) -> CapacityResult:
    n0, n1, value = min_mi_edge(spec)
    return CapacityResult(value=value, model="model4", auxiliary={"edge": [n0, n1]})


def tri_capacity(spec) -> CapacityResult:
    """min(I(X1;X2), I(X2;X3)), labeled with X2 as the hub and X1 its least informative partner"""
    if spec.terminals != 3:
        raise SpecValidationError("the three-terminal model needs exactly three terminals")
    mi = {(i, j): pairwise_mi(spec, i, j) for i, j in ((1, 2), (1, 3), (2, 3))}

    def pair(i: int, j: int) -> float:
        return mi[tuple(sorted((i, j)))]

    hub_score = {j: min(pair(j, i) for i in (1, 2, 3) if i != j) for j in (1, 2, 3)}
    result = CapacityResult(
        value=min(pair(1, 2), pair(2, 3)),
        model="model3-tri",
        auxiliary={"I12": pair(1, 2), "I13": pair(1, 3), "I23": pair(2, 3)},
    )
    if abs(pair(1, 2) - max(hub_score.values())) > 1e-12:
        message = "labeling does not satisfy I(X1;X2) = max_j min_i I(Xj;Xi)"
        logger.warning(message)
        result.warnings.append(message)
    return result


def _aux_informations(channel: TestChannel, spec) -> dict[str, float]:
    joint = extended_pmf(spec, channel)
    u_axis = joint.ndim - 1
    values = {
        "I_UX": mutual_information_pmf(joint, [u_axis], [0]),
        "I_UY": mutual_information_pmf(joint, [u_axis], [1]),
        "I_UZ": mutual_information_pmf(joint, [u_axis], [spec.terminals]) if spec.eve else 0.0,
    }
    return values


def model2_rate_point(channel: TestChannel, spec) -> CapacityResult:
    """(I(Y;U) - I(Z;U), I(U;X) - I(U;Y)) for a fixed test channel"""
    info = _aux_informations(channel, spec)
    key_rate = info["I_UY"] - info["I_UZ"]
    r_p = info["I_UX"] - info["I_UY"]
    return CapacityResult(value=key_rate, model="model2", auxiliary={"r_p": r_p, **info})


def biometric_rate_point(channel: TestChannel, spec, zero_leakage: bool = False) -> CapacityResult:
    """Secret rate and leakage (or pre-shared key length) for a fixed test channel"""
    info = _aux_informations(channel, spec)
    leakage = info["I_UX"] - info["I_UY"]
    if zero_leakage:
        return CapacityResult(
            value=info["I_UY"] + leakage,
            model="bio-zero",
            auxiliary={"key_length_rate": leakage, **info},
        )
    return CapacityResult(value=info["I_UY"], model="bio-gen", auxiliary={"privacy_leakage": leakage, **info})

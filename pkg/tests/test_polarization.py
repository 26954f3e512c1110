import numpy as np
import pytest
from scipy.stats import entropy

from capacity import hb, star
from errors import CapacityError, InfeasibleConfiguration, SpecValidationError, StructuralError
from polar_core import IndexSet
from polarization import (
    IndexSetBundle,
    PolarIndexStats,
    bhattacharyya,
    build_index_sets,
    check_combine_bound,
    construct,
    construct_stats,
    context_key,
    delta_n,
    exact_index_stats,
    mc_index_stats,
    model_plan,
    predicted_bits,
    sc_error_bound,
    tree_plan,
    validate_beta,
    validate_delta,
)
from sources import BroadcastStar, DbmsChain, MarkovTree, TestChannel, TreeEdge, axis_labels, extended_pmf, joint_pmf, marginal

DBMS = DbmsChain(p=0.1, q=0.1)
STAR = BroadcastStar(crossovers=[0.1, 0.3])
PATH = MarkovTree(m=3, edges=[TreeEdge(i=1, j=2, p=0.2), TreeEdge(i=2, j=3, p=0.1)])
TREE4 = MarkovTree(m=4, edges=[TreeEdge(i=1, j=2, p=0.1), TreeEdge(i=3, j=2, p=0.3), TreeEdge(i=2, j=4, p=0.2)])


def conditional_entropy(spec, target, side, channel=None) -> float:
    labels = axis_labels(spec, channel)
    joint = extended_pmf(spec, channel)
    axes = [labels.index(target)] + [labels.index(s) for s in side]
    joint_h = entropy(marginal(joint, axes).ravel(), base=2)
    if not side:
        return float(joint_h)
    return float(joint_h - entropy(marginal(joint, axes[1:]).ravel(), base=2))


def manual_stats(target: str, side: list[str], h: list[float]) -> PolarIndexStats:
    return PolarIndexStats(n=int(np.log2(len(h))), target=target, side=side, method="exact", h_cond=h, z=h)


CONTEXTS = [
    (DBMS, "X1", ["X2"], None),
    (DBMS, "X1", ["Z"], None),
    (DBMS, "X1", [], None),
    (STAR, "X1", ["X2", "X3"], None),
    (PATH, "X2", ["X1"], None),
    (DBMS, "U", ["X1"], TestChannel.bsc(0.2)),
]


@pytest.mark.parametrize("n_len", [2, 4, 8])
@pytest.mark.parametrize("spec, target, side, channel", CONTEXTS)
def test_chain_rule(n_len, spec, target, side, channel):
    stats = exact_index_stats(spec, n_len, side, target, channel)
    expected = n_len * conditional_entropy(spec, target, side, channel)
    assert sum(stats.h_cond) == pytest.approx(expected, abs=1e-9)


def test_two_index_closed_form():
    p = 0.11
    stats = exact_index_stats(DbmsChain(p=p, z_present=False), 2, "X2")
    assert stats.h_cond[0] == pytest.approx(hb(star(p, p)))
    assert stats.h_cond[1] == pytest.approx(2 * hb(p) - hb(star(p, p)))


def test_single_index_bhattacharyya():
    p = 0.2
    stats = exact_index_stats(DbmsChain(p=p, z_present=False), 1, "X2")
    assert stats.z[0] == pytest.approx(2 * np.sqrt(p * (1 - p)))
    assert stats.h_cond[0] == pytest.approx(hb(p))
    assert bhattacharyya(joint_pmf(DbmsChain(p=p, z_present=False))) == pytest.approx(stats.z[0])
    assert bhattacharyya([[0.5, 0.0], [0.0, 0.5]]) == 0.0
    assert bhattacharyya([[0.25, 0.25], [0.25, 0.25]]) == pytest.approx(1.0)


@pytest.mark.parametrize("spec, target, side, channel", CONTEXTS)
def test_entropy_bhattacharyya_sandwich(spec, target, side, channel):
    stats = exact_index_stats(spec, 8, side, target, channel)
    h, z = stats.h_array(), stats.z_array()
    assert (z**2 <= h + 1e-9).all()
    assert (h <= np.log2(1 + z) + 1e-9).all()


def test_conditioning_reduces_entropy_per_index():
    prior = exact_index_stats(STAR, 8, None).h_array()
    for side in (["X2"], ["X3"], ["X2", "X3"]):
        assert (exact_index_stats(STAR, 8, side).h_array() <= prior + 1e-12).all()
    both = exact_index_stats(STAR, 8, ["X2", "X3"]).h_array()
    assert (both <= exact_index_stats(STAR, 8, ["X2"]).h_array() + 1e-12).all()


def test_degraded_observer_has_higher_entropy():
    good = exact_index_stats(STAR, 8, "X2").h_array()
    bad = exact_index_stats(STAR, 8, "X3").h_array()
    assert (good <= bad + 1e-12).all()


def test_exact_stats_budget():
    with pytest.raises(CapacityError):
        exact_index_stats(DBMS, 16, "X2")


def test_unknown_axis_rejected():
    with pytest.raises(SpecValidationError):
        exact_index_stats(DbmsChain(p=0.1, z_present=False), 4, "Z")


def test_mc_matches_exact_small():
    exact = exact_index_stats(DBMS, 4, "X2")
    mc = mc_index_stats(DBMS, 4, "X2", 20000, np.random.default_rng(11))
    assert mc.method == "mc" and mc.samples == 20000
    assert np.abs(mc.h_array() - exact.h_array()).max() <= 0.03


@pytest.mark.slow
def test_mc_matches_exact_bhattacharyya():
    exact = exact_index_stats(DBMS, 8, "X2")
    mc = mc_index_stats(DBMS, 8, "X2", 100_000, np.random.default_rng(12))
    assert np.abs(mc.z_array() - exact.z_array()).max() <= 0.02


def test_mc_rejects_zero_samples():
    with pytest.raises(SpecValidationError):
        mc_index_stats(DBMS, 4, "X2", 0, np.random.default_rng(0))


def test_thresholds():
    assert delta_n(16, 0.25) == pytest.approx(0.25)
    assert validate_beta(0.3) == 0.3
    with pytest.raises(SpecValidationError):
        validate_beta(0.5)
    with pytest.raises(SpecValidationError):
        validate_delta(0.0)
    with pytest.raises(SpecValidationError):
        validate_delta(0.6)


def test_threshold_monotonicity():
    stats = exact_index_stats(DBMS, 8, "Z")
    for low, high in [(0.01, 0.1), (0.1, 0.3), (0.3, 0.5)]:
        assert stats.high_set(high).issubset(stats.high_set(low))
        assert stats.very_high_set(low).issubset(stats.very_high_set(high))
        assert stats.very_high_set(low).issubset(stats.high_set(low))


def test_context_key():
    assert context_key("X1", None) == "X1|-"
    assert context_key("X1", 2) == "X1|X2"
    assert context_key("X1", ["X2", "X3"]) == "X1|X2.X3"
    assert exact_index_stats(DBMS, 2, "Z").key == "X1|Z"


def test_combine_bound_holds():
    joint = marginal(extended_pmf(DBMS), [0, 1])
    report = check_combine_bound(joint, trials=300, rng=np.random.default_rng(5))
    assert len(report.cases) == 301
    assert report.min_margin <= 1e-12
    assert all(case.lhs <= case.rhs + 1e-12 for case in report.cases)


def test_model1_sets_from_statistics():
    stats = {
        "X1|Z": manual_stats("X1", ["Z"], [1, 1, 1, 1, 0.95, 0.95, 0.5, 0.0]),
        "X1|X2": manual_stats("X1", ["X2"], [1, 0.8, 0, 0, 0, 0, 0, 0.3]),
    }
    bundle = build_index_sets(stats, "model1", DBMS, delta=0.1)
    assert bundle["V_X|Z"].indices == (1, 2, 3, 4, 5, 6)
    assert bundle["H_X|Y"].indices == (1, 2, 8)
    assert bundle["F"].indices == (1, 2)
    assert bundle["F'"].indices == (8,)
    # ties in h go to the lowest index
    assert bundle["A_XYZ"].indices == (3,)
    assert bundle["K"].indices == (4, 5, 6)
    assert predicted_bits(bundle, 3) == (9, 1, 9)


def test_model1_infeasible_chaining():
    stats = {
        "X1|Z": manual_stats("X1", ["Z"], [1, 1, 1, 1, 0.95, 0.95, 0.5, 0.0]),
        "X1|X2": manual_stats("X1", ["X2"], [1, 1, 1, 1, 1, 1, 1, 0]),
    }
    with pytest.raises(InfeasibleConfiguration) as info:
        build_index_sets(stats, "model1", DBMS, delta=0.1)
    assert info.value.exit_code == 4


def test_model2_key_excludes_shared_randomness():
    stats = {
        "U|-": manual_stats("U", [], [1, 1, 1, 0.5]),
        "U|X1": manual_stats("U", ["X1"], [1, 0.5, 0, 0]),
        "U|Z": manual_stats("U", ["Z"], [1, 1, 1, 0]),
        "U|X2": manual_stats("U", ["X2"], [1, 0.95, 0, 0]),
    }
    bundle = build_index_sets(stats, "model2", DBMS, delta=0.1, channel=TestChannel.bsc(0.2))
    assert bundle["V_U|X"].indices == (1,)
    assert bundle["K"].indices == (3,)
    assert bundle["F"].indices == (2,)
    assert len(bundle["F'"]) == 0
    assert predicted_bits(bundle, 2) == (2, 0, 3)


def test_bio_zero_sets():
    stats = {
        "U|-": manual_stats("U", [], [1, 1, 1, 1]),
        "U|X1": manual_stats("U", ["X1"], [1, 0.5, 0, 0]),
        "U|X2": manual_stats("U", ["X2"], [1, 0.95, 0.3, 0]),
    }
    bundle = build_index_sets(stats, "bio-zero", DBMS, delta=0.1, channel=TestChannel.bsc(0.2))
    assert bundle["P"].indices == (2, 3)
    assert bundle["K"].indices == (4,)
    assert predicted_bits(bundle, 2) == (2 * (1 + 2), 4, 1 + 4)


def test_auxiliary_models_need_a_channel():
    with pytest.raises(SpecValidationError):
        construct_stats(DBMS, 4, "model2")


def test_block_lengths_must_agree():
    stats = {
        "X1|Z": manual_stats("X1", ["Z"], [1, 1, 1, 1]),
        "X1|X2": manual_stats("X1", ["X2"], [1, 0]),
    }
    with pytest.raises(StructuralError):
        build_index_sets(stats, "model1", DBMS, delta=0.1)


def test_model1_without_eve_keys_every_reliable_index():
    bundle = construct(DbmsChain(p=0.1, z_present=False), 8, "model1")
    assert len(bundle["V_X|Z"]) == 8
    assert bundle["K"] == bundle["H_X|Y"].complement()
    assert len(bundle["F'"]) == 0


def test_star_sets_use_worst_terminal():
    bundle = construct(STAR, 8, "model3-star")
    assert bundle.plan.i_min == 3
    assert bundle["H*"] == bundle["H_X1|X3"]
    assert bundle["H_X1|X2"].issubset(bundle["H*"])
    assert bundle["K"] == bundle["V_X1"] - bundle["H*"]
    key, seed, public = predicted_bits(bundle)
    assert (key, seed, public) == (len(bundle["K"]), len(bundle["F'"]), len(bundle["H*"]))


def test_tri_sets_with_hub_labeling():
    bundle = construct(PATH, 8, "model3-tri")
    assert len(bundle["F_XM"]) == len(bundle["Kbar"])
    assert bundle["F_XM"].issubset(bundle["F21"] - bundle["F23"])
    assert (bundle["F2"] | bundle["F_XM"]) == bundle["F21"]
    assert bundle["K_XM"] & bundle["H_X2|X1"] == IndexSet.empty(8)


def test_tree_plan_and_sets():
    plan = tree_plan(TREE4)
    assert (plan.root, plan.partner) == (2, 3)
    assert plan.order == [2, 1, 3, 4]
    assert plan.star_child[2] == 3
    assert plan.path_to_root(4) == [2]
    bundle = construct(TREE4, 4, "model4")
    assert bundle["K"] == bundle["H_X2|X3"].complement()
    assert bundle["H_X2|X1"].issubset(bundle["H_X2|X3"])
    assert bundle["H_X2|X4"].issubset(bundle["H_X2|X3"])
    key, seed, public = predicted_bits(bundle)
    assert seed == 0 and key + public == 4


def test_model4_needs_a_tree():
    with pytest.raises(SpecValidationError):
        model_plan("model4", DBMS)


def test_sc_error_bound_sums_unfrozen():
    stats = manual_stats("X1", ["X2"], [0.5, 0.25, 0.125, 0.0625])
    assert sc_error_bound(stats, IndexSet.of([1], 4)) == pytest.approx(0.4375)


def test_bundle_round_trip(tmp_path):
    bundle = construct(TREE4, 4, "model4")
    path = bundle.save(tmp_path / "nested" / "sets.json")
    loaded = IndexSetBundle.load(path)
    assert loaded == bundle
    assert loaded.plan.star_child == bundle.plan.star_child


def test_summary_rates():
    bundle = construct(DbmsChain(p=0.1, z_present=False), 8, "model1")
    summary = bundle.summary(k=2)
    assert summary["key_bits"] == 2 * len(bundle["K"])
    assert summary["key_rate"] == pytest.approx(summary["key_bits"] / 16)
    assert set(summary["sc_error_bound"]) == {"X1|X2"}


def test_missing_set_name():
    bundle = construct(DbmsChain(p=0.1, z_present=False), 4, "model1")
    with pytest.raises(StructuralError):
        bundle["H_U"]


CROSSOVER_GRID = np.round(np.linspace(0.02, 0.45, 44), 4)


def random_star(seed: int) -> BroadcastStar:
    rng = np.random.default_rng(seed)
    count = int(rng.integers(2, 4))
    crossovers = rng.choice(CROSSOVER_GRID, size=count, replace=False)
    return BroadcastStar(p_x1=float(rng.uniform(0.2, 0.5)), crossovers=[float(p) for p in crossovers])


def random_tree(seed: int) -> MarkovTree:
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 6))
    probs = rng.choice(CROSSOVER_GRID, size=m - 1, replace=False)
    edges = [TreeEdge(i=int(rng.integers(1, v)), j=v, p=float(p)) for v, p in zip(range(2, m + 1), probs)]
    return MarkovTree(m=m, edges=edges)


@pytest.mark.parametrize("n_len", [4, 8])
@pytest.mark.parametrize("seed", range(10))
def test_star_sets_nest_in_the_worst_terminal(seed, n_len):
    spec = random_star(seed)
    bundle = construct(spec, n_len, "model3-star")
    worst = bundle[f"H_X1|X{bundle.plan.i_min}"]
    assert bundle.plan.i_min == 2 + int(np.argmax(spec.crossovers))
    for j in range(2, spec.terminals + 1):
        assert bundle[f"H_X1|X{j}"].issubset(worst)


@pytest.mark.parametrize("n_len", [4, 8])
@pytest.mark.parametrize("seed", range(10))
def test_tree_sets_nest_along_the_plan(seed, n_len):
    spec = random_tree(seed)
    bundle = construct(spec, n_len, "model4")
    plan = bundle.plan
    top = bundle[f"H_X{plan.root}|X{plan.partner}"]
    for vertex, kids in plan.children.items():
        widest = bundle[f"H_X{vertex}|X{plan.star_child[vertex]}"]
        for child in kids:
            assert bundle[f"H_X{vertex}|X{child}"].issubset(widest)
        assert widest.issubset(top)


@pytest.mark.slow
def test_secret_fraction_grows_with_block_length():
    spec = DbmsChain(p=0.05, q=0.2)
    rng = np.random.default_rng(29)
    slack = 0.01
    fractions = []
    for n_len in (256, 512, 1024):
        bob = mc_index_stats(spec, n_len, "X2", 4000, rng)
        eve = mc_index_stats(spec, n_len, "Z", 4000, rng)
        v_xz = eve.very_high_set(0.05)
        secret = v_xz - bob.high_set(1e-3)
        fractions.append((len(v_xz) / n_len, len(secret) / n_len))
    for (v_prev, s_prev), (v_next, s_next) in zip(fractions, fractions[1:]):
        assert v_next >= v_prev - slack
        assert s_next >= s_prev - slack
    assert fractions[-1][1] > 0

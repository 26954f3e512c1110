import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import CapacityError, StructuralError
from polar_core import BitBlock, IndexSet, polar_transform, polar_transform_array
from polarization import construct, exact_index_stats, mc_index_stats, symbol_model
from sc_codec import (
    FrozenMap,
    SymbolModel,
    _check_node,
    _variable_node,
    all_blocks,
    encoder_law,
    posterior_trace,
    posterior_trace_batch,
    sc_decode,
    sc_decode_batch,
    sc_stochastic_encode,
    sc_stochastic_encode_batch,
    sc_walk,
    side_symbols,
)
from sources import DbmsChain, TestChannel, joint_pmf, sample_array

BSC_011 = DbmsChain(p=0.11, z_present=False)


def bsc_model(p: float) -> SymbolModel:
    return symbol_model(DbmsChain(p=p, z_present=False), "X1", "X2")


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_check_node_is_exact_boxplus(a, b):
    expected = 2 * np.arctanh(np.tanh(a / 2) * np.tanh(b / 2))
    if np.isfinite(expected):
        assert _check_node(np.array(a), np.array(b)) == pytest.approx(expected, abs=1e-9)


def test_check_node_infinite_inputs():
    inf = np.inf
    assert _check_node(np.array(inf), np.array(3.0)) == pytest.approx(3.0)
    assert _check_node(np.array(-inf), np.array(3.0)) == pytest.approx(-3.0)
    assert _check_node(np.array(inf), np.array(-inf)) == -inf
    assert _check_node(np.array(0.0), np.array(5.0)) == 0.0


def test_variable_node_contradiction_is_neutral():
    out = _variable_node(np.array([np.inf, 1.0]), np.array([-np.inf, 2.0]), np.array([0, 1]))
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0)


def _prefix_llr_oracle(y: np.ndarray, prefix: np.ndarray, pair: np.ndarray) -> float:
    """log P(u_j = 0, u^{<j}, y) / P(u_j = 1, u^{<j}, y) by brute force"""
    n_len = len(y)
    j = len(prefix)
    mass = np.zeros(2)
    for u in itertools.product((0, 1), repeat=n_len):
        u = np.array(u, dtype=np.uint8)
        if not np.array_equal(u[:j], prefix):
            continue
        x = polar_transform_array(u)
        mass[u[j]] += np.prod(pair[x, y])
    return float(np.log(mass[0]) - np.log(mass[1]))


def test_sc_matches_sequential_map_exhaustively():
    n_len = 4
    model = symbol_model(BSC_011, "X1", "X2")
    pair = model.table()
    frozen = exact_index_stats(BSC_011, n_len, "X2").high_set(0.1)
    mask = frozen.mask()
    for x in itertools.product((0, 1), repeat=n_len):
        u_true = polar_transform_array(np.array(x, dtype=np.uint8))
        for y in itertools.product((0, 1), repeat=n_len):
            y = np.array(y, dtype=np.int64)
            leaves = {}

            def decide(j, leaf):
                leaves[j] = float(leaf)
                return u_true[j] if mask[j] else np.uint8(leaf < 0)

            u_hat = sc_walk(model.leaf_llr(y), decide)
            for j in range(n_len):
                assert leaves[j] == pytest.approx(_prefix_llr_oracle(y, u_hat[:j], pair), abs=1e-9)
            batch = sc_decode_batch(y, mask, u_true, model)
            assert np.array_equal(batch, u_hat)


def test_sc_decode_noiseless_recovers_block():
    model = bsc_model(0.0)
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 64, dtype=np.uint8)
    frozen = FrozenMap(n_total=64)
    assert sc_decode(BitBlock(x), frozen, model) == polar_transform(BitBlock(x))


def test_sc_decode_all_frozen_returns_frozen_word():
    u = BitBlock([1, 0, 1, 1, 0, 0, 1, 0])
    frozen = FrozenMap.from_block(u, IndexSet.full(8))
    assert sc_decode(BitBlock.zeros(8), frozen, bsc_model(0.3)) == u


def test_sc_decode_tie_goes_to_zero():
    # independent side information: every unfrozen LLR is exactly 0
    model = SymbolModel(pmf=[[0.25, 0.25], [0.25, 0.25]])
    assert sc_decode(BitBlock([1, 1, 0, 1]), FrozenMap(n_total=4), model) == BitBlock.zeros(4)


def test_sc_decode_rejects_wrong_side_length():
    with pytest.raises(StructuralError):
        sc_decode(np.zeros(8, dtype=np.uint8), FrozenMap(n_total=4), bsc_model(0.1))


def test_batched_decode_matches_single():
    rng = np.random.default_rng(4)
    model = bsc_model(0.1)
    mask = np.zeros(16, dtype=bool)
    mask[:6] = True
    y = rng.integers(0, 2, (10, 16))
    values = rng.integers(0, 2, (10, 16), dtype=np.uint8)
    batch = sc_decode_batch(y, mask, values, model)
    for row in range(10):
        frozen = FrozenMap.from_values(IndexSet.of(range(1, 7), 16), values[row, :6])
        assert sc_decode(y[row], frozen, model) == BitBlock(batch[row])


def test_posterior_trace_single_bit():
    model = bsc_model(0.2)
    p_one = posterior_trace_batch(np.array([1], dtype=np.uint8), np.array([0]), model)
    assert p_one[0] == pytest.approx(0.2)
    assert posterior_trace(BitBlock([1]), BitBlock([1]), model)[0] == pytest.approx(0.8)


def test_posterior_trace_is_a_probability():
    rng = np.random.default_rng(2)
    x = BitBlock(rng.integers(0, 2, 32, dtype=np.uint8))
    y = BitBlock(rng.integers(0, 2, 32, dtype=np.uint8))
    post = posterior_trace(x, y, bsc_model(0.15))
    assert post.shape == (32,)
    assert ((post >= 0) & (post <= 1)).all()


def test_side_symbols_combines_blocks():
    a, b = BitBlock([1, 0, 1, 0]), BitBlock([1, 1, 0, 0])
    assert list(side_symbols([a, b], 4)) == [3, 1, 2, 0]
    assert list(side_symbols(None, 4)) == [0, 0, 0, 0]


def test_symbol_model_validation():
    with pytest.raises(ValueError):
        SymbolModel(pmf=[[0.5, 0.5]])
    with pytest.raises(ValueError):
        SymbolModel(pmf=[[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        SymbolModel(pmf=[[1.0 / 34] * 17, [1.0 / 34] * 17])


def test_symbol_model_from_joint_and_prior():
    model = SymbolModel.from_joint(joint_pmf(DbmsChain(p_x=0.3, p=0.1, q=0.2)), 0, [2])
    assert model.side_symbols == 2
    assert model.prior().table()[:, 0] == pytest.approx([0.7, 0.3])
    assert model.prior_llr() == pytest.approx(np.log(0.7 / 0.3))


def test_llr_table_unreachable_symbol_is_neutral():
    model = SymbolModel(pmf=[[0.5, 0.0], [0.5, 0.0]])
    assert model.llr_table()[1] == 0.0


def test_frozen_map_validation():
    with pytest.raises(StructuralError):
        FrozenMap.from_values(IndexSet.of([1, 2], 4), [1])
    with pytest.raises(ValueError):
        FrozenMap(n_total=4, indices=(1,), bits=(2,))
    mask, values = FrozenMap(n_total=4, indices=(2, 4), bits=(1, 0)).dense()
    assert list(mask) == [False, True, False, True]
    assert list(values) == [0, 1, 0, 0]


def test_stochastic_encoder_copies_r_and_is_deterministic_given_rng():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(0.2))
    x = np.random.default_rng(0).integers(0, 2, (5, 8), dtype=np.uint8)
    v_ux = IndexSet.of([1, 3], 8)
    r = np.array([[1, 0]] * 5, dtype=np.uint8)
    first = sc_stochastic_encode_batch(x, r, IndexSet.full(8), v_ux, model, np.random.default_rng(9))
    again = sc_stochastic_encode_batch(x, r, IndexSet.full(8), v_ux, model, np.random.default_rng(9))
    assert np.array_equal(first, again)
    assert (first[:, 0] == 1).all() and (first[:, 2] == 0).all()
    with pytest.raises(StructuralError):
        sc_stochastic_encode_batch(x, r[:, :1], IndexSet.full(8), v_ux, model, np.random.default_rng(9))


def test_stochastic_encoder_identity_channel_is_the_transform():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.identity())
    x = np.random.default_rng(1).integers(0, 2, (4, 16), dtype=np.uint8)
    v = sc_stochastic_encode_batch(
        x, np.zeros((4, 0), dtype=np.uint8), IndexSet.full(16), IndexSet.empty(16), model, np.random.default_rng(0)
    )
    assert np.array_equal(v, polar_transform_array(x))


def test_encoder_law_rows_are_distributions():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(0.2))
    true_law, encoder = encoder_law(model, IndexSet.of([2, 4], 4), IndexSet.of([4], 4))
    assert true_law.shape == (16, 16)
    assert np.allclose(true_law.sum(axis=1), 1.0)
    assert np.allclose(encoder.sum(axis=1), 1.0)


def test_encoder_law_equals_true_law_when_everything_is_drawn():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(0.2))
    true_law, encoder = encoder_law(model, IndexSet.full(4), IndexSet.empty(4))
    assert np.allclose(true_law, encoder, atol=1e-12)


def test_encoder_law_true_law_is_the_block_channel():
    beta = 0.2
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(beta))
    true_law, _ = encoder_law(model, IndexSet.full(2), IndexSet.empty(2))
    blocks = all_blocks(2)
    u = polar_transform_array(blocks)
    for x_row, x in enumerate(blocks):
        for v_col in range(4):
            flips = int((u[v_col] ^ x).sum())
            assert true_law[x_row, v_col] == pytest.approx(beta**flips * (1 - beta) ** (2 - flips))


def test_encoder_samples_follow_encoder_law():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(0.25))
    h_u, v_ux = IndexSet.full(2), IndexSet.empty(2)
    _, encoder = encoder_law(model, h_u, v_ux)
    trials = 20000
    x = np.tile(np.array([[1, 0]], dtype=np.uint8), (trials, 1))
    v = sc_stochastic_encode_batch(x, np.zeros((trials, 0), dtype=np.uint8), h_u, v_ux, model, np.random.default_rng(3))
    codes = v[:, 0] * 2 + v[:, 1]
    freq = np.bincount(codes, minlength=4) / trials
    assert freq == pytest.approx(encoder[2], abs=0.015)


def test_encoder_law_budget():
    model = symbol_model(DbmsChain(p=0.1), "U", "X1", TestChannel.bsc(0.2))
    with pytest.raises(CapacityError):
        encoder_law(model, IndexSet.full(16), IndexSet.empty(16))


def test_single_block_encoder_uses_bundle_sets():
    spec = DbmsChain(p=0.0, q=0.5)
    channel = TestChannel.identity()
    sets = construct(spec, 8, "model2", channel=channel)
    model = symbol_model(spec, "U", "X1", channel)
    x = BitBlock([1, 0, 0, 1, 1, 1, 0, 1])
    assert len(sets["V_U|X"]) == 0
    assert sc_stochastic_encode(x, [], sets, model, np.random.default_rng(5)) == polar_transform(x)


@pytest.mark.slow
def test_freezing_more_true_bits_never_hurts():
    n_len, trials = 256, 10_000
    spec = DbmsChain(p=0.11, z_present=False)
    rng = np.random.default_rng(17)
    order = np.argsort(-mc_index_stats(spec, n_len, "X2", 2000, rng).h_array(), kind="stable")
    small = np.zeros(n_len, dtype=bool)
    small[order[:128]] = True
    large = small.copy()
    large[order[128:150]] = True

    bits = sample_array(joint_pmf(spec), n_len, rng, trials)
    x, y = bits[:, 0], bits[:, 1].astype(np.int64)
    u = polar_transform_array(x)
    model = symbol_model(spec, "X1", "X2")
    fail_small = (sc_decode_batch(y, small, u, model) != u).any(axis=1)
    fail_large = (sc_decode_batch(y, large, u, model) != u).any(axis=1)

    # an SC path that succeeds keeps succeeding when a correct decision is frozen
    assert not (fail_large & ~fail_small).any()
    p_small, p_large = fail_small.mean(), fail_large.mean()
    sigma = np.sqrt(p_small * (1 - p_small) / trials)
    assert p_large <= p_small + 2 * sigma
    assert p_small > 0

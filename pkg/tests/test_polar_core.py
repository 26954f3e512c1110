import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import StructuralError
from polar_core import BitBlock, IndexSet, extract, polar_transform, polar_transform_array, scatter, xor_pad
from utils import bits_to_hex, hex_to_bits


def blocks(max_exponent: int = 6):
    return st.integers(0, max_exponent).flatmap(
        lambda m: st.lists(st.integers(0, 1), min_size=2**m, max_size=2**m)
    )


def index_sets(n_total: int):
    return st.sets(st.integers(1, n_total)).map(lambda s: IndexSet.of(s, n_total))


def test_transform_n2():
    assert polar_transform(BitBlock([1, 0])) == BitBlock([1, 0])
    assert polar_transform(BitBlock([0, 1])) == BitBlock([1, 1])
    assert polar_transform(BitBlock([1, 1])) == BitBlock([0, 1])


def test_transform_n4_natural_order():
    # u = x F^{(x)2}: u1 = x1+x2+x3+x4, u2 = x2+x4, u3 = x3+x4, u4 = x4
    assert polar_transform(BitBlock([0, 0, 0, 1])) == BitBlock([1, 1, 1, 1])
    assert polar_transform(BitBlock([1, 0, 0, 0])) == BitBlock([1, 0, 0, 0])
    assert polar_transform(BitBlock([0, 1, 1, 0])) == BitBlock([0, 1, 1, 0])


@pytest.mark.parametrize("n_len", [1, 2, 4, 8, 16])
def test_involution_and_linearity_exhaustive(n_len):
    all_x = np.array(list(itertools.product((0, 1), repeat=n_len)), dtype=np.uint8)
    u = polar_transform_array(all_x)
    assert np.array_equal(polar_transform_array(u), all_x)
    shifted = np.roll(all_x, 1, axis=0)
    assert np.array_equal(polar_transform_array(all_x ^ shifted), u ^ polar_transform_array(shifted))


def test_involution_random_large():
    rng = np.random.default_rng(7)
    x = rng.integers(0, 2, (1000, 2**14), dtype=np.uint8)
    assert np.array_equal(polar_transform_array(polar_transform_array(x)), x)


@given(blocks())
def test_involution_property(bits):
    x = BitBlock(bits)
    assert polar_transform(polar_transform(x)) == x


@given(blocks(5), blocks(5))
def test_linearity_property(a, b):
    if len(a) != len(b):
        return
    x, y = BitBlock(a), BitBlock(b)
    assert polar_transform(x ^ y) == polar_transform(x) ^ polar_transform(y)


def test_non_power_of_two_rejected():
    with pytest.raises(StructuralError):
        BitBlock([0, 1, 1])
    with pytest.raises(StructuralError):
        polar_transform_array(np.zeros(6, dtype=np.uint8))


def test_single_bit_is_identity():
    assert polar_transform(BitBlock([1])) == BitBlock([1])


@given(st.data())
def test_extract_scatter_round_trip(data):
    n_total = 2 ** data.draw(st.integers(0, 5))
    u = BitBlock(data.draw(st.lists(st.integers(0, 1), min_size=n_total, max_size=n_total)))
    s = data.draw(index_sets(n_total))
    assert scatter(u, s, extract(u, s)) == u
    values = data.draw(st.lists(st.integers(0, 1), min_size=len(s), max_size=len(s)))
    assert list(extract(scatter(u, s, values), s)) == values


def test_extract_is_ascending():
    u = BitBlock([1, 0, 0, 1, 1, 1, 0, 0])
    s = IndexSet.of([5, 1, 4], 8)
    assert s.indices == (1, 4, 5)
    assert list(extract(u, s)) == [1, 1, 1]


def test_extract_empty_set():
    assert extract(BitBlock([1, 0]), IndexSet.empty(2)).size == 0


def test_scatter_length_mismatch():
    with pytest.raises(StructuralError):
        scatter(BitBlock([0, 0, 0, 0]), IndexSet.of([1, 2], 4), [1])


def test_extract_frame_mismatch():
    with pytest.raises(StructuralError):
        extract(BitBlock([0, 0, 0, 0]), IndexSet.of([1], 8))


def test_index_set_validation():
    with pytest.raises(ValueError):
        IndexSet(indices=(3, 2), n_total=4)
    with pytest.raises(ValueError):
        IndexSet(indices=(5,), n_total=4)
    with pytest.raises(ValueError):
        IndexSet(indices=(), n_total=6)


def test_index_set_algebra():
    a = IndexSet.of([1, 2, 3], 8)
    b = IndexSet.of([3, 4], 8)
    assert (a | b).indices == (1, 2, 3, 4)
    assert (a & b).indices == (3,)
    assert (a - b).indices == (1, 2)
    assert len(a.complement()) == 5
    assert (a & b).issubset(a)
    assert 2 in a and 4 not in a
    assert IndexSet.from_mask(a.mask()) == a
    with pytest.raises(StructuralError):
        a | IndexSet.of([1], 4)


def test_index_set_json_round_trip():
    s = IndexSet.of([2, 7], 8)
    assert IndexSet.model_validate_json(s.model_dump_json()) == s


def test_hex_wire_format():
    assert BitBlock([1, 0, 0, 0]).to_hex() == "80"
    assert BitBlock([0] * 15 + [1]).to_hex() == "0001"
    assert bits_to_hex(np.zeros(0, dtype=np.uint8)) == ""
    assert list(hex_to_bits("a0", 4)) == [1, 0, 1, 0]
    with pytest.raises(StructuralError):
        hex_to_bits("zz", 8)
    with pytest.raises(StructuralError):
        hex_to_bits("00ff", 8)


@given(blocks(6))
def test_hex_round_trip(bits):
    x = BitBlock(bits)
    assert BitBlock.from_hex(x.to_hex(), len(x)) == x


def test_xor_pad():
    assert list(xor_pad([1, 0, 1], [1, 1, 0])) == [0, 1, 1]
    with pytest.raises(StructuralError):
        xor_pad([1], [1, 0])

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lossless_fedrec.sharing import (
    N_LIMBS,
    ShareVec,
    decode,
    decode_limbs,
    encode,
    encode_limbs,
    reconstruct,
    ring_add,
    ring_sub,
    split_limbs,
    split_share,
    sum_shares,
)

doubles = st.floats(allow_nan=False, allow_infinity=False, width=64)
moderate = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.integers(0, 12), elements=doubles))
def test_encode_decode_exact(v):
    assert np.array_equal(decode_limbs(encode_limbs(v)), v)


def test_special_values():
    v = np.array([0.0, -0.0, 5e-324, -5e-324, 2.2250738585072014e-308, 1.7976931348623157e308])
    out = decode_limbs(encode_limbs(v))
    assert out.tolist() == [0.0, 0.0, 5e-324, -5e-324, 2.2250738585072014e-308, 1.7976931348623157e308]
    with pytest.raises(ValueError):
        encode_limbs(np.array([np.nan]))
    with pytest.raises(ValueError):
        encode_limbs(np.array([np.inf]))


@given(arrays(np.float64, 6, elements=doubles), st.integers(0, 2**32))
def test_split_reconstructs(v, seed):
    pair = split_share(np.random.default_rng(seed), v)
    assert np.array_equal(reconstruct(pair.share_a, pair.share_b), v)


@given(st.lists(arrays(np.float64, 4, elements=moderate), min_size=1, max_size=6))
def test_sum_is_correctly_rounded_exact_sum(vectors):
    total = decode(sum_shares([encode(v) for v in vectors]))
    for k in range(4):
        exact = sum((Fraction(float(v[k])) for v in vectors), Fraction(0))
        assert total[k] == float(exact)


@given(st.lists(arrays(np.float64, 3, elements=moderate), min_size=2, max_size=5), st.integers(0, 1000))
def test_masked_sum_independent_of_masks(vectors, seed):
    rng = np.random.default_rng(seed)
    shares = []
    for v in vectors:
        pair = split_share(rng, v)
        shares.extend([pair.share_a, pair.share_b])
    plain = decode(sum_shares([encode(v) for v in vectors]))
    assert np.array_equal(decode(sum_shares(shares)), plain)


def test_ring_ops_inverse():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2**32, size=(3, N_LIMBS), dtype=np.uint32)
    b = rng.integers(0, 2**32, size=(3, N_LIMBS), dtype=np.uint32)
    assert np.array_equal(ring_sub(ring_add(a, b), b), a)
    with pytest.raises(ValueError, match="dimension mismatch"):
        ring_add(a, b[:2])


def test_mask_looks_uniform():
    _, comp = split_limbs(np.random.default_rng(1), np.zeros(2000))
    # complements of zero are negated uniform masks: the top limb is spread out
    top = comp[:, -1].astype(np.float64) / 2**32
    assert 0.45 < top.mean() < 0.55


def test_share_bytes_roundtrip():
    s = encode(np.array([1.5, -2.0]))
    assert ShareVec.from_bytes(s.to_bytes()) == s
    with pytest.raises(ValueError):
        ShareVec.from_bytes(b"\x00" * 7)


def test_ten_thousand_vectors():
    rng = np.random.default_rng(123)
    v = rng.normal(size=(10_000, 8)) * np.exp(rng.uniform(-30, 30, size=(10_000, 1)))
    mask, comp = split_limbs(rng, v)
    assert np.array_equal(decode_limbs(ring_add(mask, comp)), v)

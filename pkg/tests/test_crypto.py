import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossless_fedrec.crypto import (
    TAG_BYTES,
    CryptoContext,
    CryptoError,
    TransparentCrypto,
    deserialize_matrix,
    deserialize_vec,
    make_crypto,
    make_nonce,
    serialize_matrix,
    serialize_vec,
)

MODES = ["real", "transparent"]


def rng(k=0):
    return np.random.default_rng(k)


@pytest.mark.parametrize("mode", MODES)
def test_public_key_roundtrip(mode):
    c = make_crypto(mode)
    kp = c.gen_keypair(rng(1))
    secret = c.new_shared_key(rng(2))
    ct = c.pk_encrypt(kp.public, secret, rng(3))
    assert c.pk_decrypt(kp, ct, "client0") == secret
    assert c.access["client0", "pk_decrypt"] == 1


@pytest.mark.parametrize("mode", MODES)
def test_public_key_wrong_recipient(mode):
    c = make_crypto(mode)
    alice, bob = c.gen_keypair(rng(1)), c.gen_keypair(rng(2))
    ct = c.pk_encrypt(alice.public, b"k" * 32, rng(3))
    with pytest.raises(CryptoError):
        c.pk_decrypt(bob, ct, "client1")


@pytest.mark.parametrize("mode", MODES)
def test_keys_deterministic_per_seed(mode):
    c = make_crypto(mode)
    assert c.gen_keypair(rng(5)).public == c.gen_keypair(rng(5)).public
    assert c.new_shared_key(rng(5)) != c.new_shared_key(rng(6))


@pytest.mark.parametrize("mode", MODES)
def test_symmetric_roundtrip_and_tamper(mode):
    c = make_crypto(mode)
    key = c.new_shared_key(rng(0))
    ct = c.sym_encrypt(key, b"payload", make_nonce(1, 0))
    assert c.sym_decrypt(key, ct, "client1") == b"payload"
    bad = bytearray(ct)
    bad[-1] ^= 1
    with pytest.raises(CryptoError, match="tampered"):
        c.sym_decrypt(key, bytes(bad), "client1")
    other = c.new_shared_key(rng(1))
    with pytest.raises(CryptoError):
        c.sym_decrypt(other, ct, "client1")


@pytest.mark.parametrize("mode", MODES)
def test_batch_matches_single(mode):
    c = make_crypto(mode)
    key = c.new_shared_key(rng(0))
    payloads = [bytes([k]) * (k + 1) for k in range(5)]
    nonces = [make_nonce(3, k) for k in range(5)]
    batch = c.sym_encrypt_many(key, payloads, nonces)
    assert batch == [c.sym_encrypt(key, p, n) for p, n in zip(payloads, nonces)]
    assert c.sym_decrypt_many(key, batch, "client3") == payloads
    assert c.access["client3", "sym_decrypt"] == 5


@pytest.mark.parametrize("mode", MODES)
def test_tags(mode):
    c = make_crypto(mode)
    k1, k2 = c.new_shared_key(rng(0)), c.new_shared_key(rng(1))
    t = c.prf_tag(k1, 42, "client0")
    assert len(t) == TAG_BYTES
    assert t == c.prf_tag(k1, 42)
    assert t != c.prf_tag(k1, 43)
    assert t != c.prf_tag(k2, 42)
    assert c.prf_tags(k1, [41, 42]) == [c.prf_tag(k1, 41), t]


@given(st.lists(st.integers(0, 10**6), unique=True, max_size=50))
def test_tags_injective(ids):
    c = make_crypto("real")
    key = bytes(range(32))
    assert len(set(c.prf_tags(key, ids))) == len(ids)


def test_transparent_reveals_tags_to_auditor():
    c = TransparentCrypto()
    key = c.new_shared_key(rng(0))
    assert c.reveal_tag(c.prf_tag(key, 9)) == 9
    ct = c.sym_encrypt(key, b"abc", make_nonce(0, 0))
    assert TransparentCrypto.peek(ct) == b"abc"


def test_context_nonces_unique_and_counted():
    c = make_crypto("real")
    ctx = CryptoContext(c, "client4", 4)
    with pytest.raises(CryptoError):
        ctx.encrypt(b"x")
    ctx.shared_key = c.new_shared_key(rng(0))
    cts = ctx.encrypt_many([b"a", b"b"]) + [ctx.encrypt(b"c")]
    nonces = {ct[:12] for ct in cts}
    assert len(nonces) == 3
    assert ctx.decrypt_many(cts) == [b"a", b"b", b"c"]
    assert c.access["client4", "sym_decrypt"] == 3


def test_unknown_mode():
    with pytest.raises(ValueError):
        make_crypto("rot13")


@given(st.lists(st.floats(allow_nan=False), max_size=20))
def test_vector_serialization_roundtrip(values):
    v = np.array(values, dtype=np.float64)
    assert np.array_equal(deserialize_vec(serialize_vec(v)), v)


def test_matrix_serialization():
    m = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(deserialize_matrix(serialize_matrix(m)), m)
    with pytest.raises(ValueError):
        deserialize_matrix(serialize_matrix(m)[:-1])
    with pytest.raises(ValueError):
        deserialize_vec(b"\x01")

"""Two-party additive secret sharing of float64 vectors, exact.

Every finite double is an integer multiple of ``2**-1074`` and below
``2**1024`` in magnitude, so ``x * 2**1074`` is an integer of at most 2098
bits. Entries are shared as such integers modulo ``2**2176``: the mask is
uniform over the ring (perfect hiding), and reconstruction or any sum of
fewer than ``2**77`` shared values is exact. Decoding rounds the exact
integer result once, so a two-term sum decodes to the same double as
``a + b``.

Ring elements are stored as 68 little-endian uint32 limbs; the last axis
of every limb array is the limb axis.
"""

from __future__ import annotations

import math

from dataclasses import dataclass

import numba
import numpy as np

FRAC_BITS = 1074
LIMB_BITS = 32
N_LIMBS = 68
RING_BITS = LIMB_BITS * N_LIMBS
SLOT_BYTES = RING_BITS // 8
_SCALE = 1 << FRAC_BITS
_MODULUS = 1 << RING_BITS
_HALF = 1 << (RING_BITS - 1)


@numba.njit(cache=True)
def _encode_kernel(mant, shift, neg, out):
    full = np.uint64(0xFFFFFFFF)
    for r in range(mant.shape[0]):
        m = np.uint64(mant[r])
        if m == 0:
            continue
        j0 = shift[r] // 32
        o = np.uint64(shift[r] % 32)
        if neg[r]:
            m = m - np.uint64(1)
        w0 = (m << o) & full
        hi = m >> (np.uint64(32) - o)
        w1 = hi & full
        w2 = hi >> np.uint64(32)
        if neg[r]:
            # complement of (|x| - 1); limbs below j0 stay zero
            w0 = ~(w0 | ((np.uint64(1) << o) - np.uint64(1))) & full
            w1 = ~w1 & full
            w2 = ~w2 & full
            for j in range(j0 + 3, out.shape[1]):
                out[r, j] = 0xFFFFFFFF
        out[r, j0] = w0
        out[r, j0 + 1] = w1
        out[r, j0 + 2] = w2


@numba.njit(cache=True)
def _sub_kernel(a, b, out):
    for r in range(a.shape[0]):
        borrow = np.int64(0)
        for j in range(a.shape[1]):
            t = np.int64(a[r, j]) - np.int64(b[r, j]) - borrow
            if t < 0:
                t += np.int64(1) << 32
                borrow = 1
            else:
                borrow = 0
            out[r, j] = t


@numba.njit(cache=True)
def _add_kernel(a, b, out):
    for r in range(a.shape[0]):
        carry = np.uint64(0)
        for j in range(a.shape[1]):
            t = np.uint64(a[r, j]) + np.uint64(b[r, j]) + carry
            out[r, j] = t & np.uint64(0xFFFFFFFF)
            carry = t >> np.uint64(32)


def _rows(limbs: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(limbs, dtype=np.uint32).reshape(-1, N_LIMBS)


def ring_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    out = np.empty(a.shape, dtype=np.uint32)
    _add_kernel(_rows(a), _rows(b), out.reshape(-1, N_LIMBS))
    return out


def ring_sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    out = np.empty(a.shape, dtype=np.uint32)
    _sub_kernel(_rows(a), _rows(b), out.reshape(-1, N_LIMBS))
    return out


def encode_limbs(v: np.ndarray) -> np.ndarray:
    """Ring encoding of ``v * 2**1074``; output shape ``v.shape + (N_LIMBS,)``."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot share non-finite values")
    flat = v.reshape(-1)
    mant, exp = np.frexp(np.abs(flat))
    m = (mant * 2.0**53).astype(np.int64)
    shift = exp.astype(np.int64) - 53 + FRAC_BITS
    sub = shift < 0
    if sub.any():
        # subnormals: the mantissa carries trailing zeros, drop them exactly
        m[sub] >>= -shift[sub]
        shift[sub] = 0
    out = np.zeros((flat.size, N_LIMBS), dtype=np.uint32)
    _encode_kernel(m, shift, flat < 0, out)
    return out.reshape(v.shape + (N_LIMBS,))


def decode_limbs(limbs: np.ndarray) -> np.ndarray:
    """Correctly rounded doubles of ring elements (signed interpretation); overflow gives +-inf."""
    limbs = np.asarray(limbs, dtype=np.uint32)
    shape = limbs.shape[:-1]
    raw = limbs.astype("<u4").tobytes()
    count = len(raw) // SLOT_BYTES
    out = np.empty(count)
    for k in range(count):
        x = int.from_bytes(raw[k * SLOT_BYTES : (k + 1) * SLOT_BYTES], "little")
        if x >= _HALF:
            x -= _MODULUS
        try:
            out[k] = x / _SCALE
        except OverflowError:
            # beyond the largest double: round to infinity like float arithmetic
            out[k] = math.inf if x > 0 else -math.inf
    return out.reshape(shape)


def random_limbs(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform ring elements of the given shape."""
    return rng.integers(0, 1 << LIMB_BITS, size=(*shape, N_LIMBS), dtype=np.uint32)


def split_limbs(rng: np.random.Generator, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every entry of ``vectors`` into ``(mask, complement)`` limb arrays."""
    vectors = np.asarray(vectors, dtype=np.float64)
    enc = encode_limbs(vectors)
    mask = random_limbs(rng, vectors.shape)
    return mask, ring_sub(enc, mask)


@dataclass(frozen=True, eq=False)
class ShareVec:
    """One share, or a sum of shares, of a vector: ``(dim, N_LIMBS)`` limbs."""

    limbs: np.ndarray

    @property
    def dim(self) -> int:
        return self.limbs.shape[0]

    def __add__(self, other: "ShareVec") -> "ShareVec":
        return ShareVec(ring_add(self.limbs, other.limbs))

    def __eq__(self, other) -> bool:
        return isinstance(other, ShareVec) and np.array_equal(self.limbs, other.limbs)

    def to_bytes(self) -> bytes:
        return self.limbs.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ShareVec":
        if len(data) % SLOT_BYTES:
            raise ValueError("malformed share")
        return cls(np.frombuffer(data, dtype="<u4").astype(np.uint32).reshape(-1, N_LIMBS))


@dataclass(frozen=True)
class SharePair:
    share_a: ShareVec
    share_b: ShareVec


def encode(v: np.ndarray) -> ShareVec:
    return ShareVec(encode_limbs(np.asarray(v, dtype=np.float64).reshape(-1)))


def decode(share: ShareVec) -> np.ndarray:
    return decode_limbs(share.limbs)


def split_share(rng: np.random.Generator, v: np.ndarray) -> SharePair:
    """Split ``v`` into a uniform mask and its complement, ``mask + rest == v``."""
    mask, rest = split_limbs(rng, np.asarray(v, dtype=np.float64).reshape(-1))
    return SharePair(share_a=ShareVec(mask), share_b=ShareVec(rest))


def sum_shares(shares: list[ShareVec]) -> ShareVec:
    total = shares[0]
    for s in shares[1:]:
        total = total + s
    return total


def reconstruct(*shares: ShareVec) -> np.ndarray:
    return decode(sum_shares(list(shares)))

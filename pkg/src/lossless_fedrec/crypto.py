"""Key exchange, deterministic item tags and the payload cipher.

Two interchangeable providers:

* :class:`RealCrypto` uses X25519 + HKDF + AES-GCM for the key bootstrap,
  HMAC-SHA256 for item tags and AES-256-GCM for payloads.
* :class:`TransparentCrypto` keeps payloads readable inside the ciphertext.

Both count every decryption and tagging call per principal in ``access``;
protocol tests use the counts to check who read what.

Keys and nonces are derived from caller-supplied generators so whole runs
replay deterministically.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import struct
import threading
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

TAG_BYTES = 16
KEY_BYTES = 32
NONCE_BYTES = 12
_ID = struct.Struct(">Q")
_CHECK = struct.Struct("<I")
_NONCE = struct.Struct(">IQ")


class CryptoError(Exception):
    pass


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes = field(repr=False)


def make_nonce(sender: int, counter: int) -> bytes:
    return _NONCE.pack(sender & 0xFFFFFFFF, counter)


class _AccessLog:
    """Thread-safe per-(principal, operation) counters."""

    def __init__(self):
        self.access: Counter[tuple[str, str]] = Counter()
        self._lock = threading.Lock()

    def _count(self, principal: str, op: str, n: int = 1) -> None:
        with self._lock:
            self.access[principal, op] += n


class RealCrypto(_AccessLog):
    name = "real"

    def __init__(self):
        super().__init__()
        self._aead: dict[bytes, AESGCM] = {}
        self._mac: dict[bytes, "hmac.HMAC"] = {}

    def _cipher(self, key: bytes) -> AESGCM:
        aead = self._aead.get(key)
        if aead is None:
            aead = self._aead[key] = AESGCM(key)
        return aead

    def gen_keypair(self, rng: np.random.Generator) -> KeyPair:
        sk = X25519PrivateKey.from_private_bytes(rng.bytes(32))
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(public=pk, private=_raw_private(sk))

    def new_shared_key(self, rng: np.random.Generator) -> bytes:
        return rng.bytes(KEY_BYTES)

    def pk_encrypt(self, public: bytes, message: bytes, rng: np.random.Generator) -> bytes:
        eph = X25519PrivateKey.from_private_bytes(rng.bytes(32))
        eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        key = _hkdf(eph.exchange(X25519PublicKey.from_public_bytes(public)), eph_pub + public)
        return eph_pub + AESGCM(key).encrypt(bytes(NONCE_BYTES), message, eph_pub)

    def pk_decrypt(self, keypair: KeyPair, ciphertext: bytes, principal: str) -> bytes:
        self._count(principal, "pk_decrypt")
        if len(ciphertext) < 32 + 16:
            raise CryptoError("truncated ciphertext")
        eph_pub, body = ciphertext[:32], ciphertext[32:]
        sk = X25519PrivateKey.from_private_bytes(keypair.private)
        key = _hkdf(sk.exchange(X25519PublicKey.from_public_bytes(eph_pub)), eph_pub + keypair.public)
        try:
            return AESGCM(key).decrypt(bytes(NONCE_BYTES), body, eph_pub)
        except InvalidTag as exc:
            raise CryptoError("wrong private key or tampered ciphertext") from exc

    def prf_tag(self, key: bytes, item_id: int, principal: str = "") -> bytes:
        return self.prf_tags(key, [item_id], principal)[0]

    def prf_tags(self, key: bytes, item_ids, principal: str = "") -> list[bytes]:
        base = self._mac.get(key)
        if base is None:
            base = self._mac[key] = hmac.new(key, digestmod=hashlib.sha256)
        out = []
        for item_id in item_ids:
            mac = base.copy()
            mac.update(_ID.pack(item_id))
            out.append(mac.digest()[:TAG_BYTES])
        self._count(principal, "prf_tag", len(out))
        return out

    def sym_encrypt(self, key: bytes, payload: bytes, nonce: bytes) -> bytes:
        return nonce + self._cipher(key).encrypt(nonce, payload, None)

    def sym_encrypt_many(self, key: bytes, payloads, nonces) -> list[bytes]:
        enc = self._cipher(key).encrypt
        return [nonce + enc(nonce, payload, None) for payload, nonce in zip(payloads, nonces)]

    def sym_decrypt(self, key: bytes, ciphertext: bytes, principal: str) -> bytes:
        return self.sym_decrypt_many(key, [ciphertext], principal)[0]

    def sym_decrypt_many(self, key: bytes, ciphertexts, principal: str) -> list[bytes]:
        dec = self._cipher(key).decrypt
        self._count(principal, "sym_decrypt", len(ciphertexts))
        try:
            return [dec(ct[:NONCE_BYTES], ct[NONCE_BYTES:], None) for ct in ciphertexts]
        except (InvalidTag, ValueError) as exc:
            raise CryptoError("tampered ciphertext") from exc


def _raw_private(sk: X25519PrivateKey) -> bytes:
    return sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def _hkdf(secret: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None, info=info).derive(secret)


class TransparentCrypto(_AccessLog):
    """Readable stand-in for :class:`RealCrypto` with an access log.

    Ciphertexts still bind the key: decrypting with another key, or after a
    byte flip, raises :class:`CryptoError`. Tags are keyed hashes so they
    carry no readable item id; :meth:`reveal_tag` maps them back for tests.
    """

    name = "transparent"
    _PK = b"TPK1"
    _SYM = b"TSY1"

    def __init__(self):
        super().__init__()
        self._tags: dict[bytes, int] = {}

    def gen_keypair(self, rng: np.random.Generator) -> KeyPair:
        private = rng.bytes(16)
        return KeyPair(public=b"PB" + _fp(private), private=private)

    def new_shared_key(self, rng: np.random.Generator) -> bytes:
        return rng.bytes(KEY_BYTES)

    def pk_encrypt(self, public: bytes, message: bytes, rng: np.random.Generator) -> bytes:
        return self._PK + public + message

    def pk_decrypt(self, keypair: KeyPair, ciphertext: bytes, principal: str) -> bytes:
        self._count(principal, "pk_decrypt")
        head = self._PK + keypair.public
        if not ciphertext.startswith(head):
            raise CryptoError("wrong private key or tampered ciphertext")
        return ciphertext[len(head) :]

    def prf_tag(self, key: bytes, item_id: int, principal: str = "") -> bytes:
        return self.prf_tags(key, [item_id], principal)[0]

    def prf_tags(self, key: bytes, item_ids, principal: str = "") -> list[bytes]:
        out = []
        for item_id in item_ids:
            tag = hashlib.sha256(key + _ID.pack(item_id)).digest()[:TAG_BYTES]
            self._tags[tag] = item_id
            out.append(tag)
        self._count(principal, "prf_tag", len(out))
        return out

    def reveal_tag(self, tag: bytes) -> int:
        return self._tags[tag]

    def sym_encrypt(self, key: bytes, payload: bytes, nonce: bytes) -> bytes:
        return self.sym_encrypt_many(key, [payload], [nonce])[0]

    def sym_encrypt_many(self, key: bytes, payloads, nonces) -> list[bytes]:
        head = self._SYM
        fp = _fp(key)
        seed = zlib.crc32(key)
        crc = zlib.crc32
        return [
            head + nonce + fp + _CHECK.pack(crc(payload, crc(nonce, seed))) + payload
            for payload, nonce in zip(payloads, nonces)
        ]

    def sym_decrypt(self, key: bytes, ciphertext: bytes, principal: str) -> bytes:
        return self.sym_decrypt_many(key, [ciphertext], principal)[0]

    def sym_decrypt_many(self, key: bytes, ciphertexts, principal: str) -> list[bytes]:
        self._count(principal, "sym_decrypt", len(ciphertexts))
        head = len(self._SYM)
        fp = _fp(key)
        seed = zlib.crc32(key)
        crc = zlib.crc32
        out = []
        for ct in ciphertexts:
            nonce = ct[head : head + NONCE_BYTES]
            (check,) = _CHECK.unpack_from(ct, head + NONCE_BYTES + 8) if len(ct) >= head + NONCE_BYTES + 12 else (None,)
            payload = ct[head + NONCE_BYTES + 12 :]
            if (
                check is None
                or not ct.startswith(self._SYM)
                or ct[head + NONCE_BYTES : head + NONCE_BYTES + 8] != fp
                or check != crc(payload, crc(nonce, seed))
            ):
                raise CryptoError("tampered ciphertext")
            out.append(payload)
        return out

    @staticmethod
    def peek(ciphertext: bytes) -> bytes:
        """Payload of a transparent ciphertext without a key (test helper)."""
        return ciphertext[len(TransparentCrypto._SYM) + NONCE_BYTES + 12 :]


@functools.lru_cache(maxsize=64)
def _fp(key: bytes) -> bytes:
    return hashlib.sha256(b"fp" + key).digest()[:8]


def make_crypto(mode: str) -> RealCrypto | TransparentCrypto:
    if mode == "real":
        return RealCrypto()
    if mode == "transparent":
        return TransparentCrypto()
    raise ValueError(f"unknown crypto mode {mode!r}")


class CryptoContext:
    """One principal's view of the provider: identity, keys and nonce counter."""

    def __init__(self, provider, principal: str, sender_id: int):
        self.provider = provider
        self.principal = principal
        self.sender_id = sender_id
        self._counter = 0
        self.keypair: KeyPair | None = None
        self.shared_key: bytes | None = None

    def _key(self) -> bytes:
        if self.shared_key is None:
            raise CryptoError("no shared key")
        return self.shared_key

    def encrypt(self, payload: bytes) -> bytes:
        return self.encrypt_many([payload])[0]

    def encrypt_many(self, payloads) -> list[bytes]:
        """Encrypt under fresh consecutive nonces."""
        key = self._key()
        start = self._counter
        self._counter += len(payloads)
        sender = self.sender_id & 0xFFFFFFFF
        nonces = [_NONCE.pack(sender, c) for c in range(start, self._counter)]
        return self.provider.sym_encrypt_many(key, payloads, nonces)

    def decrypt(self, ciphertext: bytes) -> bytes:
        return self.provider.sym_decrypt(self._key(), ciphertext, self.principal)

    def decrypt_many(self, ciphertexts) -> list[bytes]:
        return self.provider.sym_decrypt_many(self._key(), ciphertexts, self.principal)

    def tag(self, item_id: int) -> bytes:
        return self.provider.prf_tag(self._key(), item_id, self.principal)

    def tags(self, item_ids) -> list[bytes]:
        return self.provider.prf_tags(self._key(), item_ids, self.principal)


_LEN = struct.Struct("<I")


def serialize_vec(v: np.ndarray) -> bytes:
    """Length-prefixed little-endian float64 encoding."""
    arr = np.ascontiguousarray(v, dtype="<f8").reshape(-1)
    return _LEN.pack(arr.size) + arr.tobytes()


def deserialize_vec(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise ValueError("malformed vector: missing length")
    (n,) = _LEN.unpack_from(data)
    if len(data) != 4 + 8 * n:
        raise ValueError(f"malformed vector: length {n} but {len(data) - 4} payload bytes")
    return np.frombuffer(data, dtype="<f8", offset=4).astype(np.float64)


def serialize_matrix(m: np.ndarray) -> bytes:
    m = np.atleast_2d(m)
    return struct.pack("<II", *m.shape) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def deserialize_matrix(data: bytes) -> np.ndarray:
    rows, cols = struct.unpack_from("<II", data)
    if len(data) != 8 + 8 * rows * cols:
        raise ValueError("malformed matrix")
    return np.frombuffer(data, dtype="<f8", offset=8).reshape(rows, cols).astype(np.float64)

"""Typed protocol messages, envelopes and the binary frame codec.

A message body is a small frozen dataclass. ``FIELD_KINDS`` declares what
each field carries (a user id, an item tag, a ciphertext, ...); the
transcript renderer and the privacy audit both work from these kinds, so
a field holding a raw item id cannot slip through unnoticed.

Frames on the wire are ``len:u32 | round:u32 | type:u8 | sender:u32 |
payload`` with the payload a TLV encoding of ``(recipient, seq, *fields)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

SERVER = 2**32 - 1

# what a field may hold, as seen by anyone on the wire
KIND_ID = "id"
KIND_COUNT = "count"
KIND_TAG = "tag"
KIND_CIPHERTEXT = "ciphertext"
KIND_PUBLIC_KEY = "public_key"
KIND_MASKED = "masked"
KIND_AGGREGATE = "aggregate"
ALLOWED_KINDS = frozenset(
    {KIND_ID, KIND_COUNT, KIND_TAG, KIND_CIPHERTEXT, KIND_PUBLIC_KEY, KIND_MASKED, KIND_AGGREGATE}
)


class Envelope(NamedTuple):
    """Routing header plus body. Tuple order makes the natural sort (round, sender, seq)."""

    round: int
    sender: int
    seq: int
    recipient: int
    body: object


@dataclass(frozen=True, slots=True)
class PubKeyUpload:
    public: bytes
    FIELD_KINDS = {"public": KIND_PUBLIC_KEY}


@dataclass(frozen=True, slots=True)
class PubKeyBundle:
    """Server to the chosen client: every enrolled public key."""

    keys: tuple  # ((user, public), ...)
    FIELD_KINDS = {"keys": (KIND_ID, KIND_PUBLIC_KEY)}


@dataclass(frozen=True, slots=True)
class SharedKeyCipher:
    target: int
    ciphertext: bytes
    FIELD_KINDS = {"target": KIND_ID, "ciphertext": KIND_CIPHERTEXT}


@dataclass(frozen=True, slots=True)
class TagUpload:
    tags: tuple
    FIELD_KINDS = {"tags": KIND_TAG}


@dataclass(frozen=True, slots=True)
class ExpansionInfo:
    """Neighbourhood of one client over tags, with the degrees it needs."""

    neighbors: tuple
    exclusive: tuple
    neighbor_edges: tuple  # ((user, (tag, ...)), ...)
    user_degrees: tuple  # ((user, degree), ...)
    item_degrees: tuple  # ((tag, degree), ...)
    live_tags: tuple
    FIELD_KINDS = {
        "neighbors": KIND_ID,
        "exclusive": KIND_TAG,
        "neighbor_edges": (KIND_ID, KIND_TAG),
        "user_degrees": (KIND_ID, KIND_COUNT),
        "item_degrees": (KIND_TAG, KIND_COUNT),
        "live_tags": KIND_TAG,
    }


@dataclass(frozen=True, slots=True)
class EmbeddingSync:
    origin: int
    layer: int
    ciphertext: bytes
    FIELD_KINDS = {"origin": KIND_ID, "layer": KIND_COUNT, "ciphertext": KIND_CIPHERTEXT}


@dataclass(frozen=True, slots=True)
class NegEmbedRequest:
    """Final embeddings wanted for ``tags``; ``route`` is assigned by the server."""

    route: int
    tags: tuple
    FIELD_KINDS = {"route": KIND_COUNT, "tags": KIND_TAG}


@dataclass(frozen=True, slots=True)
class NegEmbedReply:
    route: int
    tags: tuple
    ciphertext: bytes
    FIELD_KINDS = {"route": KIND_COUNT, "tags": KIND_TAG, "ciphertext": KIND_CIPHERTEXT}


@dataclass(frozen=True, slots=True)
class NegGradRoute:
    route: int
    tags: tuple
    ciphertext: bytes
    FIELD_KINDS = {"route": KIND_COUNT, "tags": KIND_TAG, "ciphertext": KIND_CIPHERTEXT}


@dataclass(frozen=True, slots=True)
class GradSync:
    origin: int
    target: int
    layer: int
    ciphertext: bytes
    FIELD_KINDS = {
        "origin": KIND_ID,
        "target": KIND_ID,
        "layer": KIND_COUNT,
        "ciphertext": KIND_CIPHERTEXT,
    }


@dataclass(frozen=True, slots=True)
class ShareTransfer:
    origin: int
    target: int
    tag: bytes
    ciphertext: bytes
    FIELD_KINDS = {
        "origin": KIND_ID,
        "target": KIND_ID,
        "tag": KIND_TAG,
        "ciphertext": KIND_CIPHERTEXT,
    }


@dataclass(frozen=True, slots=True)
class MaskedGradUpload:
    tag: bytes
    masked: np.ndarray  # ring limbs, (dim, N_LIMBS) uint32
    FIELD_KINDS = {"tag": KIND_TAG, "masked": KIND_MASKED}


@dataclass(frozen=True, slots=True)
class AggregatedGrad:
    tag: bytes
    grad: np.ndarray
    FIELD_KINDS = {"tag": KIND_TAG, "grad": KIND_AGGREGATE}


@dataclass(frozen=True, slots=True)
class UploadAssignment:
    """Server to a representative: items whose embeddings it should upload."""

    tags: tuple
    FIELD_KINDS = {"tags": KIND_TAG}


@dataclass(frozen=True, slots=True)
class ItemEmbedUpload:
    tag: bytes
    ciphertext: bytes
    FIELD_KINDS = {"tag": KIND_TAG, "ciphertext": KIND_CIPHERTEXT}


@dataclass(frozen=True, slots=True)
class NegItemEmbeds:
    entries: tuple  # ((tag, ciphertext), ...)
    FIELD_KINDS = {"entries": (KIND_TAG, KIND_CIPHERTEXT)}


MESSAGE_TYPES: tuple[type, ...] = (
    PubKeyUpload,
    PubKeyBundle,
    SharedKeyCipher,
    TagUpload,
    ExpansionInfo,
    EmbeddingSync,
    NegEmbedRequest,
    NegEmbedReply,
    NegGradRoute,
    GradSync,
    ShareTransfer,
    MaskedGradUpload,
    AggregatedGrad,
    UploadAssignment,
    ItemEmbedUpload,
    NegItemEmbeds,
)
TYPE_CODE = {cls: code for code, cls in enumerate(MESSAGE_TYPES, start=1)}
CODE_TYPE = {code: cls for cls, code in TYPE_CODE.items()}


# -- TLV payload codec -------------------------------------------------------

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


class CodecError(ValueError):
    pass


def encode_value(value, out: bytearray) -> None:
    if isinstance(value, bool):
        raise CodecError("booleans are not encodable")
    if isinstance(value, (int, np.integer)):
        out += b"i" + _I64.pack(int(value))
    elif isinstance(value, (bytes, bytearray)):
        out += b"b" + _U32.pack(len(value)) + bytes(value)
    elif isinstance(value, (tuple, list)):
        out += b"t" + _U32.pack(len(value))
        for item in value:
            encode_value(item, out)
    elif isinstance(value, np.ndarray):
        if value.dtype == np.float64:
            code, wire = b"f", "<f8"
        elif value.dtype == np.uint32:
            code, wire = b"u", "<u4"
        else:
            raise CodecError(f"unsupported array dtype {value.dtype}")
        out += code + _U32.pack(value.ndim)
        for dim in value.shape:
            out += _U32.pack(dim)
        out += np.ascontiguousarray(value, dtype=wire).tobytes()
    else:
        raise CodecError(f"unsupported value type {type(value).__name__}")


def decode_value(data: bytes, pos: int = 0):
    try:
        code = data[pos : pos + 1]
        pos += 1
        if code == b"i":
            return _I64.unpack_from(data, pos)[0], pos + 8
        if code == b"b":
            (n,) = _U32.unpack_from(data, pos)
            pos += 4
            if pos + n > len(data):
                raise CodecError("truncated bytes")
            return bytes(data[pos : pos + n]), pos + n
        if code == b"t":
            (n,) = _U32.unpack_from(data, pos)
            pos += 4
            items = []
            for _ in range(n):
                item, pos = decode_value(data, pos)
                items.append(item)
            return tuple(items), pos
        if code in (b"f", b"u"):
            (ndim,) = _U32.unpack_from(data, pos)
            pos += 4
            shape = tuple(_U32.unpack_from(data, pos + 4 * k)[0] for k in range(ndim))
            pos += 4 * ndim
            dtype = np.dtype("<f8") if code == b"f" else np.dtype("<u4")
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + size > len(data):
                raise CodecError("truncated array")
            arr = np.frombuffer(data, dtype=dtype, count=size // dtype.itemsize, offset=pos)
            native = np.float64 if code == b"f" else np.uint32
            return arr.astype(native).reshape(shape), pos + size
    except struct.error as exc:
        raise CodecError("truncated payload") from exc
    raise CodecError(f"unknown value code {code!r}")


_HEADER = struct.Struct(">IIBI")


def encode_frame(env: Envelope) -> bytes:
    body = env.body
    payload = bytearray()
    encode_value(
        (env.recipient, env.seq, *(getattr(body, f.name) for f in fields(body))), payload
    )
    head = _HEADER.pack(_HEADER.size - 4 + len(payload), env.round, TYPE_CODE[type(body)], env.sender)
    return head + bytes(payload)


def decode_frame(frame: bytes) -> Envelope:
    if len(frame) < _HEADER.size:
        raise CodecError("short frame")
    length, rnd, code, sender = _HEADER.unpack_from(frame)
    if length != len(frame) - 4:
        raise CodecError("frame length mismatch")
    cls = CODE_TYPE.get(code)
    if cls is None:
        raise CodecError(f"unknown message type {code}")
    values, end = decode_value(frame, _HEADER.size)
    if end != len(frame) or not isinstance(values, tuple) or len(values) < 2:
        raise CodecError("malformed payload")
    recipient, seq, *rest = values
    return Envelope(rnd, sender, seq, recipient, cls(*rest))


FRAME_HEADER_BYTES = _HEADER.size


# -- transcript rendering ----------------------------------------------------


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


def render_value(value, kind) -> str:
    if isinstance(kind, tuple):
        parts = [
            "(" + ",".join(render_value(v, k) for v, k in zip(entry, kind)) + ")" for entry in value
        ]
        return "[" + " ".join(parts) + "]"
    if isinstance(value, tuple):
        return "[" + " ".join(render_value(v, kind) for v in value) + "]"
    if kind == KIND_TAG:
        return value.hex()
    if kind in (KIND_CIPHERTEXT, KIND_PUBLIC_KEY):
        return f"{len(value)}B:{_digest(value)}"
    if kind in (KIND_MASKED, KIND_AGGREGATE):
        return f"{'x'.join(map(str, value.shape))}:{_digest(value.tobytes())}"
    return str(int(value))


def render_envelope(env: Envelope) -> str:
    body = env.body
    kinds = type(body).FIELD_KINDS
    parts = [
        f"{f.name}={render_value(getattr(body, f.name), kinds[f.name])}" for f in fields(body)
    ]
    sender = "S" if env.sender == SERVER else str(env.sender)
    recipient = "S" if env.recipient == SERVER else str(env.recipient)
    return f"{env.round} {type(body).__name__} {sender}->{recipient} #{env.seq} " + " ".join(parts)

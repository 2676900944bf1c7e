"""Binary snapshot files.

Layout: ``b"FRSNAP1\\n"``, a little-endian u32 snapshot count, then for each
snapshot its epoch (u32) and two length-prefixed matrices (users, items)
in the canonical matrix serialization. The same parameters always produce
the same bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

from .crypto import deserialize_matrix, serialize_matrix
from .reference import ParamSnapshot

MAGIC = b"FRSNAP1\n"
_U32 = struct.Struct("<I")


class SnapshotFormatError(ValueError):
    pass


def encode_snapshots(snapshots) -> bytes:
    out = bytearray(MAGIC)
    out += _U32.pack(len(snapshots))
    for snap in snapshots:
        out += _U32.pack(snap.epoch)
        for table in (snap.users, snap.items):
            blob = serialize_matrix(table)
            out += _U32.pack(len(blob)) + blob
    return bytes(out)


def decode_snapshots(data: bytes) -> list[ParamSnapshot]:
    if not data.startswith(MAGIC):
        raise SnapshotFormatError("not a snapshot file")
    pos = len(MAGIC)
    try:
        (count,) = _U32.unpack_from(data, pos)
        pos += 4
        snaps = []
        for _ in range(count):
            (epoch,) = _U32.unpack_from(data, pos)
            pos += 4
            tables = []
            for _ in range(2):
                (size,) = _U32.unpack_from(data, pos)
                pos += 4
                if pos + size > len(data):
                    raise SnapshotFormatError("truncated snapshot file")
                tables.append(deserialize_matrix(data[pos : pos + size]))
                pos += size
            snaps.append(ParamSnapshot(epoch, *tables))
    except (struct.error, ValueError) as exc:
        if isinstance(exc, SnapshotFormatError):
            raise
        raise SnapshotFormatError(f"corrupt snapshot file: {exc}") from exc
    if pos != len(data):
        raise SnapshotFormatError("trailing bytes in snapshot file")
    return snaps


def write_snapshots(path, snapshots) -> None:
    Path(path).write_bytes(encode_snapshots(snapshots))


def read_snapshots(path) -> list[ParamSnapshot]:
    return decode_snapshots(Path(path).read_bytes())

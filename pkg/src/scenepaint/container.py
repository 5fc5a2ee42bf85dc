"""Versioned binary container for named arrays plus a JSON metadata block.

Layout (little-endian)::

    magic (4 bytes) | version u32 | meta length u32 | meta (UTF-8 JSON)
    | array blocks in declared order | crc32 u32 of everything before it

The metadata lists every block as ``[name, dtype, shape]``.  Arrays are
written raw; JSON is serialized with sorted keys so identical inputs give
identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np


class ContainerError(ValueError):
    pass


class CorruptPayloadError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


def pack(magic: bytes, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    blocks = []
    for name, arr in arrays.items():
        a = np.asarray(arr)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<", "=") else a.dtype
        blocks.append([name, np.dtype(dt).str, list(a.shape)])
    meta = dict(meta, __blocks__=blocks)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [magic, struct.pack("<II", version, len(meta_bytes)), meta_bytes]
    for (name, dt, _), arr in zip(blocks, arrays.values()):
        parts.append(np.ascontiguousarray(arr, dtype=np.dtype(dt)).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def unpack(data: bytes, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 16:
        raise CorruptPayloadError("payload truncated")
    if data[:4] != magic:
        raise CorruptPayloadError(f"bad magic {data[:4]!r}, expected {magic!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptPayloadError("checksum mismatch (truncated or corrupted payload)")
    got_version, meta_len = struct.unpack("<II", body[4:12])
    if got_version != version:
        raise VersionMismatchError(f"container version {got_version}, expected {version}")
    try:
        meta = json.loads(body[12 : 12 + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayloadError(f"bad metadata block: {exc}") from None
    off = 12 + meta_len
    arrays = {}
    for name, dt, shape in meta.pop("__blocks__"):
        dtype = np.dtype(dt)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = n * dtype.itemsize
        if off + nbytes > len(body):
            raise CorruptPayloadError(f"block {name!r} runs past end of payload")
        arrays[name] = np.frombuffer(body, dtype, n, off).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise CorruptPayloadError("trailing bytes after last block")
    return meta, arrays

"""Shared binary container: magic + version + checksum header, JSON metadata
block, then raw little-endian arrays.

Both the context-graph cache ("CTXG") and model checkpoints ("IAPT") use this
layout. The metadata records each array's dtype and shape, so the payload can
be reconstructed bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import List, Tuple

import numpy as np

from .errors import CorruptFileError

_HEADER = struct.Struct("<4sIQQI")  # magic, version, meta_len, payload_len, crc32
VERSION = 1


def write_container(path, magic: bytes, meta: dict, arrays: List[np.ndarray]) -> None:
    assert len(magic) == 4
    arrays = [np.ascontiguousarray(a) for a in arrays]
    meta = dict(meta)
    meta["__arrays__"] = [
        {"dtype": a.dtype.str, "shape": list(a.shape)} for a in arrays
    ]
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(a.astype(a.dtype.newbyteorder("<")).tobytes() for a in arrays)
    crc = zlib.crc32(meta_blob + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, len(meta_blob), len(payload), crc))
        fh.write(meta_blob)
        fh.write(payload)


def read_container(path, magic: bytes) -> Tuple[dict, List[np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: file shorter than header")
    got_magic, version, meta_len, payload_len, crc = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise CorruptFileError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}, expected {VERSION}")
    body = raw[_HEADER.size :]
    if len(body) != meta_len + payload_len:
        raise CorruptFileError(f"{path}: truncated file")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{path}: checksum mismatch")
    try:
        meta = json.loads(body[:meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: corrupt metadata block") from exc
    arrays = []
    offset = meta_len
    for spec in meta.pop("__arrays__", []):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(body[offset : offset + nbytes], dtype=dtype).reshape(spec["shape"])
        arrays.append(arr.copy())
        offset += nbytes
    if offset != meta_len + payload_len:
        raise CorruptFileError(f"{path}: payload length mismatch")
    return meta, arrays

"""Versioned binary persistence for keyed embedding vectors.

Layout: an 8-byte magic tag, then little-endian u32 version, u32 dimension
and u32 record count, followed by one record per key: u16 key length, the
UTF-8 key bytes, and ``dimension`` little-endian float32 values. Alert
embeddings and the text embedder share the format under distinct magics.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC_ALERT_VECTORS = b"AAGVEC01"
MAGIC_TEXT_VECTORS = b"AAGTXT01"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<III")
_KEYLEN = struct.Struct("<H")


def save_vectors(path: str | Path, vectors: Mapping[str, np.ndarray], magic: bytes) -> None:
    if len(magic) != 8:
        raise ValueError("magic tag must be exactly 8 bytes")
    keys = sorted(vectors)
    dim = 0 if not keys else int(np.asarray(vectors[keys[0]]).shape[0])
    with Path(path).open("wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(FORMAT_VERSION, dim, len(keys)))
        for key in keys:
            vec = np.asarray(vectors[key], dtype="<f4")
            if vec.shape != (dim,):
                raise ValueError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"key too long: {key!r}")
            fh.write(_KEYLEN.pack(len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def load_vectors(path: str | Path, magic: bytes) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != magic:
        raise ValueError(f"bad magic in {path}: expected {magic!r}, found {data[:8]!r}")
    version, dim, count = _HEADER.unpack_from(data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported vector file version {version}")
    offset = 8 + _HEADER.size
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (klen,) = _KEYLEN.unpack_from(data, offset)
        offset += _KEYLEN.size
        key = data[offset : offset + klen].decode("utf-8")
        offset += klen
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        vectors[key] = vec
    if offset != len(data):
        raise ValueError(f"trailing bytes in vector file {path}")
    return vectors

"""The "SFWM" checkpoint container.

Layout (little endian)::

    b"SFWM"  u32 version  u64 meta_len  meta_len bytes of UTF-8 JSON
    repeated: u32 name_len, name, u32 rank, rank x u64 dims, f32 payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SFWM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _meta_bytes(metadata: dict) -> bytes:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dump_checkpoint(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    meta = _meta_bytes(metadata)
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta)), meta]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def load_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic at offset 0")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint header at offset 4")
    version, meta_len = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    pos = 16
    if pos + meta_len > len(data):
        raise CheckpointError(f"metadata overruns file at offset {pos}")
    metadata = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    tensors = {}
    while pos < len(data):
        start = pos
        try:
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
        except struct.error as exc:
            raise CheckpointError(f"truncated tensor record at offset {start}") from exc
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError(f"tensor '{name}' payload overruns file at offset {pos}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    return tensors, metadata


def save(path, tensors: dict[str, np.ndarray], metadata: dict) -> str:
    """Write a checkpoint file and return its sha256 content hash."""
    data = dump_checkpoint(tensors, metadata)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return load_checkpoint(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

"""On-disk formats for time x feature grids.

Binary grid ("SPEC"): magic, u32 version, u32 T, u32 M, f64 frame shift in
seconds, then T*M float32 values row-major, all little endian.  Used for both
spectrograms and piano rolls.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

GRID_MAGIC = b"SPEC"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


class GridFormatError(ValueError):
    pass


def dump_grid(frames: np.ndarray, frame_shift_s: float) -> bytes:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("grid must be 2-D (time x features)")
    t, m = frames.shape
    return _HEADER.pack(GRID_MAGIC, GRID_VERSION, t, m, float(frame_shift_s)) + frames.tobytes()


def load_grid(data: bytes) -> tuple[np.ndarray, float]:
    if len(data) < _HEADER.size:
        raise GridFormatError("truncated grid header at offset 0")
    magic, version, t, m, shift = _HEADER.unpack_from(data, 0)
    if magic != GRID_MAGIC:
        raise GridFormatError("bad grid magic at offset 0")
    if version != GRID_VERSION:
        raise GridFormatError(f"unsupported grid version {version} at offset 4")
    need = _HEADER.size + 4 * t * m
    if len(data) < need:
        raise GridFormatError(f"grid payload truncated at offset {len(data)} (need {need} bytes)")
    frames = np.frombuffer(data, dtype="<f4", count=t * m, offset=_HEADER.size).reshape(t, m)
    return frames.astype(np.float32), shift


def write_grid(path, frames, frame_shift_s) -> None:
    Path(path).write_bytes(dump_grid(frames, frame_shift_s))


def read_grid(path) -> tuple[np.ndarray, float]:
    return load_grid(Path(path).read_bytes())


def dump_pgm(frames: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> bytes:
    """8-bit PGM preview: time runs left to right, low features at the bottom."""
    scaled = np.clip((np.asarray(frames, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    img = np.round(scaled * 255).astype(np.uint8).T[::-1]
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_pgm(path, frames, lo=-1.0, hi=1.0) -> None:
    Path(path).write_bytes(dump_pgm(frames, lo, hi))


def dump_roll_csv(grid: np.ndarray) -> str:
    return "".join(",".join("1" if v else "0" for v in row) + "\n" for row in np.asarray(grid) > 0.5)


def load_roll_csv(text: str) -> np.ndarray:
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if any(len(r) != 88 for r in rows):
        raise GridFormatError("piano-roll CSV rows must have 88 columns")
    return np.array(rows, dtype=np.uint8).reshape(len(rows), 88)

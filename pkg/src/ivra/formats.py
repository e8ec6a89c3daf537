"""Binary tensor container, P5 heatmaps, and ablation CSV.

IVRT tensor layout (all integers little-endian)::

    offset  size        field
    0       4           magic  b"IVRT"
    4       4           version  u32 = 1
    8       1           dtype    u8  = 0 (float32)
    9       1           ndim     u8
    10      8 * ndim    dims     u64 each
    ...     4 * prod    payload  float32 LE, row-major
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .affinity import AffinityMap

MAGIC = b"IVRT"
VERSION = 1
DTYPE_F32 = 0
_PREFIX = struct.Struct("<4sIBB")
_MAX_ELEMENTS = 2**62


class TensorFormatError(ValueError):
    """Base class for malformed tensor files."""


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    """Header or payload shorter than declared."""


class TrailingDataError(TensorFormatError):
    pass


class DimsOverflowError(TensorFormatError):
    pass


def encode_tensor(m) -> bytes:
    arr = np.asarray(m)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if arr.ndim > 255:
        raise ValueError("at most 255 dimensions")
    header = _PREFIX.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _PREFIX.size:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}")
        raise TruncatedError(f"header needs {_PREFIX.size} bytes, file has {len(buf)}")
    magic, version, dtype, ndim = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"version {version}, expected {VERSION}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"dtype code {dtype}, expected {DTYPE_F32}")
    dims_end = _PREFIX.size + 8 * ndim
    if len(buf) < dims_end:
        raise TruncatedError(f"header declares {ndim} dims but is cut short")
    dims = struct.unpack_from(f"<{ndim}Q", buf, _PREFIX.size)
    count = math.prod(dims)
    if count > _MAX_ELEMENTS:
        raise DimsOverflowError(f"dims {dims} overflow the element count")
    expected = count * 4
    payload = len(buf) - dims_end
    if payload < expected:
        raise TruncatedError(f"payload has {payload} bytes, dims {dims} need {expected}")
    if payload > expected:
        raise TrailingDataError(f"{payload - expected} bytes after the declared payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=dims_end)
    return data.astype(np.float32).reshape(dims)


def write_tensor(path, m) -> None:
    Path(path).write_bytes(encode_tensor(m))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


@dataclass(frozen=True)
class HeatmapImage:
    width: int
    height: int
    pixels: bytes


def heatmap_pixels(a: AffinityMap, ref_index: int) -> np.ndarray:
    """Row ``ref_index`` min-max scaled to 0..255, rounded half up; a constant row is all 255."""
    if not 0 <= ref_index < a.n:
        raise IndexError(f"reference index {ref_index} outside [0, {a.n})")
    row = a.values[ref_index].astype(np.float64)
    lo, hi = row.min(), row.max()
    if hi == lo:
        scaled = np.ones_like(row)
    else:
        scaled = np.clip((row - lo) / (hi - lo), 0.0, 1.0)
    return np.floor(255.0 * scaled + 0.5).astype(np.uint8).reshape(a.grid_h, a.grid_w)


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, np.uint8).tobytes()


def write_heatmap(path, a: AffinityMap, ref_index: int) -> HeatmapImage:
    pixels = heatmap_pixels(a, ref_index)
    Path(path).write_bytes(encode_pgm(pixels))
    return HeatmapImage(a.grid_w, a.grid_h, pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError("not a binary graymap")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


@dataclass(frozen=True)
class AblationRow:
    lam: float
    layers: tuple
    position: str
    clip: str
    metric: str
    value: float
    seed: int


ABLATION_HEADER = ("lambda", "layers", "position", "clip", "metric", "value", "seed")


def _g6(x: float) -> str:
    return f"{float(x):.6g}"


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for r in rows:
        layers = ";".join(str(i) for i in r.layers)
        w.writerow([_g6(r.lam), layers, r.position, r.clip, r.metric, _g6(r.value), r.seed])
    return buf.getvalue()


def write_ablation_csv(path, rows) -> None:
    Path(path).write_text(ablation_csv(rows), encoding="utf-8", newline="")

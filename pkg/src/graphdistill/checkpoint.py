"""Flat binary checkpoints: versioned header followed by little-endian float64 payload.

Layout::

    magic (4 bytes) | version u32 | layer count u32
    per layer: d_in u32, d_out u32
    per layer: weight (d_in*d_out f64, row-major), bias (d_out f64)
    [student only] d_M u32, W_M (d_M*d_M f64)
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
TEACHER_MAGIC = b"GDTM"
STUDENT_MAGIC = b"GDSM"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, magic: bytes, layers, extra: np.ndarray | None = None) -> None:
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(layers))]
    for w, _ in layers:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").reshape(-1).tobytes())
    if extra is not None:
        parts.append(struct.pack("<I", extra.shape[0]))
        parts.append(np.ascontiguousarray(extra, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path, magic: bytes, with_extra: bool = False):
    buf = Path(path).read_bytes()
    try:
        return _parse(buf, path, magic, with_extra)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc})") from None


def _parse(buf: bytes, path, magic: bytes, with_extra: bool):
    if buf[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    version, n_layers = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    dims = []
    for _ in range(n_layers):
        dims.append(struct.unpack_from("<II", buf, off))
        off += 8
    layers = []
    for d_in, d_out in dims:
        w = np.frombuffer(buf, "<f8", d_in * d_out, off).reshape(d_in, d_out).astype(np.float64)
        off += 8 * d_in * d_out
        b = np.frombuffer(buf, "<f8", d_out, off).reshape(1, d_out).astype(np.float64)
        off += 8 * d_out
        layers.append((w, b))
    extra = None
    if with_extra:
        (d,) = struct.unpack_from("<I", buf, off)
        off += 4
        extra = np.frombuffer(buf, "<f8", d * d, off).reshape(d, d).astype(np.float64)
        off += 8 * d * d
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return layers, extra


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

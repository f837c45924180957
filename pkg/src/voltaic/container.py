"""Binary model container shared by resistive and Hopfield models.

Layout (little-endian): 4-byte magic, u32 L, u32 sizes[L+1], f64 A,
f64 gains[L], then for each layer the row-major f64 weight matrix
followed by its f64 bias vector.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError


def write_container(path, magic: bytes, sizes, A: float, gains, weights, biases) -> None:
    L = len(sizes) - 1
    parts = [magic, struct.pack("<I", L), struct.pack(f"<{L + 1}I", *sizes),
             struct.pack("<d", float(A)), np.asarray(gains, dtype="<f8").tobytes()]
    for W, b in zip(weights, biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_container(path, magic: bytes):
    """Returns (sizes, A, gains, weights, biases); raises ModelFormatError on any mismatch."""
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise ModelFormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    pos = 4
    try:
        (L,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if L < 1 or L > 64:
            raise ModelFormatError(f"{path}: implausible layer count {L}")
        sizes = list(struct.unpack_from(f"<{L + 1}I", raw, pos))
        pos += 4 * (L + 1)
        (A,) = struct.unpack_from("<d", raw, pos)
        pos += 8
        gains = np.frombuffer(raw, "<f8", L, pos).astype(float)
        pos += 8 * L
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(np.frombuffer(raw, "<f8", n_in * n_out, pos).reshape(n_in, n_out).astype(float))
            pos += 8 * n_in * n_out
            biases.append(np.frombuffer(raw, "<f8", n_out, pos).astype(float))
            pos += 8 * n_out
    except (struct.error, ValueError) as exc:
        raise ModelFormatError(f"{path}: truncated model file") from exc
    if pos != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return sizes, float(A), gains, weights, biases

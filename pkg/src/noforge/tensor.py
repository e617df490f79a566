"""Dense real/complex array helpers.

Tensors are plain C-ordered numpy arrays. This module adds the shape checks
and the handful of constructors the rest of the engine relies on.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidShape, ShapeMismatch

DEFAULT_DTYPE = np.float32
VERIFY_DTYPE = np.float64

REDUCTIONS = ("sum", "max", "min", "mean")


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise InvalidShape(f"every extent must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def ones(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.ones(_check_shape(shape), dtype=dtype)


def full(shape, c, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), c, dtype=dtype)


def linspace_grid(n: int, lo: float = 0.0, hi: float = 1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """``n`` evenly spaced values with both endpoints hit exactly."""
    if n < 2:
        raise InvalidShape(f"linspace_grid needs n >= 2, got {n}")
    out = np.linspace(lo, hi, n, dtype=np.float64)
    out[0], out[-1] = lo, hi
    return out.astype(dtype)


def concat_channels(ts: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ``[C_i, W, H, D]`` tensors along the channel axis."""
    if not ts:
        raise InvalidShape("concat_channels needs at least one tensor")
    spatial = ts[0].shape[1:]
    for t in ts:
        if t.ndim < 2 or t.shape[1:] != spatial:
            raise ShapeMismatch(f"spatial shapes differ: {t.shape[1:]} vs {spatial}")
    return np.ascontiguousarray(np.concatenate(ts, axis=0))


def broadcast_scalar_to_grid(c: float, spatial_shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    spatial_shape = _check_shape(spatial_shape)
    if len(spatial_shape) != 3:
        raise InvalidShape(f"spatial shape must have 3 extents, got {spatial_shape}")
    return np.full((1,) + spatial_shape, c, dtype=dtype)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"operand shapes differ: {a.shape} vs {b.shape}")


def add(a, b):
    _same_shape(a, b)
    return a + b


def sub(a, b):
    _same_shape(a, b)
    return a - b


def mul(a, b):
    _same_shape(a, b)
    return a * b


def scale(a, c):
    return a * c


def reduce(x: np.ndarray, op: str = "sum", mask: np.ndarray | None = None) -> float:
    """Reduce to a scalar, ignoring positions where ``mask == 0``."""
    if op not in REDUCTIONS:
        raise ValueError(f"unknown reduction {op!r}")
    if mask is None:
        vals = x.ravel()
    else:
        _same_shape(x, mask)
        vals = x[np.asarray(mask) != 0]
    if op == "sum":
        return float(vals.sum()) if vals.size else 0.0
    if vals.size == 0:
        raise ValueError(f"{op} of an empty selection is undefined")
    return float(getattr(vals, op)())


def flat_index(shape, index) -> int:
    """C-order flat offset of a multi-index; out-of-range raises IndexError."""
    shape = _check_shape(shape)
    if len(index) != len(shape):
        raise IndexError(f"index {index} has wrong rank for shape {shape}")
    flat = 0
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {index} out of range for shape {shape}")
        flat = flat * n + int(i)
    return flat


def multi_index(shape, flat: int) -> tuple[int, ...]:
    shape = _check_shape(shape)
    total = int(np.prod(shape))
    if not 0 <= flat < total:
        raise IndexError(f"flat index {flat} out of range for {total} elements")
    out = []
    for n in reversed(shape):
        out.append(flat % n)
        flat //= n
    return tuple(reversed(out))


def to_planes(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a complex tensor into real and imaginary planes."""
    return np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)


def from_planes(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    _same_shape(re, im)
    return re + 1j * im


def write_raw(path, x: np.ndarray, dtype=None) -> None:
    """Little-endian, C-order, headerless dump."""
    arr = np.ascontiguousarray(x, dtype=dtype or x.dtype)
    arr.astype(arr.dtype.newbyteorder("<"), copy=False).tofile(path)


def read_raw(path, shape, dtype) -> np.ndarray:
    dt = np.dtype(dtype).newbyteorder("<")
    data = np.fromfile(path, dtype=dt)
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ShapeMismatch(f"{path}: expected {expected} elements, found {data.size}")
    return data.astype(np.dtype(dtype), copy=False).reshape(shape)

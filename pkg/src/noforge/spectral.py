"""Discrete Fourier transforms over 3D fields and mode truncation.

Conventions (frozen):

* forward transforms are unnormalized, inverse transforms carry ``1/N``;
* ``fft3`` is real-to-complex over the last three axes and stores the last
  axis as a half spectrum of length ``D // 2 + 1``;
* ``fft1`` is a complex full-spectrum transform along one axis.

The 1D kernel is a recursive mixed-radix Cooley-Tukey (decimation in time)
over the prime factorization of the length. Short lengths and prime factors
are evaluated as dense DFT matrix products, which is exact for any length.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidShape, ShapeMismatch

log = logging.getLogger(__name__)

# Lengths at or below this size go straight to a dense DFT product. Setting it
# to 1 forces the full radix decomposition (used by the tests).
DIRECT_MAX = 16


@functools.lru_cache(maxsize=None)
def smallest_prime_factor(n: int) -> int:
    p = 2
    while p * p <= n:
        if n % p == 0:
            return p
        p += 1
    return n


@functools.lru_cache(maxsize=None)
def _dft_matrix(n: int, inverse: bool, dtype: np.dtype) -> np.ndarray:
    # exponent reduced mod n in integers keeps twiddles accurate for large n
    k = np.arange(n)
    frac = (np.outer(k, k) % n) / n
    sign = 1.0 if inverse else -1.0
    m = np.exp(sign * 2j * np.pi * frac).astype(dtype)
    m.setflags(write=False)
    return m


@functools.lru_cache(maxsize=None)
def _twiddles(p: int, m: int, inverse: bool, dtype: np.dtype) -> np.ndarray:
    n = p * m
    frac = (np.outer(np.arange(p), np.arange(m)) % n) / n
    sign = 1.0 if inverse else -1.0
    t = np.exp(sign * 2j * np.pi * frac).astype(dtype)
    t.setflags(write=False)
    return t


def _fft_last(x: np.ndarray, inverse: bool) -> np.ndarray:
    """Unnormalized DFT along the last axis of a complex array."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = smallest_prime_factor(n)
    if n <= DIRECT_MAX or p == n:
        return x @ _dft_matrix(n, inverse, x.dtype)
    m = n // p
    # x[j*p + r] -> sub-sequence r of length m
    sub = x.reshape(x.shape[:-1] + (m, p)).swapaxes(-1, -2)
    y = _fft_last(sub, inverse) * _twiddles(p, m, inverse, x.dtype)
    # X[k + m*s] = sum_r W_p^{rs} (W_n^{rk} Y_r[k])
    out = np.matmul(_dft_matrix(p, inverse, x.dtype), y)
    return out.reshape(x.shape)


def _complex_dtype(x: np.ndarray) -> np.dtype:
    if x.dtype in (np.float32, np.complex64):
        return np.dtype(np.complex64)
    return np.dtype(np.complex128)


def _real_dtype(z: np.ndarray) -> np.dtype:
    return np.dtype(np.float32) if z.dtype == np.complex64 else np.dtype(np.float64)


def _along(x: np.ndarray, axis: int, inverse: bool) -> np.ndarray:
    xm = np.ascontiguousarray(np.moveaxis(x, axis, -1))
    return np.moveaxis(_fft_last(xm, inverse), -1, axis)


def fft1(x: np.ndarray, axis: int) -> np.ndarray:
    """Full complex spectrum along ``axis`` (unnormalized)."""
    if x.shape[axis] < 1:
        raise InvalidShape("empty transform axis")
    return np.ascontiguousarray(_along(x.astype(_complex_dtype(x), copy=False), axis, False))


def ifft1(z: np.ndarray, axis: int) -> np.ndarray:
    """Inverse of :func:`fft1`; returns a complex array (caller takes ``.real``)."""
    z = z.astype(_complex_dtype(z), copy=False)
    out = _along(z, axis, True)
    out /= z.shape[axis]
    return np.ascontiguousarray(out)


def rfft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    z = _fft_last(np.ascontiguousarray(x, dtype=_complex_dtype(x)), False)
    return np.ascontiguousarray(z[..., : n // 2 + 1])


def irfft_last(z: np.ndarray, n: int) -> np.ndarray:
    """Real inverse along the last axis; imaginary parts of DC/Nyquist are dropped."""
    half = n // 2 + 1
    if z.shape[-1] != half:
        raise ShapeMismatch(f"half spectrum of length {z.shape[-1]} does not match n={n}")
    full = np.empty(z.shape[:-1] + (n,), dtype=_complex_dtype(z))
    full[..., :half] = z
    if n > 1:
        # Hermitian extension: X[n-k] = conj(X[k])
        tail = n - half
        full[..., half:] = np.conj(z[..., 1 : 1 + tail][..., ::-1])
    out = _fft_last(full, True).real / n
    return np.ascontiguousarray(out.astype(_real_dtype(z), copy=False))


def fft3(x: np.ndarray) -> np.ndarray:
    """Real-to-complex transform over the last three axes.

    ``[..., W, H, D] -> [..., W, H, D//2+1]``; leading axes are untouched.
    """
    if x.ndim < 3 or any(s < 2 for s in x.shape[-3:]):
        raise InvalidShape(f"fft3 needs spatial extents >= 2, got {x.shape}")
    if np.iscomplexobj(x):
        raise ShapeMismatch("fft3 expects a real input")
    z = rfft_last(x)
    z = _along(z, -2, False)
    z = _along(z, -3, False)
    return np.ascontiguousarray(z)


def ifft3(z: np.ndarray, spatial_shape) -> np.ndarray:
    """Inverse of :func:`fft3` for a declared ``(W, H, D)``."""
    w, h, d = (int(s) for s in spatial_shape)
    if z.ndim < 3 or z.shape[-3:] != (w, h, d // 2 + 1):
        raise ShapeMismatch(f"spectrum shape {z.shape} inconsistent with spatial {(w, h, d)}")
    y = _along(z.astype(_complex_dtype(z), copy=False), -3, True)
    y = _along(y, -2, True)
    y /= w * h
    return irfft_last(y, d)


def half_weights(d: int, dtype=np.float64) -> np.ndarray:
    """Multiplicity of each half-spectrum bin in the full spectrum (1 or 2)."""
    w = np.full(d // 2 + 1, 2.0, dtype=dtype)
    w[0] = 1.0
    if d % 2 == 0:
        w[-1] = 1.0
    return w


def k_max(n: int) -> int:
    """Number of independent modes along an axis of extent ``n``."""
    return n // 2 + 1


@dataclass(frozen=True)
class ModeSpec:
    kx: int
    ky: int
    kz: int

    def __post_init__(self):
        for k in self.as_tuple():
            if int(k) < 1:
                raise InvalidShape(f"mode counts must be >= 1, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.kx, self.ky, self.kz)

    @classmethod
    def of(cls, modes) -> "ModeSpec":
        if isinstance(modes, ModeSpec):
            return modes
        kx, ky, kz = (int(m) for m in modes)
        return cls(kx, ky, kz)

    def clamp(self, grid) -> "ModeSpec":
        """Clip each count to ``k_max`` of the grid, logging a warning if needed."""
        limits = tuple(k_max(int(n)) for n in grid)
        clamped = tuple(min(k, lim) for k, lim in zip(self.as_tuple(), limits))
        if clamped != self.as_tuple():
            log.warning("modes %s exceed k_max %s for grid %s; clamped to %s",
                        list(self.as_tuple()), list(limits), list(grid), list(clamped))
        return ModeSpec(*clamped)

    def fits(self, grid) -> bool:
        return all(k <= k_max(int(n)) for k, n in zip(self.as_tuple(), grid))


def retained_bins(n: int, k: int) -> np.ndarray:
    """Full-spectrum bins kept for ``k`` modes: 0..k-1 then the k-1 negatives."""
    if not 1 <= k <= k_max(n):
        raise InvalidShape(f"k={k} outside [1, {k_max(n)}] for extent {n}")
    pos = list(range(k))
    neg = [b for b in range(n - k + 1, n) if b >= k]
    return np.array(pos + neg, dtype=np.intp)


def bin_frequency(n: int, bins: np.ndarray) -> np.ndarray:
    """Absolute frequency index of each full-spectrum bin."""
    return np.minimum(bins, n - bins)


def modes_from_count(n: int, count: int) -> int:
    """Inverse of ``len(retained_bins(n, k))``."""
    if count >= n:
        return k_max(n)
    return (count + 1) // 2


def truncate_axis(z: np.ndarray, k: int, axis: int) -> np.ndarray:
    return np.take(z, retained_bins(z.shape[axis], k), axis=axis)


def pad_axis(z: np.ndarray, n: int, axis: int) -> np.ndarray:
    k = modes_from_count(n, z.shape[axis])
    shape = list(z.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=z.dtype)
    idx = [slice(None)] * z.ndim
    idx[axis] = retained_bins(n, k)
    out[tuple(idx)] = z
    return out


def truncate_modes(z: np.ndarray, modes) -> np.ndarray:
    """Keep the retained bins of a half spectrum ``[..., W, H, D//2+1]``."""
    modes = ModeSpec.of(modes)
    w, h, half = z.shape[-3:]
    if modes.kz > half:
        raise InvalidShape(f"kz={modes.kz} exceeds half-spectrum length {half}")
    out = np.take(z, retained_bins(w, modes.kx), axis=-3)
    out = np.take(out, retained_bins(h, modes.ky), axis=-2)
    return np.ascontiguousarray(out[..., : modes.kz])


def pad_modes(z: np.ndarray, spatial_shape) -> np.ndarray:
    """Scatter truncated bins back into a zeroed half spectrum for ``(W, H, D)``."""
    w, h, d = (int(s) for s in spatial_shape)
    nx, ny, kz = z.shape[-3:]
    if nx > w or ny > h or kz > d // 2 + 1:
        raise ShapeMismatch(f"truncated spectrum {z.shape[-3:]} larger than grid {(w, h, d)}")
    ix = retained_bins(w, modes_from_count(w, nx))
    iy = retained_bins(h, modes_from_count(h, ny))
    if len(ix) != nx or len(iy) != ny:
        raise ShapeMismatch(f"{(nx, ny)} is not a valid retained-bin count for {(w, h)}")
    out = np.zeros(z.shape[:-3] + (w, h, d // 2 + 1), dtype=z.dtype)
    out[..., ix[:, None], iy[None, :], :kz] = z
    return out

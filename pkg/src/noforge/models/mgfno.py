"""Patchwise FNO with a shared inner network and a global T1 context channel."""
from __future__ import annotations

import functools

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch
from .base import OperatorModel
from .configs import MgfnoConfig
from .fno import FNO3d


def _grid_counts(grid, patch_shape):
    if len(grid) != 3 or len(patch_shape) != 3:
        raise InvalidConfig("grid and patch shape must be 3D")
    counts = []
    for n, p in zip(grid, patch_shape):
        if p < 1 or n % p:
            raise InvalidConfig(f"patch shape {tuple(patch_shape)} does not divide grid {tuple(grid)}")
        counts.append(n // p)
    return tuple(counts)


def decompose_batch(x: np.ndarray, patch_shape) -> np.ndarray:
    """``[B, C, W, H, D] -> [B * P, C, pw, ph, pd]``, patches in (b, ix, iy, iz) order."""
    b, c = x.shape[:2]
    nx, ny, nz = _grid_counts(x.shape[2:], patch_shape)
    pw, ph, pd = patch_shape
    y = x.reshape(b, c, nx, pw, ny, ph, nz, pd).transpose(0, 2, 4, 6, 1, 3, 5, 7)
    return np.ascontiguousarray(y).reshape(b * nx * ny * nz, c, pw, ph, pd)


def reassemble_batch(patches: np.ndarray, grid) -> np.ndarray:
    """Inverse of :func:`decompose_batch`."""
    _, c, pw, ph, pd = patches.shape
    nx, ny, nz = _grid_counts(grid, (pw, ph, pd))
    per = nx * ny * nz
    if patches.shape[0] % per:
        raise ShapeMismatch(f"{patches.shape[0]} patches is not a multiple of {per}")
    b = patches.shape[0] // per
    y = patches.reshape(b, nx, ny, nz, c, pw, ph, pd).transpose(0, 4, 1, 5, 2, 6, 3, 7)
    return np.ascontiguousarray(y).reshape(b, c, nx * pw, ny * ph, nz * pd)


def decompose(volume: np.ndarray, patch_shape) -> np.ndarray:
    """``[C, W, H, D] -> [P, C, pw, ph, pd]``, patches ordered lexicographically by (ix, iy, iz)."""
    if volume.ndim != 4:
        raise ShapeMismatch(f"expected [C, W, H, D], got {volume.shape}")
    return decompose_batch(volume[None], tuple(patch_shape))


def reassemble(patches: np.ndarray, grid) -> np.ndarray:
    """``[P, C, pw, ph, pd] -> [C, W, H, D]``."""
    return reassemble_batch(patches, tuple(grid))[0]


@functools.lru_cache(maxsize=None)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation ``[n_out, n_in]`` with aligned corners."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    if n_out == 1:
        m[0, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    t = pos - i0
    m[np.arange(n_out), i0] += 1.0 - t
    m[np.arange(n_out), i0 + 1] += t
    m.setflags(write=False)
    return m


def _context_matrices(grid, factor, patch_shape):
    mats = []
    for n, p in zip(grid, patch_shape):
        if factor < 1 or n % factor or n // factor < 1:
            raise InvalidConfig(f"downsample factor {factor} does not divide grid {tuple(grid)}")
        coarse = n // factor
        mats.append(interp_matrix(coarse, p) @ interp_matrix(n, coarse))
    return mats


def _apply_axes(x, mats):
    # x [..., W, H, D]; mats[j] maps axis j
    out = np.einsum("...whd,aw->...ahd", x, mats[0])
    out = np.einsum("...ahd,bh->...abd", out, mats[1])
    return np.einsum("...abd,cd->...abc", out, mats[2])


def global_context(t1: np.ndarray, factor: int, patch_shape) -> np.ndarray:
    """Trilinear downsample by ``factor`` then trilinear resize to ``patch_shape``.

    ``t1`` is ``[..., 1, W, H, D]``; the result keeps the leading axes.
    """
    mats = _context_matrices(t1.shape[-3:], factor, tuple(patch_shape))
    return _apply_axes(t1, mats).astype(t1.dtype, copy=False)


def global_context_adjoint(g: np.ndarray, grid, factor: int) -> np.ndarray:
    mats = _context_matrices(tuple(grid), factor, g.shape[-3:])
    return _apply_axes(g, [m.T for m in mats]).astype(g.dtype, copy=False)


class MGFNO(OperatorModel):
    """One inner FNO applied to every patch with the T1 context appended as channel 9."""

    kind = "mgfno"

    def __init__(self, config: MgfnoConfig, rng=None, dtype=np.float32):
        super().__init__(config, dtype)
        self.inner = self.add_module("inner", FNO3d(config.inner, rng, dtype))

    def forward(self, x):
        c = self.config
        if x.ndim != 5 or x.shape[1] != 9 or tuple(x.shape[2:]) != c.grid:
            raise ShapeMismatch(f"expected [B, 9, {c.grid}], got {x.shape}")
        b = x.shape[0]
        ctx = global_context(x[:, :1], c.global_downsample_factor, c.patch_shape)
        patches = decompose_batch(x, c.patch_shape)
        per = c.n_patches
        ctx_rep = np.repeat(ctx, per, axis=0)
        out = self.inner.forward(np.concatenate([patches, ctx_rep], axis=1))
        self._save((b, per))
        return reassemble_batch(out, c.grid)

    def backward(self, g):
        b, per = self._pop()
        c = self.config
        gin = self.inner.backward(decompose_batch(g, c.patch_shape))
        gx = reassemble_batch(np.ascontiguousarray(gin[:, :9]), c.grid)
        gctx = gin[:, 9:10].reshape((b, per, 1) + c.patch_shape).sum(axis=1)
        gx[:, :1] += global_context_adjoint(gctx, c.grid, c.global_downsample_factor)
        return gx

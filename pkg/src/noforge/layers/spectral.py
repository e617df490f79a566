"""Spectral convolutions with explicit adjoints.

Complex weights live in two real parameters ``*_re`` / ``*_im``. Gradients of
a real loss with respect to a complex quantity are carried in the
``dL/dRe + i dL/dIm`` convention throughout.

Weight sharing across retained bins: a full-spectrum bin ``b`` of an axis of
length ``n`` maps to the weight slot ``min(b, n - b)``. For the 3D kernel the
slot is shared between a frequency and its negative (so a ``[kx, ky, kz]``
kernel covers ``(2kx-1)(2ky-1)kz`` bins); for the factorized kernel the
negative bin uses the conjugate weight, which keeps each axis branch
real-valued.
"""
from __future__ import annotations

import numpy as np

from .. import spectral as sp
from ..errors import ShapeMismatch
from .base import Module
from .basic import GELU, PointwiseLinear


def _complex_init(rng, shape, cin, cout, dtype):
    if rng is None:
        return None, None
    scale = 1.0 / (cin * cout)
    re = (scale * rng.random(shape)).astype(dtype)
    im = (scale * rng.random(shape)).astype(dtype)
    return re, im


def _cdtype(dtype):
    return np.complex64 if np.dtype(dtype) == np.float32 else np.complex128


def _one_hot(slots: np.ndarray, k: int, dtype) -> np.ndarray:
    s = np.zeros((len(slots), k), dtype=dtype)
    s[np.arange(len(slots)), slots] = 1
    return s


class SpectralConv3d(Module):
    """``ifft3(pad(W(k) . truncate(fft3(x))))`` with per-mode channel mixing.

    Parameters: ``2 * cin * cout * kx * ky * kz`` (real + imaginary planes).
    """

    def __init__(self, cin: int, cout: int, modes, rng=None, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.modes = sp.ModeSpec.of(modes)
        shape = (cout, cin) + self.modes.as_tuple()
        re, im = _complex_init(rng, shape, cin, cout, dtype)
        self.weight_re = self.add_param("weight_re", shape, re)
        self.weight_im = self.add_param("weight_im", shape, im)

    def _check(self, x):
        if x.ndim != 5 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected [B, {self.cin}, W, H, D], got {x.shape}")
        if not self.modes.fits(x.shape[2:]):
            raise ShapeMismatch(f"modes {self.modes.as_tuple()} exceed k_max of grid {x.shape[2:]}")

    def _slots(self, grid):
        w, h, _ = grid
        ax = sp.bin_frequency(w, sp.retained_bins(w, self.modes.kx))
        ay = sp.bin_frequency(h, sp.retained_bins(h, self.modes.ky))
        return ax, ay

    def _mixing(self, grid, cdt):
        """Weights expanded to every retained bin, as ``[M, cin, cout]``."""
        ax, ay = self._slots(grid)
        w = (self.weight_re.value + 1j * self.weight_im.value).astype(cdt)
        wf = w[:, :, ax][:, :, :, ay]
        return np.ascontiguousarray(wf.reshape(self.cout, self.cin, -1).transpose(2, 1, 0))

    def forward(self, x):
        self._check(x)
        b = x.shape[0]
        grid = x.shape[2:]
        z = sp.truncate_modes(sp.fft3(x), self.modes)
        tshape = z.shape[2:]
        zm = z.reshape(b, self.cin, -1).transpose(2, 0, 1)
        wm = self._mixing(grid, z.dtype)
        ym = np.matmul(zm, wm)
        y = ym.transpose(1, 2, 0).reshape((b, self.cout) + tshape)
        out = sp.ifft3(sp.pad_modes(y, grid), grid)
        self._save((zm, wm, grid, tshape))
        return out.astype(x.dtype, copy=False)

    def backward(self, g):
        zm, wm, grid, tshape = self._pop()
        if g.shape[1:] != (self.cout,) + tuple(grid):
            raise ShapeMismatch(f"gradient shape {g.shape} does not match output")
        b = g.shape[0]
        n = int(np.prod(grid))
        graw = sp.truncate_modes(sp.fft3(g), self.modes)
        gm = graw.reshape(b, self.cout, -1).transpose(2, 0, 1)

        # input path: the w/N factors of the two adjoints cancel
        gz = np.matmul(gm, np.conj(wm).swapaxes(1, 2))
        gz = gz.transpose(1, 2, 0).reshape((b, self.cin) + tshape)
        gx = sp.ifft3(sp.pad_modes(gz, grid), grid)

        # weight path: adjoint of irfftn is (w/N) rfftn
        hw = sp.half_weights(grid[2])[: self.modes.kz] / n
        bin_w = np.broadcast_to(hw, tshape).reshape(-1)
        gwm = np.matmul(np.conj(zm).swapaxes(1, 2), gm) * bin_w[:, None, None]
        gwf = gwm.transpose(2, 1, 0).reshape((self.cout, self.cin) + tshape)
        ax, ay = self._slots(grid)
        sx = _one_hot(ax, self.modes.kx, gwf.real.dtype)
        sy = _one_hot(ay, self.modes.ky, gwf.real.dtype)
        gw = np.einsum("oixyz,xa,yb->oiabz", gwf, sx, sy)
        dt = self.weight_re.value.dtype
        self.weight_re.accumulate(gw.real.astype(dt))
        self.weight_im.accumulate(gw.imag.astype(dt))
        return gx.astype(g.dtype, copy=False)


def _mix_axis(z: np.ndarray, wm: np.ndarray, axis: int) -> np.ndarray:
    """Per-bin channel mixing along ``axis``: ``wm`` is ``[n_bins, cin, cout]``."""
    zt = np.moveaxis(z, [axis, 1], [0, -1])
    lead = zt.shape[:-1]
    out = np.matmul(zt.reshape(zt.shape[0], -1, zt.shape[-1]), wm)
    out = out.reshape(lead + (wm.shape[2],))
    return np.moveaxis(out, [0, -1], [axis, 1])


def _gram_axis(z: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    """``sum over batch/other axes of conj(z_i) g_o`` per bin -> ``[n_bins, cin, cout]``."""
    zt = np.moveaxis(z, [axis, 1], [0, -1])
    gt = np.moveaxis(g, [axis, 1], [0, -1])
    zt = zt.reshape(zt.shape[0], -1, zt.shape[-1])
    gt = gt.reshape(gt.shape[0], -1, gt.shape[-1])
    return np.matmul(np.conj(zt).swapaxes(1, 2), gt)


class FactorizedSpectralConv(Module):
    """Sum of three 1D spectral convolutions, one per spatial axis.

    ``Re( sum_j ifft1_j(pad_j(T_j(k) . truncate_j(fft1_j(x)))) )``.
    Parameters: ``2 * cin * cout * (m1 + m2 + m3)``.
    """

    AXES = (2, 3, 4)

    def __init__(self, cin: int, cout: int, modes, rng=None, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.modes = tuple(int(m) for m in modes)
        self.weights = []
        for j, m in enumerate(self.modes):
            shape = (cout, cin, m)
            re, im = _complex_init(rng, shape, cin, cout, dtype)
            self.weights.append((self.add_param(f"weight{j}_re", shape, re),
                                 self.add_param(f"weight{j}_im", shape, im)))

    def _bins(self, j, n):
        m = self.modes[j]
        if m > sp.k_max(n):
            raise ShapeMismatch(f"axis {j}: {m} modes exceed k_max({n}) = {sp.k_max(n)}")
        bins = sp.retained_bins(n, m)
        return bins, sp.bin_frequency(n, bins), bins >= m

    def _mixing(self, j, slots, negative, cdt):
        re, im = self.weights[j]
        w = (re.value + 1j * im.value).astype(cdt)[:, :, slots]  # [cout, cin, nb]
        w = np.where(negative[None, None, :], np.conj(w), w)
        return np.ascontiguousarray(w.transpose(2, 1, 0))

    def forward(self, x):
        if x.ndim != 5 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected [B, {self.cin}, W, H, D], got {x.shape}")
        total = None
        caches = []
        for j, axis in enumerate(self.AXES):
            n = x.shape[axis]
            bins, slots, negative = self._bins(j, n)
            z = np.take(sp.fft1(x, axis), bins, axis=axis)
            wm = self._mixing(j, slots, negative, z.dtype)
            y = sp.ifft1(sp.pad_axis(_mix_axis(z, wm, axis), n, axis), axis)
            total = y if total is None else total + y
            caches.append((z, wm, bins, slots, negative))
        self._save((caches, x.shape))
        return np.ascontiguousarray(total.real).astype(x.dtype, copy=False)

    def backward(self, g):
        caches, xshape = self._pop()
        if g.shape != (xshape[0], self.cout) + tuple(xshape[2:]):
            raise ShapeMismatch(f"gradient shape {g.shape} does not match output")
        gx = np.zeros(xshape, dtype=g.dtype)
        for j, axis in enumerate(self.AXES):
            z, wm, bins, slots, negative = caches[j]
            n = xshape[axis]
            graw = np.take(sp.fft1(g, axis), bins, axis=axis)
            gz = _mix_axis(graw, np.conj(wm).swapaxes(1, 2), axis)
            gx += sp.ifft1(sp.pad_axis(gz, n, axis), axis).real.astype(g.dtype)

            gram = _gram_axis(z, graw, axis) / n  # [nb, cin, cout]
            gram = np.where(negative[:, None, None], np.conj(gram), gram)
            gw = np.zeros((self.modes[j], self.cin, self.cout), dtype=gram.dtype)
            np.add.at(gw, slots, gram)
            gw = gw.transpose(2, 1, 0)
            re, im = self.weights[j]
            re.accumulate(gw.real.astype(re.value.dtype))
            im.accumulate(gw.imag.astype(im.value.dtype))
        return gx


class FFNOLayer(Module):
    """Residual factorized block: ``v + gelu(W2 gelu(W1 spectral(v)))``.

    Parameters: ``2 d^2 (m1 + m2 + m3) + 2 (d^2 + d)``.
    """

    def __init__(self, d_model: int, modes, rng=None, dtype=np.float32):
        super().__init__()
        self.d_model = d_model
        self.spectral = self.add_module("spectral", FactorizedSpectralConv(d_model, d_model, modes, rng, dtype))
        self.w1 = self.add_module("w1", PointwiseLinear(d_model, d_model, rng, dtype))
        self.act1 = self.add_module("act1", GELU())
        self.w2 = self.add_module("w2", PointwiseLinear(d_model, d_model, rng, dtype))
        self.act2 = self.add_module("act2", GELU())

    def forward(self, v):
        if v.ndim != 5 or v.shape[1] != self.d_model:
            raise ShapeMismatch(f"expected [B, {self.d_model}, W, H, D], got {v.shape}")
        h = self.spectral.forward(v)
        h = self.act1.forward(self.w1.forward(h))
        h = self.act2.forward(self.w2.forward(h))
        return v + h

    def backward(self, g):
        gh = self.w2.backward(self.act2.backward(g))
        gh = self.w1.backward(self.act1.backward(gh))
        return g + self.spectral.backward(gh)

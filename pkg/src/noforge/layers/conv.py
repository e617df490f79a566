"""2D convolution, pooling and batch normalization on ``[B, C, H, W]``."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidConfig, ShapeMismatch
from .base import Module, uniform_init, zeros_init


def _correlate_same(x, w):
    """Stride-1 zero-padded cross-correlation; ``w`` is ``[cout, cin, k, k]``."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B, C, H, W, k, k]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # [B, H, W, cout]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 3, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise InvalidConfig(f"kernel size must be odd and positive, got {kernel}")
        self.cin, self.cout, self.k = cin, cout, kernel
        shape = (cout, cin, kernel, kernel)
        self.weight = self.add_param("weight", shape, uniform_init(rng, shape, cin * kernel * kernel, dtype))
        self.bias = self.add_param("bias", (cout,), zeros_init(rng, (cout,), dtype))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected [B, {self.cin}, H, W], got {x.shape}")
        out, cols = _correlate_same(x, self.weight.value)
        out += self.bias.value[None, :, None, None]
        self._save(cols)
        return out

    def backward(self, g):
        cols = self._pop()
        self.weight.accumulate(np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        self.bias.accumulate(g.sum(axis=(0, 2, 3)))
        # adjoint of a same-padded correlation: correlate with the flipped, transposed kernel
        wt = np.ascontiguousarray(self.weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _correlate_same(g, wt)
        return gx


class _Pool2d(Module):
    """2x2 window, stride 2; a trailing odd row/column is dropped."""

    def _blocks(self, x):
        if x.ndim != 4:
            raise ShapeMismatch(f"expected [B, C, H, W], got {x.shape}")
        b, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ShapeMismatch(f"spatial extent too small to pool: {x.shape}")
        return x[:, :, : 2 * h2, : 2 * w2].reshape(b, c, h2, 2, w2, 2)

    def _unblock(self, gb, shape):
        b, c, h, w = shape
        gx = np.zeros(shape, dtype=gb.dtype)
        gx[:, :, : gb.shape[2] * 2, : gb.shape[4] * 2] = gb.reshape(b, c, gb.shape[2] * 2, gb.shape[4] * 2)
        return gx


class MaxPool2d(_Pool2d):
    def forward(self, x):
        blocks = self._blocks(x)
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(blocks.shape[:3] + (blocks.shape[4], 4))
        arg = flat.argmax(axis=-1)
        self._save((arg, x.shape))
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        arg, shape = self._pop()
        onehot = np.zeros(g.shape + (4,), dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        b, c, h2, w2 = g.shape
        gb = onehot.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return self._unblock(gb, shape)


class AvgPool2d(_Pool2d):
    def forward(self, x):
        blocks = self._blocks(x)
        self._save(x.shape)
        return blocks.mean(axis=(3, 5))

    def backward(self, g):
        shape = self._pop()
        gb = np.broadcast_to((g / 4.0)[:, :, :, None, :, None], g.shape[:3] + (2, g.shape[3], 2))
        return self._unblock(np.ascontiguousarray(gb), shape)


class BatchNorm2d(Module):
    """Per-channel normalization over (batch, H, W).

    Training mode uses batch statistics and updates running mean/variance
    (unbiased) with ``momentum``; eval mode uses the running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, rng=None, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        meta = rng is None
        self.gamma = self.add_param("gamma", (channels,), None if meta else np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", (channels,), None if meta else np.zeros(channels, dtype=dtype))
        self.add_buffer("running_mean", None if meta else np.zeros(channels, dtype=dtype))
        self.add_buffer("running_var", None if meta else np.ones(channels, dtype=dtype))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"expected [B, {self.channels}, H, W], got {x.shape}")
        shape = (1, -1, 1, 1)
        if self.training:
            if x.shape[0] < 2:
                raise InvalidConfig("batch normalization in training mode needs batch size >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            n = x.shape[0] * x.shape[2] * x.shape[3]
            m = self.momentum
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            self._buffers["running_mean"] = ((1 - m) * rm + m * mean).astype(rm.dtype)
            self._buffers["running_var"] = ((1 - m) * rv + m * var * n / max(n - 1, 1)).astype(rv.dtype)
        else:
            mean = self._buffers["running_mean"]
            var = self._buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        self._save((xhat, inv_std, self.training))
        return self.gamma.value.reshape(shape) * xhat + self.beta.value.reshape(shape)

    def backward(self, g):
        xhat, inv_std, batch_stats = self._pop()
        shape = (1, -1, 1, 1)
        self.gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        self.beta.accumulate(g.sum(axis=(0, 2, 3)))
        gxhat = g * self.gamma.value.reshape(shape)
        if not batch_stats:
            return gxhat * inv_std.reshape(shape)
        n = g.shape[0] * g.shape[2] * g.shape[3]
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std.reshape(shape) / n) * (n * gxhat - s1 - xhat * s2)

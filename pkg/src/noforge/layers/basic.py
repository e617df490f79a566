"""Pointwise and dense layers, activations, dropout."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import InvalidConfig, ShapeMismatch
from .base import Module, uniform_init, zeros_init

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class PointwiseLinear(Module):
    """1x1x1 convolution: ``out[b, c, p] = bias[c] + sum_i W[c, i] x[b, i, p]``.

    Works on any number of trailing spatial axes. Parameters: ``cin*cout + cout``.
    """

    def __init__(self, cin: int, cout: int, rng=None, dtype=np.float32):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.weight = self.add_param("weight", (cout, cin), uniform_init(rng, (cout, cin), cin, dtype))
        self.bias = self.add_param("bias", (cout,), zeros_init(rng, (cout,), dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim < 2 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected {self.cin} input channels, got shape {x.shape}")
        b = x.shape[0]
        xf = x.reshape(b, self.cin, -1)
        out = np.matmul(self.weight.value, xf)
        out += self.bias.value[:, None]
        self._save((xf, x.shape))
        return out.reshape((b, self.cout) + x.shape[2:])

    def backward(self, g: np.ndarray) -> np.ndarray:
        xf, xshape = self._pop()
        gf = g.reshape(g.shape[0], self.cout, -1)
        self.weight.accumulate(np.tensordot(gf, xf, axes=([0, 2], [0, 2])))
        self.bias.accumulate(gf.sum(axis=(0, 2)))
        return np.matmul(self.weight.value.T, gf).reshape(xshape)


class Conv3d(Module):
    """Stride-1 3D convolution with zero "same" padding (odd kernel sizes)."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise InvalidConfig(f"kernel size must be odd and positive, got {kernel}")
        self.cin, self.cout, self.k = cin, cout, kernel
        shape = (cout, cin, kernel, kernel, kernel)
        self.weight = self.add_param("weight", shape, uniform_init(rng, shape, cin * kernel**3, dtype))
        self.bias = self.add_param("bias", (cout,), zeros_init(rng, (cout,), dtype))

    def _offsets(self):
        k = self.k
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    yield a, b, c

    def forward(self, x):
        if x.ndim != 5 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected [B, {self.cin}, W, H, D], got {x.shape}")
        p = self.k // 2
        _, _, w, h, d = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
        out = np.zeros((x.shape[0], self.cout, w, h, d), dtype=x.dtype)
        wv = self.weight.value
        for a, b, c in self._offsets():
            win = xp[:, :, a:a + w, b:b + h, c:c + d]
            out += np.einsum("oi,biwhd->bowhd", wv[:, :, a, b, c], win)
        out += self.bias.value[None, :, None, None, None]
        self._save(xp)
        return out

    def backward(self, g):
        xp = self._pop()
        p = self.k // 2
        _, _, w, h, d = g.shape
        wv = self.weight.value
        gw = np.zeros_like(wv)
        gxp = np.zeros_like(xp)
        for a, b, c in self._offsets():
            win = xp[:, :, a:a + w, b:b + h, c:c + d]
            gw[:, :, a, b, c] = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            gxp[:, :, a:a + w, b:b + h, c:c + d] += np.einsum("oi,bowhd->biwhd", wv[:, :, a, b, c], g)
        self.weight.accumulate(gw)
        self.bias.accumulate(g.sum(axis=(0, 2, 3, 4)))
        return gxp[:, :, p:p + w, p:p + h, p:p + d]


class Dense(Module):
    """``y = x W^T + b`` on ``[B, in]`` inputs."""

    def __init__(self, fan_in: int, fan_out: int, rng=None, dtype=np.float32):
        super().__init__()
        self.fan_in, self.fan_out = fan_in, fan_out
        self.weight = self.add_param("weight", (fan_out, fan_in),
                                     uniform_init(rng, (fan_out, fan_in), fan_in, dtype))
        self.bias = self.add_param("bias", (fan_out,), zeros_init(rng, (fan_out,), dtype))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeMismatch(f"expected [B, {self.fan_in}], got {x.shape}")
        self._save(x)
        return x @ self.weight.value.T + self.bias.value

    def backward(self, g):
        x = self._pop()
        self.weight.accumulate(g.T @ x)
        self.bias.accumulate(g.sum(axis=0))
        return g @ self.weight.value


def gelu(x):
    return x * (0.5 * (1.0 + erf(x * _INV_SQRT2)))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return cdf + x * pdf


class GELU(Module):
    """Exact (erf) GELU, ``x * Phi(x)``."""

    def forward(self, x):
        self._save(x)
        return gelu(x).astype(x.dtype, copy=False)

    def backward(self, g):
        x = self._pop()
        return (g * gelu_grad(x)).astype(g.dtype, copy=False)


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        self._save(mask)
        return x * mask

    def backward(self, g):
        return g * self._pop()


class Dropout(Module):
    """Inverted dropout; identity in eval mode or at rate 0.

    The random stream is supplied by the owner through ``self.rng`` so that a
    model run is reproducible from its seed.
    """

    def __init__(self, rate: float = 0.1):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise InvalidConfig(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = None

    def forward(self, x, mask=None):
        if not self.training or self.rate == 0.0:
            self._cache = ("identity",)
            return x
        if mask is None:
            if self.rng is None:
                raise InvalidConfig("dropout in training mode needs an rng")
            keep = self.rng.random(x.shape) >= self.rate
            mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._cache = ("mask", mask)
        return x * mask

    def backward(self, g):
        cache = self._pop()
        if cache[0] == "identity":
            return g
        return g * cache[1]


class Sequential(Module):
    """Chain of modules named ``0, 1, ...``."""

    def __init__(self, *modules: Module):
        super().__init__()
        self.seq = [self.add_module(str(i), m) for i, m in enumerate(modules)]

    def forward(self, x):
        for m in self.seq:
            x = m.forward(x)
        return x

    def backward(self, g):
        for m in reversed(self.seq):
            g = m.backward(g)
        return g

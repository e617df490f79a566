"""FNO3d and factorized FNO."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..layers.base import Module
from ..layers.basic import GELU, Conv3d, Dropout, PointwiseLinear
from ..layers.spectral import FFNOLayer, SpectralConv3d
from .base import OperatorModel
from .configs import FfnoConfig, FnoConfig


class FourierLayer(Module):
    """``dropout(gelu(spectral(v) + bypass(v)))``."""

    def __init__(self, width, modes, bypass_kernel=1, dropout_rate=0.1, rng=None, dtype=np.float32):
        super().__init__()
        self.spectral = self.add_module("spectral", SpectralConv3d(width, width, modes, rng, dtype))
        if bypass_kernel == 1:
            bypass = PointwiseLinear(width, width, rng, dtype)
        else:
            bypass = Conv3d(width, width, bypass_kernel, rng, dtype)
        self.bypass = self.add_module("bypass", bypass)
        self.act = self.add_module("act", GELU())
        self.dropout = self.add_module("dropout", Dropout(dropout_rate))

    def forward(self, v):
        a = self.spectral.forward(v) + self.bypass.forward(v)
        return self.dropout.forward(self.act.forward(a))

    def backward(self, g):
        ga = self.act.backward(self.dropout.backward(g))
        return self.spectral.backward(ga) + self.bypass.backward(ga)


class FNO3d(OperatorModel):
    """``Q . (Fourier layer x n_layers) . P`` on ``[B, in, W, H, D]``."""

    kind = "fno"

    def __init__(self, config: FnoConfig, rng=None, dtype=np.float32):
        super().__init__(config, dtype)
        c = config
        modes = c.resolved_modes()
        self.lift = self.add_module("lift", PointwiseLinear(c.in_channels, c.width, rng, dtype))
        self.layers = [
            self.add_module(f"layer{i}", FourierLayer(c.width, modes, c.bypass_kernel, c.dropout_rate, rng, dtype))
            for i in range(c.n_layers)
        ]
        self.proj = self.add_module("proj", PointwiseLinear(c.width, c.out_channels, rng, dtype))

    def forward(self, x):
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(f"expected [B, {self.config.in_channels}, W, H, D], got {x.shape}")
        v = self.lift.forward(x)
        for layer in self.layers:
            v = layer.forward(v)
        return self.proj.forward(v)

    def backward(self, g):
        g = self.proj.backward(g)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return self.lift.backward(g)


class FFNO3d(OperatorModel):
    """``Q2 gelu(Q1 v_L)`` with ``v_0 = gelu(P u)`` and residual factorized layers."""

    kind = "ffno"

    def __init__(self, config: FfnoConfig, rng=None, dtype=np.float32):
        super().__init__(config, dtype)
        c = config
        d = c.d_model
        modes = c.resolved_modes()
        self.lift = self.add_module("lift", PointwiseLinear(c.in_channels, d, rng, dtype))
        self.lift_act = self.add_module("lift_act", GELU())
        self.layers = [self.add_module(f"layer{i}", FFNOLayer(d, modes, rng, dtype)) for i in range(c.n_layers)]
        self.head1 = self.add_module("head1", PointwiseLinear(d, d, rng, dtype))
        self.head_act = self.add_module("head_act", GELU())
        self.head2 = self.add_module("head2", PointwiseLinear(d, c.out_channels, rng, dtype))

    def encode(self, x):
        """Latent ``v_L`` (exposed for residual-path checks)."""
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(f"expected [B, {self.config.in_channels}, W, H, D], got {x.shape}")
        v = self.lift_act.forward(self.lift.forward(x))
        for layer in self.layers:
            v = layer.forward(v)
        return v

    def forward(self, x):
        v = self.encode(x)
        return self.head2.forward(self.head_act.forward(self.head1.forward(v)))

    def backward(self, g):
        g = self.head1.backward(self.head_act.backward(self.head2.backward(g)))
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return self.lift.backward(self.lift_act.backward(g))

"""DeepONet with a CNN branch, five scalar branches and a coordinate trunk."""
from __future__ import annotations

import numpy as np

from ..batch import Batch
from ..errors import InvalidInput, ShapeMismatch
from ..layers.base import Module
from ..layers.basic import Dense, Dropout, ReLU, Sequential
from ..layers.conv import AvgPool2d, BatchNorm2d, Conv2d, MaxPool2d
from ..tensor import linspace_grid
from .base import OperatorModel
from .configs import DeepOnetConfig

SCALAR_NAMES = ("age", "volume", "sex", "frequency", "direction")


def _mlp(sizes, rng, dtype, dropout_rate=None):
    mods = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        mods.append(Dense(a, b, rng, dtype))
        if i < len(sizes) - 2:
            mods.append(ReLU())
            if dropout_rate is not None:
                mods.append(Dropout(dropout_rate))
    return Sequential(*mods)


class CNNBranch(Module):
    """``[B, D, W, H]`` slice stack -> ``[B, p]``."""

    def __init__(self, config: DeepOnetConfig, rng=None, dtype=np.float32):
        super().__init__()
        c = config
        blocks = []
        cin = c.grid[2]
        n = len(c.conv_channels)
        for i, cout in enumerate(c.conv_channels):
            pool = AvgPool2d() if i == n - 1 else MaxPool2d()
            blocks += [Conv2d(cin, cout, c.kernel, rng, dtype), BatchNorm2d(cout, rng=rng, dtype=dtype), ReLU(), pool]
            cin = cout
        self.features = self.add_module("features", Sequential(*blocks))
        w, h = c.pooled_extent()
        sizes = (cin * w * h,) + c.dense_hidden + (c.embedding_dim,)
        self.head = self.add_module("head", _mlp(sizes, rng, dtype, c.dropout_rate))

    def forward(self, x):
        f = self.features.forward(x)
        self._save(f.shape)
        return self.head.forward(f.reshape(f.shape[0], -1))

    def backward(self, g):
        shape = self._pop()
        return self.features.backward(self.head.backward(g).reshape(shape))


class DeepONet(OperatorModel):
    """``out[b, n, c] = sum_i fused[b, c*q + i] * trunk[n, c*q + i]`` with ``q = p / 3``.

    ``fused`` is the elementwise product of the CNN embedding and the five
    scalar embeddings. No output bias.
    """

    kind = "deeponet"

    def __init__(self, config: DeepOnetConfig, rng=None, dtype=np.float32):
        super().__init__(config, dtype)
        c = config
        self.cnn = self.add_module("cnn", CNNBranch(c, rng, dtype))
        self.scalar_nets = [
            self.add_module(f"scalar_{name}", _mlp((1,) + c.scalar_hidden + (c.embedding_dim,), rng, dtype))
            for name in SCALAR_NAMES[: c.n_scalars]
        ]
        self.trunk = self.add_module("trunk", _mlp((3,) + c.trunk_hidden + (c.embedding_dim,), rng, dtype))
        self._coords = None

    # -- core operator on explicit coordinates --------------------------------
    def branch(self, t1, scalars):
        """Per-branch embeddings ``[B, p]`` (CNN first, then scalars)."""
        c = self.config
        if t1.ndim != 5 or t1.shape[1] != 1 or tuple(t1.shape[2:]) != c.grid:
            raise ShapeMismatch(f"expected t1 [B, 1, {c.grid}], got {t1.shape}")
        if scalars.shape != (t1.shape[0], c.n_scalars):
            raise ShapeMismatch(f"expected scalars [{t1.shape[0]}, {c.n_scalars}], got {scalars.shape}")
        img = np.ascontiguousarray(t1[:, 0].transpose(0, 3, 1, 2))  # [B, D, W, H]
        embs = [self.cnn.forward(img)]
        for j, net in enumerate(self.scalar_nets):
            embs.append(net.forward(scalars[:, j:j + 1]))
        return embs

    def fuse(self, fused, trunk_out):
        b = fused.shape[0]
        k, q = self.config.out_components, self.config.basis_per_component
        return np.einsum("bci,nci->bnc", fused.reshape(b, k, q), trunk_out.reshape(-1, k, q))

    def forward(self, t1, scalars, coords):
        """``t1 [B, 1, W, H, D]``, ``scalars [B, 5]``, ``coords [N, 3]`` in ``[0, 1]`` -> ``[B, N, 3]``."""
        coords = np.asarray(coords)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ShapeMismatch(f"expected coords [N, 3], got {coords.shape}")
        if coords.size and (coords.min() < 0.0 or coords.max() > 1.0 or not np.all(np.isfinite(coords))):
            raise InvalidInput("coordinates must be normalized to [0, 1]")
        embs = self.branch(t1, scalars)
        fused = embs[0]
        for e in embs[1:]:
            fused = fused * e
        tr = self.trunk.forward(coords.astype(self.dtype, copy=False))
        self._save((embs, fused, tr))
        return self.fuse(fused, tr)

    def backward(self, g):
        """``g [B, N, 3]``; accumulates parameter gradients and returns None."""
        embs, fused, tr = self._pop()
        b = fused.shape[0]
        k, q = self.config.out_components, self.config.basis_per_component
        gf = np.einsum("bnc,nci->bci", g, tr.reshape(-1, k, q)).reshape(b, -1)
        gt = np.einsum("bnc,bci->nci", g, fused.reshape(b, k, q)).reshape(tr.shape[0], -1)
        self.trunk.backward(gt)
        nets = [self.cnn] + self.scalar_nets
        for j, net in enumerate(nets):
            others = np.ones_like(fused)
            for i, e in enumerate(embs):
                if i != j:
                    others = others * e
            net.backward(gf * others)

    # -- grid interface ---------------------------------------------------------
    def grid_coords(self) -> np.ndarray:
        """Normalized coordinates of every voxel, C-order over ``(W, H, D)``."""
        if self._coords is None:
            axes = [linspace_grid(n, dtype=self.dtype) for n in self.config.grid]
            mesh = np.meshgrid(*axes, indexing="ij")
            self._coords = np.stack([m.ravel() for m in mesh], axis=1)
        return self._coords

    def forward_batch(self, batch: Batch) -> np.ndarray:
        coords = self.grid_coords()
        n_vox = coords.shape[0]
        if self.training and self.config.masked_only:
            idx = np.flatnonzero(batch.mask.reshape(batch.size, -1).any(axis=0))
        else:
            idx = np.arange(n_vox)
        t1 = batch.t1.astype(self.dtype, copy=False)
        sc = batch.scalars.astype(self.dtype, copy=False)
        out = self.forward(t1, sc, coords[idx])  # [B, N, 3]
        pred = np.zeros((batch.size, self.config.out_components, n_vox), dtype=out.dtype)
        pred[:, :, idx] = out.transpose(0, 2, 1)
        self._batch_idx = idx
        return pred.reshape((batch.size, self.config.out_components) + self.config.grid)

    def backward_batch(self, grad: np.ndarray) -> None:
        idx = self._batch_idx
        g = grad.reshape(grad.shape[0], grad.shape[1], -1)[:, :, idx].transpose(0, 2, 1)
        self.backward(np.ascontiguousarray(g))

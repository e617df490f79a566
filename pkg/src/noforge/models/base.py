"""Common interface of the four operator models."""
from __future__ import annotations

import numpy as np

from ..batch import Batch
from ..layers.base import Module
from ..layers.basic import Dropout


class OperatorModel(Module):
    """A model maps a :class:`Batch` to a ``[B, 3, W, H, D]`` displacement field.

    ``rng=None`` builds a meta model (shapes only) for parameter accounting.
    """

    kind = "base"

    def __init__(self, config, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = np.dtype(dtype)

    @property
    def is_meta(self) -> bool:
        return any(p.is_meta for _, p in self.named_params())

    def dropouts(self):
        stack = [self]
        while stack:
            m = stack.pop()
            if isinstance(m, Dropout):
                yield m
            stack.extend(reversed(list(m._children.values())))

    def set_rng(self, rng: np.random.Generator) -> None:
        """Random stream for dropout masks during training."""
        for d in self.dropouts():
            d.rng = rng

    def forward_batch(self, batch: Batch) -> np.ndarray:
        return self.forward(batch.grid_input.astype(self.dtype, copy=False))

    def backward_batch(self, grad: np.ndarray):
        """Accumulate parameter gradients from ``dL/dpred``; returns ``dL/dgrid_input``."""
        return self.backward(grad)

"""Mini-batch of preprocessed samples shared by models, training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    """All arrays share the leading batch axis ``B`` and grid ``(W, H, D)``.

    grid_input: ``[B, 9, W, H, D]`` assembled channels
    t1:         ``[B, 1, W, H, D]`` scaled, masked T1
    scalars:    ``[B, 5]`` in the order age, volume, sex, frequency, direction
    mask:       ``[B, 1, W, H, D]`` binary
    target:     ``[B, 3, W, H, D]`` scaled displacement (real or imaginary part), or None
    """

    grid_input: np.ndarray
    t1: np.ndarray
    scalars: np.ndarray
    mask: np.ndarray
    target: np.ndarray | None = None
    ids: tuple = ()

    @property
    def size(self) -> int:
        return self.grid_input.shape[0]

    @property
    def grid(self) -> tuple:
        return tuple(self.grid_input.shape[2:])

    def astype(self, dtype) -> "Batch":
        cast = lambda a: None if a is None else a.astype(dtype)
        return Batch(cast(self.grid_input), cast(self.t1), cast(self.scalars),
                     cast(self.mask), cast(self.target), self.ids)

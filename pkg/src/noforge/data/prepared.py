"""Preprocessed, in-memory view of a split, sliced into batches."""
from __future__ import annotations

import numpy as np

from ..batch import Batch
from .scaling import ScalingStats, assemble_grid_input, prepared_target, scalar_features


class PreparedSplit:
    """Stacked model inputs and both scaled targets for a list of records."""

    def __init__(self, records, stats: ScalingStats):
        records = list(records)
        self.ids = tuple(r.subject_id for r in records)
        self.stats = stats
        self.grid_input = np.stack([assemble_grid_input(r, stats) for r in records]) if records else None
        self.mask = np.stack([r.mask.astype(np.float32) for r in records]) if records else None
        self.scalars = np.stack([scalar_features(r, stats) for r in records]) if records else None
        self.targets = {w: np.stack([prepared_target(r, stats, w) for r in records]) if records else None
                        for w in ("real", "imag")}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def grid(self) -> tuple:
        return tuple(self.grid_input.shape[2:])

    def batch(self, indices, target: str = "real") -> Batch:
        idx = np.asarray(indices, dtype=np.intp)
        return Batch(
            grid_input=self.grid_input[idx],
            t1=self.grid_input[idx, 0:1],
            scalars=self.scalars[idx],
            mask=self.mask[idx],
            target=self.targets[target][idx],
            ids=tuple(self.ids[i] for i in idx),
        )

    def batches(self, batch_size: int, target: str = "real", order=None, merge_singleton: bool = False):
        """Consecutive batches. With ``merge_singleton`` a trailing batch of one
        sample joins the previous batch so training-mode batch statistics are
        always defined."""
        order = np.arange(len(self)) if order is None else np.asarray(order)
        starts = list(range(0, len(order), batch_size))
        if merge_singleton and len(starts) > 1 and len(order) - starts[-1] == 1:
            starts.pop()
        bounds = starts[1:] + [len(order)]
        for s, e in zip(starts, bounds):
            yield self.batch(order[s:e], target)

"""Evaluation metrics over masked voxel-components."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..data.scaling import unscale_displacement
from ..errors import EmptyMask

ACCURACY_LABEL = "accuracy (rel-L1)"


@dataclass
class MetricsRow:
    """``accuracy = clamp(1 - sum|y - yhat| / sum|y|, 0, 1)`` over masked entries."""

    mae: float
    mse: float
    rmse: float
    accuracy: float
    split: str = ""
    target: str = "real"
    epoch: int | None = None
    model: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


class MetricsAccumulator:
    """Streaming sums so metrics can be built batch by batch in a fixed order."""

    def __init__(self):
        self.abs_err = 0.0
        self.sq_err = 0.0
        self.abs_y = 0.0
        self.count = 0

    def update(self, pred, truth, mask) -> None:
        on = np.broadcast_to(mask.astype(bool), pred.shape)
        e = (pred.astype(np.float64) - truth)[on]
        self.abs_err += float(np.abs(e).sum())
        self.sq_err += float((e * e).sum())
        self.abs_y += float(np.abs(truth[on].astype(np.float64)).sum())
        self.count += int(on.sum())

    def result(self, **tags) -> MetricsRow:
        if self.count == 0:
            raise EmptyMask("no masked voxels to evaluate")
        mae = self.abs_err / self.count
        mse = self.sq_err / self.count
        if self.abs_y > 0:
            acc = min(1.0, max(0.0, 1.0 - self.abs_err / self.abs_y))
        else:
            acc = 1.0 if self.abs_err == 0 else 0.0
        return MetricsRow(mae=mae, mse=mse, rmse=math.sqrt(mse), accuracy=acc, **tags)


def compute_metrics(pred, truth, mask, **tags) -> MetricsRow:
    acc = MetricsAccumulator()
    acc.update(pred, truth, mask)
    return acc.result(**tags)


def predict_split(model, split, target: str = "real", batch_size: int = 4):
    """Eval-mode predictions for a whole split, zeroed outside each mask."""
    model.eval()
    outs = []
    for b in split.batches(batch_size, target):
        outs.append(model.forward_batch(b) * b.mask)
    return np.concatenate(outs, axis=0)


def evaluate(model, split, target: str = "real", batch_size: int = 4, physical_units: bool = False,
             split_name: str = "", epoch=None) -> tuple[MetricsRow, np.ndarray]:
    """Metrics in scaled space (or physical units with ``physical_units``) and the predictions."""
    pred = predict_split(model, split, target, batch_size)
    y = split.targets[target]
    mask = split.mask
    if physical_units:
        st = split.stats
        pm = unscale_displacement(pred, st) * mask
        ym = unscale_displacement(y, st) * mask
        row = compute_metrics(pm, ym, mask, split=split_name, target=target, epoch=epoch, model=model.kind)
    else:
        row = compute_metrics(pred, y, mask, split=split_name, target=target, epoch=epoch, model=model.kind)
    return row, pred

"""Masked mean-squared error."""
from __future__ import annotations

import numpy as np

from ..errors import EmptyMask, ShapeMismatch


def masked_sse(pred, target, mask) -> tuple[float, int, np.ndarray]:
    """Sum of squared masked residuals, element count, and the masked residual.

    ``mask`` is ``[B, 1, ...]`` (broadcast over channels) or pred-shaped.
    Residuals outside the mask are replaced by exact zeros, so values there
    cannot leak into the loss or its gradient (not even NaN/inf).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} != target {target.shape}")
    on = np.broadcast_to(mask.astype(bool), pred.shape)
    count = int(on.sum())
    diff = np.where(on, pred - np.where(on, target, 0), 0)
    return float(np.sum(np.square(diff, dtype=np.float64))), count, diff


def masked_mse(pred, target, mask) -> tuple[float, np.ndarray]:
    """``sum(mask * (pred - target)^2) / count`` and its gradient w.r.t. ``pred``.

    ``count`` is the number of mask-on voxel-components.
    """
    sse, count, diff = masked_sse(pred, target, mask)
    if count == 0:
        raise EmptyMask("mask has no active voxels; masked mean is undefined")
    grad = (2.0 / count) * diff
    return sse / count, grad.astype(pred.dtype, copy=False)

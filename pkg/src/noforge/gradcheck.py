"""Central finite-difference checks for hand-written backward passes."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``; 0 when both vanish.

    ``floor`` keeps gradients that are exactly zero in theory (and pure
    rounding noise numerically) from reading as a 100% error.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def central_difference(loss: Callable[[], float], arr: np.ndarray,
                       indices: Iterable[tuple] | None = None, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of ``loss()`` w.r.t. entries of ``arr`` (perturbed in place).

    Returns values at ``indices`` in order, or the full gradient if omitted.
    """
    if indices is None:
        indices = list(np.ndindex(arr.shape))
        full = True
    else:
        indices = list(indices)
        full = False
    out = np.empty(len(indices), dtype=np.float64)
    for n, idx in enumerate(indices):
        old = arr[idx]
        arr[idx] = old + eps
        fp = loss()
        arr[idx] = old - eps
        fm = loss()
        arr[idx] = old
        out[n] = (fp - fm) / (2.0 * eps)
    return out.reshape(arr.shape) if full else out


def sample_indices(shape, count: int, rng: np.random.Generator) -> list[tuple]:
    """Up to ``count`` distinct random multi-indices into ``shape``."""
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(count, total), replace=False)
    return [np.unravel_index(int(f), shape) for f in flat]

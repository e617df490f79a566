"""Deterministic train/validation/test partitioning."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidConfig


def split_counts(n: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Validation and test sizes rounded to nearest; training takes the remainder.

    249 at 70:10:20 gives (174, 25, 50); 10 gives (7, 1, 2).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidConfig(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_val = int(math.floor(n * ratios[1] + 0.5))
    n_test = int(math.floor(n * ratios[2] + 0.5))
    n_train = n - n_val - n_test
    counts = (n_train, n_val, n_test)
    if min(counts) < 1:
        raise InvalidConfig(f"{n} samples at ratios {tuple(ratios)} leave an empty split: {counts}")
    return counts


def split_indices(n: int, ratios=(0.7, 0.1, 0.2), seed: int = 0,
                  strata: Sequence | None = None) -> tuple[list, list, list]:
    """Seeded permutation of ``range(n)`` cut into contiguous train/val/test blocks.

    With ``strata`` (one key per item), each stratum is shuffled on its own and
    the strata are interleaved round-robin before cutting, which spreads every
    stratum across the three splits.
    """
    n_train, n_val, _ = split_counts(n, ratios)
    rng = np.random.default_rng(seed)
    if strata is None:
        order = [int(i) for i in rng.permutation(n)]
    else:
        if len(strata) != n:
            raise InvalidConfig("strata must have one key per record")
        groups = {}
        for i, key in enumerate(strata):
            groups.setdefault(key, []).append(i)
        queues = [[g[j] for j in rng.permutation(len(g))] for _, g in sorted(groups.items(), key=lambda kv: str(kv[0]))]
        order = []
        while any(queues):
            for q in queues:
                if q:
                    order.append(q.pop(0))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split_dataset(records, ratios=(0.7, 0.1, 0.2), seed: int = 0,
                  strata: Callable | None = None):
    """Split records; ``strata`` is an optional ``record -> key`` hook."""
    records = list(records)
    keys = None if strata is None else [strata(r) for r in records]
    tr, va, te = split_indices(len(records), ratios, seed, keys)
    return [records[i] for i in tr], [records[i] for i in va], [records[i] for i in te]

"""Forward-pass throughput measurement."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig


@dataclass
class BenchResult:
    model: str
    iters_per_second: float
    std: float
    parameters: int
    iters: int


def throughput_benchmark(model, batch, warmup: int = 2, iters: int = 10) -> BenchResult:
    """Eval-mode forward passes on ``batch``; mean and std of per-iteration rates."""
    if iters < 10:
        raise InvalidConfig("iters must be >= 10")
    model.eval()
    for _ in range(warmup):
        model.forward_batch(batch)
    rates = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        model.forward_batch(batch)
        rates[i] = 1.0 / max(time.perf_counter() - t0, 1e-12)
    return BenchResult(model.kind, float(rates.mean()), float(rates.std()), model.param_count(), iters)

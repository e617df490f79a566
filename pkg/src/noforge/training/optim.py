"""AdamW with decoupled weight decay, and a reduce-on-plateau scheduler."""
from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidConfig, NonFiniteGradient


class AdamW:
    """Per step ``t`` (starting at 1), for every parameter ``theta`` with gradient ``g``::

        theta <- theta - lr * wd * theta                  (decoupled decay)
        m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
        theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

    All gradients are checked for finiteness before anything is updated.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-5):
        if lr <= 0 or eps <= 0 or weight_decay < 0 or not all(0 <= b < 1 for b in betas):
            raise InvalidConfig("invalid AdamW hyper-parameters")
        self.params = list(params.items()) if hasattr(params, "items") else list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in self.params}
        self.v = {name: np.zeros_like(p.value) for name, p in self.params}

    def step(self) -> None:
        for name, p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(name)
        self.step_count += 1
        t = self.step_count
        b1, b2, lr = self.beta1, self.beta2, self.lr
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params:
            g = p.grad
            if self.weight_decay:
                p.value -= (lr * self.weight_decay) * p.value
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype, copy=False)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` non-improving epochs.

    The first observation only sets the reference loss. An observation improves
    when it is below ``best - threshold``; otherwise the counter grows and, on
    reaching ``patience``, the rate is reduced (never below ``min_lr``) and the
    counter resets.
    """

    def __init__(self, lr=1e-3, factor=0.5, patience=10, min_lr=0.0, threshold=1e-12):
        if not 0 < factor < 1 or patience < 1 or min_lr < 0:
            raise InvalidConfig("invalid plateau scheduler settings")
        self.lr = float(lr)
        self.factor = float(factor)
        self.patience = int(patience)
        self.min_lr = float(min_lr)
        self.threshold = float(threshold)
        self.best = None
        self.bad_epochs = 0

    def observe(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise InvalidConfig(f"validation loss must be finite, got {val_loss}")
        if self.best is None:
            self.best = val_loss
            return self.lr
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for _, p in params]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if total > max_norm > 0:
        s = max_norm / total
        for g in grads:
            g *= s
    return total

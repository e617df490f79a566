"""Parameters, modules and forward caches.

A module built with ``rng=None`` is a *meta* module: parameter shapes are
known (so ``param_count`` works at full scale) but nothing is allocated.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ContractViolation, ShapeMismatch


class Param:
    __slots__ = ("shape", "value", "grad")

    def __init__(self, shape, value: np.ndarray | None = None):
        self.shape = tuple(int(s) for s in shape)
        self.value = value
        self.grad = None if value is None else np.zeros_like(value)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def is_meta(self) -> bool:
        return self.value is None

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {self.shape}")
        self.grad += g


def uniform_init(rng, shape, fan_in, dtype):
    if rng is None:
        return None
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def zeros_init(rng, shape, dtype):
    if rng is None:
        return None
    return np.zeros(shape, dtype=dtype)


class Module:
    """Container for parameters, buffers and child modules (registration order kept)."""

    def __init__(self):
        self._params: OrderedDict[str, Param] = OrderedDict()
        self._buffers: OrderedDict[str, np.ndarray] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()
        self._cache = None
        self.training = True

    def add_param(self, name: str, shape, value) -> Param:
        p = Param(shape, value)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def add_buffer(self, name: str, value) -> None:
        self._buffers[name] = value

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_params(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        """Yields ``(full_name, owner, local_name)`` so buffers can be reassigned."""
        for name in self._buffers:
            yield prefix + name, self, name
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def params(self) -> "OrderedDict[str, Param]":
        return OrderedDict(self.named_params())

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            if p.grad is not None:
                p.grad.fill(0)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _save(self, cache) -> None:
        self._cache = cache

    def _pop(self):
        cache = self._cache
        if cache is None:
            raise ContractViolation(
                f"{type(self).__name__}.backward called without a matching forward")
        self._cache = None
        return cache

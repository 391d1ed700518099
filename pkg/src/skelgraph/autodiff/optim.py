"""Plain SGD with optional momentum and global-norm clipping."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from ..errors import ParameterError, UsageError
from .core import DiffArray


def _items(params) -> list[tuple[str, DiffArray]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or str(i), p) for i, p in enumerate(params)]


def sgd_step(params, lr: float, grads: Mapping[str, np.ndarray] | None = None) -> None:
    """In-place p <- p - lr * g for every parameter.

    Gradients come from ``grads`` when given, otherwise from ``p.grad``.
    """
    if lr < 0:
        raise ParameterError(f"learning rate must be non-negative, got {lr}")
    items = _items(params)
    for name, p in items:
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            raise UsageError(f"no gradient for parameter '{name}'")
    for name, p in items:
        g = grads[name] if grads is not None else p.grad
        p.data -= (lr * g).astype(p.data.dtype, copy=False)


class SGD:
    def __init__(self, params: Mapping[str, DiffArray], momentum: float = 0.0, clip_norm: float | None = None):
        if momentum < 0:
            raise ParameterError("momentum must be non-negative")
        self.params = params
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> float:
        """Apply one update and return the pre-clipping global gradient norm."""
        for name, p in self.params.items():
            if p.grad is None:
                raise UsageError(f"no gradient for parameter '{name}'")
        total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in self.params.values())))
        scale = 1.0
        if self.clip_norm is not None and total > self.clip_norm:
            scale = self.clip_norm / total
        grads = {}
        for name, p in self.params.items():
            g = p.grad * scale
            if self.momentum:
                v = self.velocity.get(name)
                v = g if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            grads[name] = g
        sgd_step(self.params, lr, grads)
        return total

from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import Param


def grad_norm(params: Sequence[Param]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: Sequence[Param], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = grad_norm(params)
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= s
    return total


class SGDMomentum:
    def __init__(self, params: Sequence[Param], lr: float = 1e-2, momentum: float = 0.9,
                 clip: float | None = 1.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        norm = clip_grad_norm(self.params, self.clip) if self.clip else grad_norm(self.params)
        for p, v in zip(self.params, self.velocity):
            if not p.requires_grad:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v
        return norm

    def state(self) -> dict[str, np.ndarray]:
        return {f"velocity.{i}": v for i, v in enumerate(self.velocity)}


class Adam:
    def __init__(self, params: Sequence[Param], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        norm = clip_grad_norm(self.params, self.clip) if self.clip else grad_norm(self.params)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.requires_grad:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .layers import Param
from .tensor import Tensor, no_grad


class EvaluationError(RuntimeError):
    pass


def _value(f: Callable[[], Tensor | float]) -> float:
    out = f()
    val = float(out.data) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(val):
        raise EvaluationError(f"non-finite loss {val}")
    return val


def numeric_grad(f: Callable[[], Tensor | float], p: Param, idx: tuple, eps: float,
                 order: int = 2) -> float:
    """Central difference of ``f`` along one entry of ``p``.

    ``order=2`` is the two-point stencil, ``order=4`` the five-point one.
    """
    orig = p.data[idx]
    def at(h):
        p.data[idx] = orig + h
        return _value(f)
    try:
        with no_grad():
            if order == 2:
                d = (at(eps) - at(-eps)) / (2 * eps)
            elif order == 4:
                d = (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps)
            else:
                raise ValueError("order must be 2 or 4")
    finally:
        p.data[idx] = orig
    return d


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], eps: float = 1e-6,
               order: int = 2, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph from the current parameter values on each
    call. With ``max_entries`` set, at most that many entries per parameter
    are probed (chosen by ``rng``); otherwise every entry is checked.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("non-finite loss")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = np.arange(p.data.size)
        if max_entries is not None and flat.size > max_entries:
            flat = np.sort(rng.choice(flat, size=max_entries, replace=False))
        for k in flat:
            idx = np.unravel_index(k, p.data.shape)
            num = numeric_grad(f, p, idx, eps, order)
            a = ga[idx]
            err = abs(a - num) / (abs(a) + abs(num) + 1e-12)
            worst = max(worst, err)
    return worst

"""Parameters, modules and the small layer zoo used across the planner."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


class Param(Tensor):
    """A trainable leaf. ``grad`` always has the value's shape."""

    def __init__(self, value, name: str | None = None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    @property
    def frozen(self) -> bool:
        return not self.requires_grad


class Module:
    """Base class: parameters are discovered from attributes, lists and dicts."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self, trainable_only: bool = False) -> list[Param]:
        ps = [p for _, p in self.named_parameters()]
        return [p for p in ps if p.requires_grad] if trainable_only else ps

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.zero_grad()
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters in state: {missing[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            val = np.asarray(state[name], dtype=np.float64)
            if val.shape != p.data.shape:
                raise DimensionError(f"{name}: expected {p.data.shape}, got {val.shape}")
            p.data = val.copy()
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used by the float32 latency benchmark)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self


def _walk(val, name: str):
    if isinstance(val, Param):
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(prefix=name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(val, dict):
        for k in sorted(val):
            yield from _walk(val[k], f"{name}.{k}")


# -- functional forms ------------------------------------------------------
def linear_forward(x: Tensor, w: Param, b: Param | None = None) -> Tensor:
    """``x @ W + b`` with the bias broadcast over rows."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = T.matmul(x, w)
    return y if b is None else y + b


def layer_norm(x: Tensor, gamma: Param, beta: Param, eps: float = 1e-5) -> Tensor:
    if gamma.shape[-1] != x.shape[-1] or beta.shape[-1] != x.shape[-1]:
        raise DimensionError("layer_norm: affine width does not match input width")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return T.layer_norm(x, gamma, beta, eps)


def gelu(x: Tensor) -> Tensor:
    return T.gelu(x)


def softmax_row(x: Tensor) -> Tensor:
    return T.softmax(x, axis=-1)


# -- modules -----------------------------------------------------------------
class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias: bool = True, init_scale: float = 1.0):
        std = init_scale / np.sqrt(n_in)
        self.weight = Param(rng.normal(0.0, std, size=(n_in, n_out)))
        self.bias = Param(np.zeros(n_out)) if bias else None

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gamma = Param(np.ones(width))
        self.beta = Param(np.zeros(width))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MlpStack(Module):
    """Ordered linear layers, each optionally Pre-LayerNormed and/or GELU-activated.

    ``dims`` chains the widths; ``act`` and ``norm`` hold one flag per layer.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator,
                 act: list[bool] | None = None, norm: list[bool] | None = None):
        n = len(dims) - 1
        if n < 1:
            raise ValueError("MlpStack needs at least two widths")
        self.act = list(act) if act is not None else [True] * (n - 1) + [False]
        self.norm = list(norm) if norm is not None else [False] * n
        if len(self.act) != n or len(self.norm) != n:
            raise ValueError("one act/norm flag per layer")
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(n)]
        self.norms = [LayerNorm(dims[i]) if self.norm[i] else None for i in range(n)]

    def forward(self, x: Tensor) -> Tensor:
        for lin, ln, act in zip(self.layers, self.norms, self.act):
            if ln is not None:
                x = ln(x)
            x = lin(x)
            if act:
                x = T.gelu(x)
        return x


class ResMLPBlock(Module):
    """``h + W2 · GELU(W1 · LN(h))``."""

    def __init__(self, width: int, hidden: int, rng: np.random.Generator):
        self.norm = LayerNorm(width)
        self.fc1 = Linear(width, hidden, rng)
        self.fc2 = Linear(hidden, width, rng, init_scale=0.5)

    def forward(self, h: Tensor) -> Tensor:
        return h + self.fc2(T.gelu(self.fc1(self.norm(h))))

"""Guidance-conditioned MLP-Mixer over the three-token decoder input."""

from __future__ import annotations

import numpy as np

from ..nn import F, LayerNorm, Linear, MlpStack, Module, Tensor
from ..nn.tensor import DimensionError

N_TOKENS = 3
MAX_FREQ = 100.0


def sinusoid(alpha: np.ndarray, width: int) -> np.ndarray:
    """(n,) scalars → (n, width) ``[sin(a f_i), cos(a f_i)]`` with geometric f_i in [1, MAX_FREQ]."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    freqs = np.geomspace(1.0, MAX_FREQ, width // 2)
    ang = alpha[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ConditionEmbed(Module):
    """Sinusoidal features of the guidance scale through a 2-layer MLP."""

    def __init__(self, width: int, rng: np.random.Generator):
        if width % 2:
            raise ValueError("embedding width must be even")
        self.width = width
        self.mlp = MlpStack([width, width, width], rng)

    def forward(self, alpha) -> Tensor:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        if not np.all(np.isfinite(alpha)):
            raise ValueError("guidance scale must be finite")
        return self.mlp(Tensor(sinusoid(alpha, self.width)))


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    # (B, N, D) activations, (B, D) modulation broadcast over tokens
    B, D = shift.shape
    return x * (scale.reshape(B, 1, D) + 1.0) + shift.reshape(B, 1, D)


class MixerBlock(Module):
    """Token-mixing then channel-mixing MLP, each behind adaLN and a learned gate.

    The modulation map starts at zero, so a fresh block is the identity.
    """

    def __init__(self, width: int, n_tokens: int, token_hidden: int, channel_mult: int,
                 rng: np.random.Generator):
        self.width = width
        self.n_tokens = n_tokens
        self.norm1 = LayerNorm(width)
        self.token_mix = MlpStack([n_tokens, token_hidden, n_tokens], rng)
        self.norm2 = LayerNorm(width)
        self.channel_mix = MlpStack([width, channel_mult * width, width], rng)
        self.modulation = Linear(width, 6 * width, rng, init_scale=0.0)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        B, N, D = x.shape
        if N != self.n_tokens or D != self.width:
            raise DimensionError(f"mixer block expects (*, {self.n_tokens}, {self.width}), got {x.shape}")
        mod = self.modulation(F.gelu(cond))
        sh1, sc1, g1, sh2, sc2, g2 = (mod[:, i * D:(i + 1) * D] for i in range(6))
        h = _modulate(self.norm1(x), sh1, sc1)
        h = F.swapaxes(self.token_mix(F.swapaxes(h, 1, 2)), 1, 2)
        x = x + g1.reshape(B, 1, D) * h
        h = self.channel_mix(_modulate(self.norm2(x), sh2, sc2))
        return x + g2.reshape(B, 1, D) * h


class Readout(Module):
    """Token mean, then a linear map to PCA coefficients times a fixed per-dimension gain."""

    def __init__(self, width: int, d_out: int, rng: np.random.Generator, init_scale: float = 1e-3):
        self.linear = Linear(width, d_out, rng, init_scale=init_scale)
        self.gain = np.ones(d_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.linear(F.tmean(x, axis=1)) * Tensor(self.gain)


class MixerDecoder(Module):
    def __init__(self, width: int, depth: int, d_out: int, token_hidden: int, channel_mult: int,
                 rng: np.random.Generator, context_modulation: bool = False):
        if depth < 1:
            raise ValueError("mixer needs at least one block")
        self.cond = ConditionEmbed(width, rng)
        self.blocks = [MixerBlock(width, N_TOKENS, token_hidden, channel_mult, rng) for _ in range(depth)]
        self.readout = Readout(width, d_out, rng)
        self.context = Linear(2 * width, width, rng, init_scale=0.1) if context_modulation else None

    def condition(self, alpha, n_rows: int, context: Tensor | None = None) -> Tensor:
        alpha = np.broadcast_to(np.atleast_1d(np.asarray(alpha, dtype=np.float64)), (n_rows,))
        c = self.cond(alpha)
        if self.context is not None:
            if context is None:
                raise ValueError("context modulation is enabled but no context was given")
            c = c + self.context(context)
        return c

    def forward(self, x: Tensor, alpha, context: Tensor | None = None) -> Tensor:
        """``x`` (B, 3, D), ``alpha`` scalar or (B,), optional ``context`` (B, 2D) → (B, d)."""
        c = self.condition(alpha, x.shape[0], context)
        for blk in self.blocks:
            x = blk(x, c)
        return self.readout(x)

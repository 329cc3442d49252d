"""Hierarchical polyline encoder: vectors → polyline features → scene tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..nn import F, Linear, LayerNorm, MlpStack, Module, Param, ResMLPBlock, Tensor
from ..nn.tensor import DimensionError
from .scenario import Scenario, SceneError
from .vectorize import VECTOR_WIDTH, SceneBatch, collate, vectorize


@dataclass
class SceneTokens:
    agent_token: Tensor   # (B, D)
    map_token: Tensor     # (B, D)

    @property
    def width(self) -> int:
        return self.agent_token.shape[-1]


class PointEncoder(Module):
    """``h = MLP_pt(v) + Proj(v)`` followed by residual refinement blocks."""

    def __init__(self, n_in: int, width: int, n_extra: int, rng: np.random.Generator):
        self.mlp_pt = MlpStack([n_in, width, width], rng)
        self.proj = Linear(n_in, width, rng)
        self.extra = [ResMLPBlock(width, 2 * width, rng) for _ in range(n_extra)]

    def lift(self, v: Tensor) -> Tensor:
        if v.shape[-1] != self.proj.n_in:
            raise DimensionError(f"vector width {v.shape[-1]} != encoder input {self.proj.n_in}")
        return self.mlp_pt(v) + self.proj(v)

    def forward(self, v: Tensor) -> Tensor:
        h = self.lift(v)
        for blk in self.extra:
            h = blk(h)
        return h


class AttentionPool(Module):
    """Softmax pooling with scores ``q^T W h_j`` over the second-to-last axis."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.q = Param(rng.normal(0.0, 1.0 / np.sqrt(width), size=(1, width)))
        self.W = Param(rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, width)))
        self.last_weights: np.ndarray | None = None

    def weights(self, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        u = F.matmul(self.q, self.W)                       # (1, D)
        scores = F.matmul(h, u.T)                          # (..., L, 1)
        scores = scores.reshape(*scores.shape[:-1])
        return F.softmax(scores, axis=-1, mask=mask)

    def forward(self, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if h.shape[-2] == 0:
            raise SceneError("attention pooling over an empty set")
        alpha = self.weights(h, mask)
        self.last_weights = alpha.data
        return F.tsum(alpha.reshape(*alpha.shape, 1) * h, axis=-2)


class SelfAttentionBlock(Module):
    """Pre-LN multi-head self-attention and feed-forward, both residual."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.heads = heads
        self.norm1 = LayerNorm(width)
        self.q = Linear(width, width, rng)
        # a key bias only shifts each query's scores by a constant, which softmax ignores
        self.k = Linear(width, width, rng, bias=False)
        self.v = Linear(width, width, rng)
        self.out = Linear(width, width, rng, init_scale=0.5)
        self.norm2 = LayerNorm(width)
        self.ffn = MlpStack([width, ffn_mult * width, width], rng)
        self.last_weights: np.ndarray | None = None

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """``x`` is (B, N, D); ``mask`` (B, N) marks real tokens (keys)."""
        B, N, D = x.shape
        hd = D // self.heads
        h = self.norm1(x)
        q, k, v = (F.swapaxes(lin(h).reshape(B, N, self.heads, hd), 1, 2)   # (B, h, N, hd)
                   for lin in (self.q, self.k, self.v))
        scores = F.matmul(q, k.T) * (1.0 / np.sqrt(hd))
        key_mask = None if mask is None else mask[:, None, None, :]
        att = F.softmax(scores, axis=-1, mask=key_mask)
        self.last_weights = att.data
        ctx = F.swapaxes(F.matmul(att, v), 1, 2).reshape(B, N, D)
        x = x + self.out(ctx)
        return x + self.ffn(self.norm2(x))


def global_fuse(agent_feats: Tensor, map_feats: Tensor, blocks: list[SelfAttentionBlock],
                agent_mask: np.ndarray | None = None,
                map_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Joint attention over the concatenated token sets, then split at the boundary."""
    if agent_feats.shape[1] == 0 or map_feats.shape[1] == 0:
        raise SceneError("global fusion needs both modalities")
    n_agent = agent_feats.shape[1]
    x = F.concat([agent_feats, map_feats], axis=1)
    mask = None
    if agent_mask is not None or map_mask is not None:
        am = agent_mask if agent_mask is not None else np.ones(agent_feats.shape[:2], bool)
        mm = map_mask if map_mask is not None else np.ones(map_feats.shape[:2], bool)
        mask = np.concatenate([am, mm], axis=1)
    for blk in blocks:
        x = blk(x, mask)
    return x[:, :n_agent], x[:, n_agent:]


class SceneEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D = cfg.hidden
        self.cfg = cfg
        self.map_points = PointEncoder(VECTOR_WIDTH, D, cfg.point_extra_layers, rng)
        self.agent_points = PointEncoder(VECTOR_WIDTH, D, cfg.point_extra_layers, rng)
        self.map_pool = AttentionPool(D, rng)
        self.agent_pool = AttentionPool(D, rng)
        self.map_attn = [SelfAttentionBlock(D, cfg.heads, rng) for _ in range(cfg.map_layers)]
        self.agent_attn = [SelfAttentionBlock(D, cfg.heads, rng) for _ in range(cfg.agent_layers)]
        self.global_attn = [SelfAttentionBlock(D, cfg.heads, rng) for _ in range(cfg.global_layers)]
        self.map_token_pool = AttentionPool(D, rng)
        self.agent_token_pool = AttentionPool(D, rng)

    def forward(self, batch: SceneBatch) -> SceneTokens:
        if batch.map_vectors.shape[1] == 0 or not batch.map_poly.any(axis=1).all():
            raise SceneError("every scene needs at least one map polyline")
        if batch.agent_vectors.shape[1] == 0 or not batch.agent_poly.any(axis=1).all():
            raise SceneError("every scene needs at least one agent polyline")
        m = self.map_pool(self.map_points(Tensor(batch.map_vectors)), batch.map_mask)
        a = self.agent_pool(self.agent_points(Tensor(batch.agent_vectors)), batch.agent_mask)
        for blk in self.map_attn:
            m = blk(m, batch.map_poly)
        for blk in self.agent_attn:
            a = blk(a, batch.agent_poly)
        a, m = global_fuse(a, m, self.global_attn, batch.agent_poly, batch.map_poly)
        return SceneTokens(self.agent_token_pool(a, batch.agent_poly),
                           self.map_token_pool(m, batch.map_poly))

    def vectorize(self, scenario: Scenario):
        c = self.cfg
        return vectorize(scenario, c.max_vectors, c.max_map_polylines, c.max_agent_polylines)

    def batch(self, scenarios: list[Scenario]) -> SceneBatch:
        return collate([self.vectorize(s) for s in scenarios])


def encode_scene(scenario: Scenario | list[Scenario], encoder: SceneEncoder) -> SceneTokens:
    """Tokens for one scenario (B = 1) or a list of scenarios."""
    scenes = scenario if isinstance(scenario, list) else [scenario]
    return encoder(encoder.batch(scenes))

"""Scene encoder + mixer decoder + PCA head: one forward pass per proposal."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..manifold.pca import PcaHead, StateError, pca_decode
from ..nn import F, Module, Tensor, checkpoint, no_grad
from ..nn.tensor import DimensionError
from ..scene import Scenario, SceneEncoder, SceneTokens
from .mixer import MixerBlock, MixerDecoder

PROPOSAL_VERSION = 1


class GenerationError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


@dataclass
class ProposalSet:
    trajectories: np.ndarray   # (K, H, 2)
    latents: np.ndarray        # (K, d)
    alpha_used: float
    seed: int
    nfe: int = 1
    config_hash: str = ""

    @property
    def k(self) -> int:
        return len(self.trajectories)

    def to_json(self) -> str:
        doc = {
            "version": PROPOSAL_VERSION,
            "k": self.k,
            "alpha": self.alpha_used,
            "seed": self.seed,
            "nfe": self.nfe,
            "config_hash": self.config_hash,
            "trajectories": self.trajectories.tolist(),
            "latents": self.latents.tolist(),
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ProposalSet":
        doc = json.loads(text)
        if doc.get("version") != PROPOSAL_VERSION:
            raise ValueError(f"unsupported proposal file version {doc.get('version')}")
        traj = np.array(doc["trajectories"], dtype=np.float64)
        if traj.ndim != 3 or traj.shape[0] != doc["k"]:
            raise ValueError("proposal file: trajectory array does not match k")
        return cls(traj, np.array(doc["latents"], dtype=np.float64), float(doc["alpha"]),
                   int(doc["seed"]), int(doc["nfe"]), doc.get("config_hash", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ProposalSet":
        return cls.from_json(Path(path).read_text())


def assemble_input(noise, tokens: SceneTokens) -> Tensor:
    """Stack ``[noise, agent, map]`` on the token axis → (K, 3, D).

    ``tokens`` may hold one scene (broadcast over the K noise rows) or K rows.
    """
    noise = F.as_tensor(noise)
    if noise.ndim == 1:
        noise = noise.reshape(1, -1)
    K, D = noise.shape
    a, m = tokens.agent_token, tokens.map_token
    if a.shape[-1] != D or m.shape[-1] != D:
        raise DimensionError(f"noise width {D} != token width {a.shape[-1]}")
    if a.shape[0] == 1 and K > 1:
        a, m = F.broadcast_to(a, (K, D)), F.broadcast_to(m, (K, D))
    elif a.shape[0] != K:
        raise DimensionError(f"{a.shape[0]} token rows for {K} noise rows")
    return F.stack([noise, a, m], axis=1)


def condition_embed(alpha, planner: "Planner") -> np.ndarray:
    with no_grad():
        return planner.decoder.cond(alpha).data


def mixer_forward(x: Tensor, alpha, decoder: MixerDecoder, context: Tensor | None = None) -> Tensor:
    return decoder(x, alpha, context)


class Planner(Module):
    def __init__(self, cfg: RunConfig, pca: PcaHead | None = None, seed: int = 0):
        m = cfg.model
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = SceneEncoder(m, rng)
        self.decoder = MixerDecoder(m.hidden, m.mixer_depth, m.d_pca, m.mixer_token_hidden,
                                    m.mixer_channel_mult, rng, m.context_modulation)
        self.pca = PcaHead()
        self.trained = False
        self.decoder_calls = 0
        if pca is not None:
            self.set_pca(pca)

    @property
    def width(self) -> int:
        return self.cfg.model.hidden

    @property
    def blocks(self) -> list[MixerBlock]:
        return self.decoder.blocks

    def set_pca(self, pca: PcaHead) -> None:
        if pca.d != self.cfg.model.d_pca:
            raise DimensionError(f"PCA head has d={pca.d}, config wants {self.cfg.model.d_pca}")
        self.pca = pca
        # readout works in unit-variance PCA coordinates
        self.decoder.readout.gain = np.sqrt(np.maximum(pca.explained_variance, 1e-12))

    def tokens(self, scenarios: list[Scenario]) -> SceneTokens:
        return self.encoder(self.encoder.batch(scenarios))

    def latents(self, tokens: SceneTokens, noise, alpha) -> Tensor:
        """One decoder evaluation for every noise row; ``tokens`` rows align with noise rows."""
        x = assemble_input(noise, tokens)
        ctx = None
        if self.decoder.context is not None:
            K = x.shape[0]
            a, m = tokens.agent_token, tokens.map_token
            if a.shape[0] == 1 and K > 1:
                a, m = F.broadcast_to(a, (K, self.width)), F.broadcast_to(m, (K, self.width))
            ctx = F.concat([a, m], axis=1)
        self.decoder_calls += 1
        return self.decoder(x, alpha, ctx)

    def decode(self, y: Tensor) -> Tensor:
        if not self.pca.fitted:
            raise StateError("planner has no fitted PCA head")
        return pca_decode(y, self.pca)

    def sample(self, scenarios: list[Scenario], k: int, alphas, rng: np.random.Generator):
        """Differentiable (B*K, H, 2) proposals and latents; rows grouped by scenario."""
        tok = self.tokens(scenarios)
        B = len(scenarios)
        rows = np.repeat(np.arange(B), k)
        tok_rows = SceneTokens(tok.agent_token[rows], tok.map_token[rows])
        noise = rng.standard_normal((B * k, self.width))
        alpha_rows = np.repeat(np.broadcast_to(np.asarray(alphas, dtype=np.float64), (B,)), k)
        y = self.latents(tok_rows, noise, alpha_rows)
        return self.decode(y), y

    def generate(self, scenario: Scenario, k: int, alpha: float, seed: int,
                 allow_untrained: bool = False) -> ProposalSet:
        if k < 1:
            raise ValueError("K must be at least 1")
        if not (self.trained or allow_untrained):
            raise StateError("planner is untrained; pass allow_untrained=True for smoke runs")
        rng = np.random.default_rng(seed)
        before = self.decoder_calls
        with no_grad():
            tok = self.tokens([scenario])
            noise = rng.standard_normal((k, self.width))
            y = self.latents(tok, noise, alpha)
            traj = self.decode(y).data
        nfe = self.decoder_calls - before
        bad = np.flatnonzero(~np.isfinite(traj).all(axis=(1, 2)))
        if len(bad):
            raise GenerationError(f"proposal {bad[0]} is not finite", int(bad[0]))
        return ProposalSet(traj, y.data, float(alpha), int(seed), nfe, self.cfg.hash())

    # -- persistence -----------------------------------------------------------
    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        arrays = {f"param.{k}": v for k, v in self.state_dict().items()}
        arrays.update(self.pca.to_arrays())
        meta = {"kind": "planner", "config_hash": self.cfg.hash(), "config": self.cfg.to_dict(),
                "trained": self.trained, **(extra_meta or {})}
        checkpoint.save(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path, cfg: RunConfig | None = None) -> "Planner":
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "planner":
            raise checkpoint.CheckpointError(f"{path} is not a planner checkpoint")
        stored = RunConfig.from_dict(meta["config"])
        if cfg is not None and cfg.hash() != meta["config_hash"]:
            raise checkpoint.CheckpointError(
                f"{path} was written with config hash {meta['config_hash']}, current config is {cfg.hash()}")
        planner = cls(stored)
        planner.load_state_dict({k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})
        planner.set_pca(PcaHead.from_arrays(arrays))
        planner.trained = bool(meta.get("trained", False))
        return planner


def generate(scenario: Scenario, k: int, alpha: float, seed: int, planner: Planner,
             allow_untrained: bool = False) -> ProposalSet:
    return planner.generate(scenario, k, alpha, seed, allow_untrained)

"""Displacement-space VAE that defines the 32-dim latent manifold."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import checkpoint
from ..nn import F, LayerNorm, Linear, Module, ResMLPBlock, Tensor, no_grad
from .pca import StateError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class TrainingError(RuntimeError):
    pass


def to_displacements(traj):
    """Per-step deltas ``p[t+1] - p[t]`` along the waypoint axis (-2).

    Works on numpy arrays and Tensors of shape (..., H, 2).
    """
    h = traj.shape[-2]
    if h < 2:
        raise ValueError("trajectory needs at least 2 waypoints")
    if isinstance(traj, Tensor):
        return traj[..., 1:, :] - traj[..., :-1, :]
    traj = np.asarray(traj, dtype=np.float64)
    return traj[..., 1:, :] - traj[..., :-1, :]


def from_displacements(deltas: np.ndarray, start) -> np.ndarray:
    start = np.asarray(start, dtype=np.float64)
    return np.concatenate([start[..., None, :], start[..., None, :] + np.cumsum(deltas, axis=-2)], axis=-2)


def reparameterize(mu, sigma, eps):
    """``z = mu + eps * sigma``; Tensor inputs stay on the tape."""
    if isinstance(mu, Tensor) or isinstance(sigma, Tensor):
        return F.as_tensor(mu) + F.as_tensor(sigma) * F.as_tensor(eps)
    return np.asarray(mu) + np.asarray(eps) * np.asarray(sigma)


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I)), summed over dimensions."""
    per = (mu * mu + F.exp(logvar) - 1.0 - logvar) * 0.5
    return F.tmean(F.tsum(per, axis=-1))


class ResMLP(Module):
    """Input projection, ``n_blocks`` Pre-LN residual GELU blocks, final LayerNorm."""

    def __init__(self, n_in: int, width: int, n_blocks: int, rng: np.random.Generator):
        self.inp = Linear(n_in, width, rng)
        self.blocks = [ResMLPBlock(width, width, rng) for _ in range(n_blocks)]
        self.norm = LayerNorm(width)

    def forward(self, x: Tensor) -> Tensor:
        h = self.inp(x)
        for b in self.blocks:
            h = b(h)
        return self.norm(h)


class VaeEncoder(Module):
    def __init__(self, n_in: int, width: int, n_blocks: int, latent: int, rng: np.random.Generator):
        self.body = ResMLP(n_in, width, n_blocks, rng)
        self.mu_head = Linear(width, latent, rng)
        self.logvar_head = Linear(width, latent, rng, init_scale=0.1)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.body(x)
        return self.mu_head(h), F.clip(self.logvar_head(h), LOGVAR_MIN, LOGVAR_MAX)


class VaeDecoder(Module):
    def __init__(self, latent: int, width: int, n_blocks: int, n_out: int, rng: np.random.Generator):
        self.body = ResMLP(latent, width, n_blocks, rng)
        self.out = Linear(width, n_out, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.out(self.body(z))


@dataclass
class VaeLosses:
    total: float
    recon: float
    kl: float
    aux_cls: float


class TrajectoryVAE(Module):
    """Encoder, mirrored decoder and a 6-way intent classifier on z."""

    def __init__(self, horizon: int, latent: int = 32, width: int = 256, n_blocks: int = 4,
                 n_tags: int = 6, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.horizon = horizon
        self.latent = latent
        n_in = 2 * (horizon - 1)
        self.encoder = VaeEncoder(n_in, width, n_blocks, latent, rng)
        self.decoder = VaeDecoder(latent, width, n_blocks, n_in, rng)
        self.classifier = Linear(latent, n_tags, rng)
        self.trained = False

    def flat_displacements(self, trajs):
        d = to_displacements(trajs)
        n = d.shape[0]
        return d.reshape(n, -1)

    def encode(self, d_flat) -> tuple[Tensor, Tensor]:
        """Flattened displacements → (mu, sigma)."""
        mu, logvar = self.encoder(F.as_tensor(d_flat))
        return mu, F.exp(logvar * 0.5)

    def losses(self, trajs: np.ndarray, tags: np.ndarray, eps: np.ndarray,
               beta: float, aux_weight: float) -> tuple[Tensor, VaeLosses]:
        x = Tensor(self.flat_displacements(trajs))
        mu, logvar = self.encoder(x)
        sigma = F.exp(logvar * 0.5)
        z = reparameterize(mu, sigma, eps)
        recon = F.mse(self.decoder(z), x)
        kl = kl_diag_gaussian(mu, logvar)
        aux = F.cross_entropy(self.classifier(z), tags)
        total = recon + kl * beta + aux * aux_weight
        vals = VaeLosses(float(total.data), float(recon.data), float(kl.data), float(aux.data))
        if not np.isfinite(vals.total):
            raise TrainingError(f"non-finite VAE loss: {vals}")
        return total, vals

    def save(self, path: str | Path, config_hash: str = "") -> None:
        n_blocks = len(self.encoder.body.blocks)
        meta = {"kind": "vae", "config_hash": config_hash, "horizon": self.horizon, "latent": self.latent,
                "width": self.encoder.body.inp.weight.shape[1], "n_blocks": n_blocks,
                "n_tags": self.classifier.weight.shape[1], "trained": self.trained}
        checkpoint.save(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | Path, config_hash: str | None = None) -> "TrajectoryVAE":
        """Restore a checkpoint; a ``config_hash`` that differs from the stored one is refused."""
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "vae":
            raise checkpoint.CheckpointError(f"{path} is not a VAE checkpoint")
        if config_hash is not None and meta["config_hash"] != config_hash:
            raise checkpoint.CheckpointError(
                f"{path} was written with config hash {meta['config_hash']}, current config is {config_hash}")
        vae = cls(meta["horizon"], meta["latent"], meta["width"], meta["n_blocks"], meta["n_tags"])
        vae.load_state_dict(arrays)
        vae.trained = bool(meta["trained"])
        if vae.trained:
            vae.freeze()
        return vae


def vae_train_step(vae: TrajectoryVAE, trajs: np.ndarray, tags: np.ndarray, optimizer,
                   rng: np.random.Generator, beta: float = 0.05, aux_weight: float = 0.1) -> VaeLosses:
    if len(trajs) == 0:
        raise ValueError("empty batch")
    tags = np.asarray(tags)
    if tags.min() < 0 or tags.max() > 5:
        raise ValueError("tags must lie in 0..5")
    optimizer.zero_grad()
    eps = rng.standard_normal((len(trajs), vae.latent))
    total, vals = vae.losses(trajs, tags, eps, beta, aux_weight)
    total.backward()
    optimizer.step()
    return vals


def train_vae(vae: TrajectoryVAE, trajs: np.ndarray, tags: np.ndarray, epochs: int,
              batch_size: int, lr: float, beta: float, aux_weight: float, seed: int,
              log_every: int | None = None) -> list[VaeLosses]:
    from ..nn import Adam

    rng = np.random.default_rng(seed)
    opt = Adam(vae.parameters(), lr=lr, clip=5.0)
    history = []
    n = len(trajs)
    for ep in range(epochs):
        order = rng.permutation(n)
        opt.lr = lr * 0.5 * (1 + np.cos(np.pi * ep / max(epochs, 1)))
        ep_losses = []
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            ep_losses.append(vae_train_step(vae, trajs[idx], tags[idx], opt, rng, beta, aux_weight))
        mean = VaeLosses(*np.mean([[l.total, l.recon, l.kl, l.aux_cls] for l in ep_losses], axis=0))
        history.append(mean)
        if log_every and ep % log_every == 0:
            print(f"epoch {ep}: {mean}")
    vae.trained = True
    vae.freeze()
    return history


def vae_project(traj, vae: TrajectoryVAE):
    """Deterministic latent (encoder mean) of one or many trajectories.

    A Tensor input keeps the graph so gradients reach the waypoints; the
    encoder weights are expected to be frozen and collect nothing.
    """
    if not vae.trained:
        raise StateError("VAE encoder has not been trained")
    single = traj.ndim == 2
    if isinstance(traj, Tensor):
        t = traj.reshape(1, *traj.shape) if single else traj
        mu, _ = vae.encoder(vae.flat_displacements(t))
        return mu[0] if single else mu
    t = np.asarray(traj)[None] if single else np.asarray(traj)
    with no_grad():
        mu, _ = vae.encoder(Tensor(vae.flat_displacements(t)))
    return mu.data[0] if single else mu.data

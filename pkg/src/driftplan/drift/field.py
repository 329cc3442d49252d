"""Drift field in latent space: attraction to targets, repulsion among generated samples.

All functions take plain arrays except ``drift_loss``, which is where the
generated latents carry a graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from ..nn import F, Tensor

STD_FLOOR = 1e-6


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, z):
        if isinstance(z, Tensor):
            return (z - Tensor(self.mean)) * Tensor(1.0 / self.std)
        return (np.asarray(z) - self.mean) / self.std


@dataclass
class DriftBatch:
    z_fake: np.ndarray     # (K, d)
    z_cond: np.ndarray     # (P, d)
    z_unc: np.ndarray      # (U, d)
    temperature: float = 1.0


@dataclass
class DriftField:
    v_cond: np.ndarray
    v_unc: np.ndarray
    v_total: np.ndarray
    v_bar: np.ndarray
    scale: float


def normalize_features(batch: DriftBatch) -> tuple[DriftBatch, NormStats]:
    """Standardize every dimension with the statistics of all three sets together."""
    union = np.concatenate([batch.z_fake, batch.z_cond, batch.z_unc], axis=0)
    if len(union) < 2:
        raise ValueError("normalization needs at least two rows in total")
    stats = NormStats(union.mean(axis=0), np.maximum(union.std(axis=0), STD_FLOOR))
    out = DriftBatch(stats.apply(batch.z_fake), stats.apply(batch.z_cond),
                     stats.apply(batch.z_unc), batch.temperature)
    return out, stats


def pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def bidirectional_softmax(D: np.ndarray, temperature: float = 1.0,
                          mask: np.ndarray | None = None) -> np.ndarray:
    """Average of the row-wise and column-wise softmax of ``-D / temperature``.

    Entries where ``mask`` is False get weight 0 in both directions.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = -np.asarray(D, dtype=np.float64) / temperature
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)

    def safe(axis):
        # slices with every entry masked contribute nothing
        live = np.isfinite(logits).any(axis=axis, keepdims=True)
        w = softmax(np.where(live, logits, 0.0), axis=axis)
        return np.where(np.isfinite(logits) & live, w, 0.0)

    return 0.5 * (safe(1) + safe(0))


def mean_shift(z_from: np.ndarray, others: np.ndarray, temperature: float = 1.0,
               mask: np.ndarray | None = None) -> np.ndarray:
    """Kernel-weighted pull of each row of ``z_from`` toward the rows of ``others``."""
    w = bidirectional_softmax(pairwise_distances(z_from, others), temperature, mask)
    return w @ others - w.sum(axis=1, keepdims=True) * z_from


def drift_vectors(z_from: np.ndarray, targets: np.ndarray, peers: np.ndarray,
                  temperature: float = 1.0, exclude_self: bool = True) -> np.ndarray:
    """Per-row attraction toward ``targets`` minus repulsion from ``peers``.

    With ``exclude_self`` the pair (k, k) of ``peers`` is masked, which assumes
    ``peers`` is ``z_from`` itself.
    """
    mask = ~np.eye(len(z_from), len(peers), dtype=bool) if exclude_self else None
    return mean_shift(z_from, targets, temperature) - mean_shift(z_from, peers, temperature, mask)


def interpolate_guidance(v_cond: np.ndarray, v_unc: np.ndarray, alpha: float) -> np.ndarray:
    """``V_unc + alpha (V_cond - V_unc)`` written as ``(1 - alpha) V_unc + alpha V_cond``.

    Same value in exact arithmetic; this form returns either endpoint bit-for-bit.
    """
    if v_cond.shape != v_unc.shape:
        raise ValueError("field shapes differ")
    return (1.0 - alpha) * v_unc + alpha * v_cond


def magnitude_normalize(v: np.ndarray, c: float = 1.0, cap: float = 5.0,
                        reference: float | None = None) -> tuple[np.ndarray, float]:
    """Scale rows by ``c / (mean row norm + 1e-8)``, then clip row norms at ``cap``.

    ``reference`` replaces the batch mean row norm with a fixed value. Returns
    the field and the scale applied before capping.
    """
    norms = np.linalg.norm(v, axis=1)
    base = norms.mean() if reference is None else reference
    s = c / (base + 1e-8)
    out = v * s
    scaled = norms * s
    over = scaled > cap
    if np.any(over):
        out[over] *= (cap / scaled[over])[:, None]
    return out, float(s)


def compute_field(batch: DriftBatch, alpha: float, c: float = 1.0, cap: float = 5.0,
                  reference: float | None = None) -> DriftField:
    """Fields for an already-normalized batch."""
    zf, T = batch.z_fake, batch.temperature
    v_cond = drift_vectors(zf, batch.z_cond, zf, T)
    v_unc = drift_vectors(zf, batch.z_unc, zf, T)
    v_total = interpolate_guidance(v_cond, v_unc, alpha)
    v_bar, s = magnitude_normalize(v_total, c, cap, reference)
    return DriftField(v_cond, v_unc, v_total, v_bar, s)


def drift_loss(z_fake: Tensor, v_bar: np.ndarray) -> Tensor:
    """Mean squared distance from each latent to its detached drifted copy."""
    if z_fake.shape != v_bar.shape:
        raise ValueError(f"latents {z_fake.shape} vs field {v_bar.shape}")
    target = Tensor(z_fake.data + v_bar)
    diff = z_fake - target
    return F.tsum(diff * diff) * (1.0 / z_fake.shape[0])

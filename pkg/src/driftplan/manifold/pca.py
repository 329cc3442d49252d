from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import F, Tensor, checkpoint


class StateError(RuntimeError):
    """Raised when a component is used before it has been fitted."""


@dataclass
class PcaHead:
    """Linear trajectory basis: ``traj = W @ y + mu`` on flattened (x0, y0, x1, ...) vectors."""

    W: np.ndarray | None = None          # (2H, d), orthonormal columns
    mu: np.ndarray | None = None         # (2H,)
    explained_variance: np.ndarray | None = None  # (d,)

    @property
    def fitted(self) -> bool:
        return self.W is not None and self.mu is not None

    @property
    def d(self) -> int:
        self._check()
        return self.W.shape[1]

    @property
    def horizon(self) -> int:
        self._check()
        return self.mu.shape[0] // 2

    def _check(self) -> None:
        if not self.fitted:
            raise StateError("PCA head is not fitted")

    def decode(self, y: np.ndarray) -> np.ndarray:
        """(…, d) coefficients → (…, H, 2) waypoints."""
        self._check()
        flat = np.asarray(y) @ self.W.T + self.mu
        return flat.reshape(*flat.shape[:-1], self.horizon, 2)

    def decode_tensor(self, y: Tensor) -> Tensor:
        """Differentiable decode for (K, d) → (K, H, 2)."""
        self._check()
        flat = F.matmul(y, Tensor(self.W.T)) + Tensor(self.mu)
        return flat.reshape(y.shape[0], self.horizon, 2)

    def encode(self, trajs: np.ndarray) -> np.ndarray:
        self._check()
        flat = np.asarray(trajs).reshape(len(trajs), -1)
        return (flat - self.mu) @ self.W

    def to_arrays(self) -> dict[str, np.ndarray]:
        self._check()
        return {"pca.W": self.W, "pca.mu": self.mu, "pca.explained_variance": self.explained_variance}

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "PcaHead":
        return cls(a["pca.W"], a["pca.mu"], a["pca.explained_variance"])

    def save(self, path: str | Path, config_hash: str = "") -> None:
        checkpoint.save(path, self.to_arrays(), {"kind": "pca", "config_hash": config_hash})

    @classmethod
    def load(cls, path: str | Path, config_hash: str | None = None) -> "PcaHead":
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "pca":
            raise checkpoint.CheckpointError(f"{path} is not a PCA checkpoint")
        if config_hash is not None and meta["config_hash"] != config_hash:
            raise checkpoint.CheckpointError(
                f"{path} was written with config hash {meta['config_hash']}, current config is {config_hash}")
        return cls.from_arrays(arrays)


def pca_decode(y, head: PcaHead):
    """``W @ y + mu`` reshaped to waypoints; accepts numpy arrays or Tensors."""
    if isinstance(y, Tensor):
        return head.decode_tensor(y if y.ndim == 2 else y.reshape(1, -1))
    return head.decode(y)


def fit_pca(trajs: np.ndarray, d: int = 12) -> PcaHead:
    """Top-``d`` covariance eigenvectors with the largest-magnitude entry of each made positive."""
    X = np.asarray(trajs, dtype=np.float64).reshape(len(trajs), -1)
    n, dim = X.shape
    if n < d:
        raise ValueError(f"fit_pca needs at least d={d} samples, got {n}")
    if d > dim:
        raise ValueError(f"d={d} exceeds data dimension {dim}")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    W = evecs[:, order]
    lead = np.argmax(np.abs(W), axis=0)
    W = W * np.sign(W[lead, np.arange(d)])
    return PcaHead(W=W, mu=mu, explained_variance=np.maximum(evals[order], 0.0))

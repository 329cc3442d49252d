"""Two-level k-means dictionary of unconditional behavior classes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DICTIONARY_VERSION = 1


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = np.sum(X * X, axis=1)[:, None] + np.sum(C * C, axis=1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d, 0.0)


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 4,
           max_iter: int = 100, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia restart.

    Empty clusters are re-seeded at the point farthest from its center.
    """
    X = np.asarray(X, dtype=np.float64)
    if k > len(X):
        raise ValueError(f"k={k} exceeds sample count {len(X)}")
    best = None
    for _ in range(n_init):
        C = kmeans_pp_init(X, k, rng)
        labels = None
        for _ in range(max_iter):
            d = _sq_dists(X, C)
            labels = np.argmin(d, axis=1)
            newC = C.copy()
            for j in range(k):
                m = labels == j
                if m.any():
                    newC[j] = X[m].mean(axis=0)
                else:
                    far = int(np.argmax(d[np.arange(len(X)), labels]))
                    newC[j] = X[far]
                    labels[far] = j
            shift = float(np.max(np.sum((newC - C) ** 2, axis=1)))
            C = newC
            if shift <= tol:
                break
        d = _sq_dists(X, C)
        labels = _fill_empty(np.argmin(d, axis=1), d, k)
        inertia = float(np.sum((X - C[labels]) ** 2))
        if best is None or inertia < best[2] - 1e-12:
            best = (C, labels, inertia)
    return best


def _fill_empty(labels: np.ndarray, d: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        cost = np.where(counts[labels] > 1, d[np.arange(len(labels)), labels], -1.0)
        labels[int(np.argmax(cost))] = j
    return labels


@dataclass
class Dictionary:
    fine_centroids: np.ndarray        # (n_fine, H, 2)
    fine_labels: np.ndarray           # (N,) fine cluster of each source trajectory
    macro_label_of_fine: np.ndarray   # (n_fine,)
    macro_centroids: np.ndarray       # (n_macro, H, 2) mean of member trajectories
    member_labels: np.ndarray         # (N,) macro class of each source trajectory
    seed: int
    config_hash: str = ""

    @property
    def n_macro(self) -> int:
        return len(self.macro_centroids)

    @property
    def n_fine(self) -> int:
        return len(self.fine_centroids)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.member_labels == c)

    def class_counts(self) -> list[int]:
        return [int(np.sum(self.member_labels == c)) for c in range(self.n_macro)]

    def sample(self, trajs: np.ndarray, per_class: int, rng: np.random.Generator) -> np.ndarray:
        """Uniformly sample ``per_class`` member indices from every macro class."""
        out = []
        for c in range(self.n_macro):
            m = self.members(c)
            out.append(rng.choice(m, size=per_class, replace=len(m) < per_class))
        return np.concatenate(out)

    def to_json(self) -> str:
        doc = {
            "version": DICTIONARY_VERSION,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "n_fine": self.n_fine,
            "n_macro": self.n_macro,
            "class_counts": self.class_counts(),
            "fine_centroids": self.fine_centroids.tolist(),
            "fine_labels": self.fine_labels.tolist(),
            "macro_label_of_fine": self.macro_label_of_fine.tolist(),
            "macro_centroids": self.macro_centroids.tolist(),
            "member_labels": self.member_labels.tolist(),
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        doc = json.loads(text)
        if doc.get("version") != DICTIONARY_VERSION:
            raise ValueError(f"unsupported dictionary version {doc.get('version')}")
        return cls(
            np.array(doc["fine_centroids"], dtype=np.float64),
            np.array(doc["fine_labels"], dtype=np.int64),
            np.array(doc["macro_label_of_fine"], dtype=np.int64),
            np.array(doc["macro_centroids"], dtype=np.float64),
            np.array(doc["member_labels"], dtype=np.int64),
            int(doc["seed"]),
            doc.get("config_hash", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.from_json(Path(path).read_text())


def build_dictionary(trajs: np.ndarray, n_fine: int, n_macro: int = 16, seed: int = 0) -> Dictionary:
    """Fine k-means on flattened waypoints, then k-means over the fine centroids."""
    trajs = np.asarray(trajs, dtype=np.float64)
    if len(trajs) == 0:
        raise ValueError("build_dictionary needs at least one trajectory")
    if not len(trajs) >= n_fine >= 1:
        raise ValueError(f"need |trajs| >= n_fine >= 1, got {len(trajs)} and {n_fine}")
    # degenerate corpora with fewer fine clusters than macro classes collapse to n_fine
    n_macro = min(n_macro, n_fine)
    rng = np.random.default_rng(seed)
    X = trajs.reshape(len(trajs), -1)
    fine_c, fine_lab, _ = kmeans(X, n_fine, rng)
    macro_c, macro_of_fine, _ = kmeans(fine_c, n_macro, rng)
    member = macro_of_fine[fine_lab]
    cents = np.stack([X[member == c].mean(axis=0) if np.any(member == c) else macro_c[c]
                      for c in range(n_macro)])
    shape = trajs.shape[1:]
    return Dictionary(
        fine_centroids=fine_c.reshape(n_fine, *shape),
        fine_labels=fine_lab.astype(np.int64),
        macro_label_of_fine=macro_of_fine.astype(np.int64),
        macro_centroids=cents.reshape(n_macro, *shape),
        member_labels=member.astype(np.int64),
        seed=seed,
    )

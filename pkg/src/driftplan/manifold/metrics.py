from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

log = logging.getLogger(__name__)


@dataclass
class SeparationReport:
    intra: float
    inter: float
    ratio: float

    @classmethod
    def from_distances(cls, intra: float, inter: float) -> "SeparationReport":
        return cls(intra, inter, inter / intra if intra > 0 else float("inf"))

    def as_dict(self) -> dict[str, float]:
        return {"intra": self.intra, "inter": self.inter, "ratio": self.ratio}


def _mean_pairwise(X: np.ndarray) -> float:
    return float(np.mean(pdist(X))) if len(X) > 1 else 0.0


def separation_metrics(points: np.ndarray, labels: np.ndarray, mode: str = "pairwise") -> SeparationReport:
    """Intra/inter-class distances over labeled vectors.

    intra: mean over classes of the within-class mean pairwise distance
    (``mode="centroid"``: mean distance to the class centroid).
    inter: mean pairwise distance between class centroids.
    """
    X = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    intras, cents = [], []
    for c in classes:
        Xc = X[labels == c]
        cent = Xc.mean(axis=0)
        cents.append(cent)
        if len(Xc) < 2:
            log.warning("class %s has fewer than 2 members; contributes 0 intra-class distance", c)
            intras.append(0.0)
        elif mode == "pairwise":
            intras.append(_mean_pairwise(Xc))
        elif mode == "centroid":
            intras.append(float(np.mean(np.linalg.norm(Xc - cent, axis=1))))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    cents = np.array(cents)
    inter = _mean_pairwise(cents) if len(cents) > 1 else 0.0
    return SeparationReport.from_distances(float(np.mean(intras)), inter)


def brute_force_separation(points: np.ndarray, labels) -> SeparationReport:
    """Double-loop reference for ``separation_metrics`` (pairwise mode)."""
    X = [np.asarray(p, dtype=float).ravel() for p in points]
    labels = list(labels)
    classes = sorted(set(labels))
    intras, cents = [], []
    for c in classes:
        members = [x for x, l in zip(X, labels) if l == c]
        cents.append(sum(members) / len(members))
        pairs = list(itertools.combinations(members, 2))
        intras.append(sum(float(np.sqrt(np.sum((a - b) ** 2))) for a, b in pairs) / len(pairs) if pairs else 0.0)
    cpairs = list(itertools.combinations(cents, 2))
    inter = sum(float(np.sqrt(np.sum((a - b) ** 2))) for a, b in cpairs) / len(cpairs)
    return SeparationReport.from_distances(sum(intras) / len(intras), inter)

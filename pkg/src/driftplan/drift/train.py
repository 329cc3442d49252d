"""Planner training with the latent drift objective."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from ..config import RunConfig
from ..decoder import Planner
from ..manifold import Dictionary, TrajectoryVAE, vae_project
from ..manifold.pca import StateError
from ..nn import Adam, SGDMomentum
from ..scene import Scenario
from .field import DriftBatch, compute_field, drift_loss, magnitude_normalize, normalize_features

log = logging.getLogger(__name__)


@dataclass
class StepReport:
    step: int
    loss: float
    alpha: list[float]
    mean_field_norm: float
    wall_time: float
    skipped: list[str] = field(default_factory=list)
    grad_norm: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "StepReport":
        return cls(**json.loads(line))


def read_reports(path: str | Path) -> list[StepReport]:
    return [StepReport.from_json(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


class UnconditionalBank:
    """Latents of dictionary member trajectories, sampled uniformly per macro class."""

    def __init__(self, latents: np.ndarray, labels: np.ndarray, n_classes: int):
        self.latents = latents
        self.labels = labels
        self.members = [np.flatnonzero(labels == c) for c in range(n_classes)]
        if any(len(m) == 0 for m in self.members):
            raise ValueError("every macro class needs at least one member")

    @classmethod
    def from_dictionary(cls, dictionary: Dictionary, trajs: np.ndarray, vae: TrajectoryVAE):
        if len(trajs) != len(dictionary.member_labels):
            raise ValueError("dictionary does not describe this trajectory set")
        return cls(vae_project(trajs, vae), dictionary.member_labels, dictionary.n_macro)

    def sample(self, per_class: int, rng: np.random.Generator) -> np.ndarray:
        idx = [rng.choice(m, size=per_class, replace=len(m) < per_class) for m in self.members]
        return self.latents[np.concatenate(idx)]


class DriftTrainer:
    """Holds the optimizer, the generator state and the fixed field scale."""

    def __init__(self, planner: Planner, vae: TrajectoryVAE, bank: UnconditionalBank,
                 cfg: RunConfig, seed: int | None = None):
        if not vae.trained:
            raise StateError("drift training needs a trained, frozen VAE")
        if not planner.pca.fitted:
            raise StateError("drift training needs the planner's PCA head")
        self.planner, self.vae, self.bank, self.cfg = planner, vae, bank, cfg
        pc = cfg.planner
        params = planner.parameters(trainable_only=True)
        if pc.optimizer == "adam":
            self.optimizer = Adam(params, lr=pc.lr, clip=pc.clip)
        else:
            self.optimizer = SGDMomentum(params, lr=pc.lr, momentum=pc.momentum, clip=pc.clip)
        self.rng = np.random.default_rng(pc.seed if seed is None else seed)
        self.reference: float | None = None
        self.step_count = 0
        self._cond_cache: dict[int, np.ndarray] = {}

    def positives(self, sc: Scenario) -> np.ndarray:
        key = id(sc)
        if key not in self._cond_cache:
            pos = sc.positive_array()
            self._cond_cache[key] = vae_project(pos, self.vae) if len(pos) else np.zeros((0, self.vae.latent))
        return self._cond_cache[key]

    def step(self, scenarios: list[Scenario], alpha: float | None = None,
             stream: IO[str] | None = None) -> StepReport:
        t0 = time.perf_counter()
        d = self.cfg.drift
        usable = [sc for sc in scenarios if len(self.positives(sc))]
        skipped = [sc.name for sc in scenarios if not len(self.positives(sc))]
        for name in skipped:
            log.warning("scenario %s has no compliant positives; skipped", name)
        self.step_count += 1
        if not usable:
            rep = StepReport(self.step_count, float("nan"), [], 0.0, time.perf_counter() - t0, skipped)
            if stream is not None:
                stream.write(rep.to_json() + "\n")
            return rep

        B, K = len(usable), d.k
        if alpha is None:
            alphas = self.rng.uniform(d.alpha_min, d.alpha_max, size=B)
        else:
            alphas = np.full(B, float(alpha))
        unc = [self.bank.sample(d.unc_per_class, self.rng) for _ in range(B)]

        self.optimizer.zero_grad()
        traj, _ = self.planner.sample(usable, K, alphas, self.rng)
        z = vae_project(traj, self.vae)

        normed, stats = [], []
        for b in range(B):
            zb = z.data[b * K:(b + 1) * K]
            nb, st = normalize_features(DriftBatch(zb, self.positives(usable[b]), unc[b], d.temperature))
            normed.append(nb)
            stats.append(st)
        ref = self.reference if d.field_norm == "reference" else None
        fields = [compute_field(nb, float(a), d.norm_c, d.norm_cap, ref) for nb, a in zip(normed, alphas)]
        if d.field_norm == "reference" and self.reference is None:
            # calibrate once: the first batch's mean row norm becomes the fixed scale
            self.reference = float(np.mean([np.linalg.norm(f.v_total, axis=1).mean() for f in fields]))
            for f in fields:
                f.v_bar, f.scale = magnitude_normalize(f.v_total, d.norm_c, d.norm_cap, self.reference)

        loss = None
        for b in range(B):
            lb = drift_loss(stats[b].apply(z[b * K:(b + 1) * K]), fields[b].v_bar)
            loss = lb if loss is None else loss + lb
        loss = loss * (1.0 / B)
        loss.backward()
        gnorm = self.optimizer.step()
        self.planner.trained = True

        rep = StepReport(
            step=self.step_count,
            loss=float(loss.data),
            alpha=[float(a) for a in alphas],
            mean_field_norm=float(np.mean([np.linalg.norm(f.v_bar, axis=1).mean() for f in fields])),
            wall_time=time.perf_counter() - t0,
            skipped=skipped,
            grad_norm=float(gnorm),
        )
        if stream is not None:
            stream.write(rep.to_json() + "\n")
            stream.flush()
        return rep


def training_step(scenarios: list[Scenario], trainer: DriftTrainer, alpha: float | None = None,
                  stream: IO[str] | None = None) -> StepReport:
    return trainer.step(scenarios, alpha, stream)


def train_planner(trainer: DriftTrainer, scenarios: list[Scenario], steps: int, batch_size: int = 4,
                  stream: IO[str] | None = None, alpha: float | None = None) -> list[StepReport]:
    """Cycle through ``scenarios`` in seeded random batches."""
    reports = []
    order = np.array([], dtype=int)
    for _ in range(steps):
        if len(order) < batch_size:
            order = np.concatenate([order, trainer.rng.permutation(len(scenarios))])
        idx, order = order[:batch_size], order[batch_size:]
        reports.append(trainer.step([scenarios[i] for i in idx], alpha, stream))
    return reports

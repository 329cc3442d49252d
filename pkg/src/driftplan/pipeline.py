"""Staged artifact builders shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .decoder import Planner
from .drift import DriftTrainer, StepReport, UnconditionalBank, train_planner
from .manifold import Dictionary, PcaHead, TrajectoryVAE, build_dictionary, fit_pca, train_vae, vae_project
from .scene import Scenario
from .sim.corpus import TrajectoryCorpus, make_corpus
from .sim.scenarios import make_scenario


def corpus_for(cfg: RunConfig) -> TrajectoryCorpus:
    return make_corpus(cfg.corpus.n_trajectories, cfg.corpus.seed, cfg.traj.horizon, cfg.traj.dt)


def scenarios_for(cfg: RunConfig, kinds=None, n: int | None = None) -> list[Scenario]:
    """``n`` scenes cycling through ``kinds``, seeded from the corpus seed."""
    kinds = tuple(kinds or cfg.corpus.scenario_kinds)
    n = cfg.corpus.n_scenarios if n is None else n
    return [make_scenario(kinds[i % len(kinds)], cfg.corpus.seed * 10_000 + i // len(kinds)) for i in range(n)]


def fit_vae(cfg: RunConfig, corpus: TrajectoryCorpus) -> TrajectoryVAE:
    m, v = cfg.model, cfg.vae
    vae = TrajectoryVAE(cfg.traj.horizon, m.latent, m.vae_hidden, m.vae_blocks, seed=v.seed)
    train_vae(vae, corpus.trajectories, corpus.tags, v.epochs, v.batch_size, v.lr, v.beta, v.aux_weight, v.seed)
    return vae


def dictionary_for(cfg: RunConfig, corpus: TrajectoryCorpus) -> Dictionary:
    d = cfg.dictionary
    return build_dictionary(corpus.trajectories, d.n_fine, d.n_macro, d.seed)


def pca_for(cfg: RunConfig, corpus: TrajectoryCorpus) -> PcaHead:
    return fit_pca(corpus.trajectories, cfg.model.d_pca)


@dataclass
class Artifacts:
    cfg: RunConfig
    corpus: TrajectoryCorpus
    vae: TrajectoryVAE
    dictionary: Dictionary
    pca: PcaHead

    def bank(self) -> UnconditionalBank:
        return UnconditionalBank.from_dictionary(self.dictionary, self.corpus.trajectories, self.vae)

    def trainer(self, seed: int = 0) -> DriftTrainer:
        planner = Planner(self.cfg, self.pca, seed=seed)
        return DriftTrainer(planner, self.vae, self.bank(), self.cfg)


def build_artifacts(cfg: RunConfig) -> Artifacts:
    corpus = corpus_for(cfg)
    return Artifacts(cfg, corpus, fit_vae(cfg, corpus), dictionary_for(cfg, corpus), pca_for(cfg, corpus))


def overfit_planner(art: Artifacts, scenarios: list[Scenario], steps: int | None = None,
                    batch_size: int | None = None, seed: int = 0, stream=None) -> tuple[Planner, list[StepReport]]:
    p = art.cfg.planner
    trainer = art.trainer(seed)
    reports = train_planner(trainer, scenarios, steps or p.steps, batch_size or p.batch_size, stream)
    return trainer.planner, reports


@dataclass
class SweepRow:
    alpha: float
    target_distance: float   # mean over samples of the latent distance to the nearest positive
    dispersion: float        # mean pairwise latent distance within one K set


def mean_pairwise(z: np.ndarray) -> float:
    n = len(z)
    if n < 2:
        return 0.0
    return float(np.linalg.norm(z[:, None] - z[None], axis=-1).sum() / (n * (n - 1)))


def guidance_sweep(planner: Planner, vae: TrajectoryVAE, scenarios: list[Scenario], alphas,
                   k: int = 32, seed: int = 100) -> list[SweepRow]:
    """Latent adherence and diversity of generated sets at each guidance scale, averaged over scenes."""
    rows = []
    for a in alphas:
        dist, disp = [], []
        for i, sc in enumerate(scenarios):
            z = vae_project(planner.generate(sc, k, float(a), seed=seed + i).trajectories, vae)
            disp.append(mean_pairwise(z))
            if len(sc.positives):
                zp = vae_project(sc.positive_array(), vae)
                dist.append(np.linalg.norm(z[:, None] - zp[None], axis=-1).min(axis=1).mean())
        rows.append(SweepRow(float(a), float(np.mean(dist)) if dist else float("nan"), float(np.mean(disp))))
    return rows

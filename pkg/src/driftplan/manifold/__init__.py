from .dictionary import Dictionary, build_dictionary, kmeans
from .metrics import SeparationReport, brute_force_separation, separation_metrics
from .pca import PcaHead, StateError, fit_pca, pca_decode
from .vae import (
    TrajectoryVAE,
    TrainingError,
    from_displacements,
    kl_diag_gaussian,
    reparameterize,
    to_displacements,
    train_vae,
    vae_project,
    vae_train_step,
)

__all__ = [
    "Dictionary", "build_dictionary", "kmeans", "SeparationReport", "separation_metrics",
    "brute_force_separation", "PcaHead", "StateError", "fit_pca", "pca_decode", "TrajectoryVAE",
    "TrainingError", "to_displacements", "from_displacements", "reparameterize",
    "kl_diag_gaussian", "train_vae", "vae_project", "vae_train_step",
]

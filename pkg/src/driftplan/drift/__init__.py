from .field import (
    DriftBatch,
    DriftField,
    NormStats,
    bidirectional_softmax,
    compute_field,
    drift_loss,
    drift_vectors,
    interpolate_guidance,
    magnitude_normalize,
    mean_shift,
    normalize_features,
    pairwise_distances,
)
from .train import DriftTrainer, StepReport, UnconditionalBank, read_reports, train_planner, training_step

__all__ = [
    "DriftBatch", "DriftField", "NormStats", "bidirectional_softmax", "compute_field", "drift_loss",
    "drift_vectors", "interpolate_guidance", "magnitude_normalize", "mean_shift", "normalize_features",
    "pairwise_distances", "DriftTrainer", "StepReport", "UnconditionalBank", "read_reports",
    "train_planner", "training_step",
]

"""Gradient-concentration data routing.

Probe per-projection gradient norms on a small transformer, score how
concentrated they are, and split a corpus into SFT and RL partitions.
"""

__version__ = "0.1.0"

from .analysis import consensus, normalization_robustness, ratio_sweep, spearman
from .estimators import ConcentrationRouter, ConcentrationScorer, GradientProbe
from .metrics import ScoreSet, cv, gini, kurtosis, l2_magnitude, normalize_by_size, score_corpus
from .probe import (
    GradientVector,
    ProbeModel,
    ProbeModelConfig,
    Trajectory,
    finite_difference_check,
    forward_loss,
    init_model,
    prepare_trajectory,
    probe_gradients,
)
from .router import Partition, inverse_partition, median_split, quantile_split, route

__all__ = [
    "ConcentrationRouter",
    "ConcentrationScorer",
    "GradientProbe",
    "GradientVector",
    "Partition",
    "ProbeModel",
    "ProbeModelConfig",
    "ScoreSet",
    "Trajectory",
    "consensus",
    "cv",
    "finite_difference_check",
    "forward_loss",
    "gini",
    "init_model",
    "inverse_partition",
    "kurtosis",
    "l2_magnitude",
    "median_split",
    "normalization_robustness",
    "normalize_by_size",
    "prepare_trajectory",
    "probe_gradients",
    "quantile_split",
    "ratio_sweep",
    "route",
    "score_corpus",
    "spearman",
]

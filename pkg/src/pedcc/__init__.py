"""Predefined evenly-distributed class centroids (PEDCC) and the PEDCC-Loss."""

__version__ = "0.1.0"

from .centroids import CentroidSet, GenConfig, energy, generate, inspect, repulsion_step
from .losses import (
    CenterState, FeatureBatch, LossResult, MarginConfig, am_softmax, center_loss,
    check_gradient, pedcc_am, pedcc_loss, pedcc_mse, softmax_ce,
)
from .numeric import Rng, gaussian_matrix, l2_normalize_rows, pairwise_cosines

__all__ = [
    "CentroidSet", "GenConfig", "energy", "generate", "inspect", "repulsion_step",
    "CenterState", "FeatureBatch", "LossResult", "MarginConfig", "am_softmax", "center_loss",
    "check_gradient", "pedcc_am", "pedcc_loss", "pedcc_mse", "softmax_ce",
    "Rng", "gaussian_matrix", "l2_normalize_rows", "pairwise_cosines",
]

"""Metric learning by minimizing the Bayesian risk of pair misclassification.

Soft histograms of positive- and negative-pair distances give a differentiable
estimate of the probability that a negative pair is closer than a positive
pair; that estimate is the training loss.
"""
from .brm import CombinedLossConfig, brm_backward, brm_risk, brm_risk_naive, combined_loss
from .pairs import (
    EmbeddingBatch,
    PairHistograms,
    PairSets,
    cumulative,
    distance_matrix,
    enumerate_pairs,
    soft_histogram,
    soft_histogram_vjp,
)

__version__ = "0.1.0"

__all__ = [
    "CombinedLossConfig",
    "EmbeddingBatch",
    "PairHistograms",
    "PairSets",
    "brm_backward",
    "brm_risk",
    "brm_risk_naive",
    "combined_loss",
    "cumulative",
    "distance_matrix",
    "enumerate_pairs",
    "soft_histogram",
    "soft_histogram_vjp",
]

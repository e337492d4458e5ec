"""Bayesian-risk loss over pair-distance histograms.

The risk is the probability that a negative pair lies at or below a positive
pair in distance::

    risk = sum_r h_pos[r] * cum_neg[r],   cum_neg[r] = sum_{q <= r} h_neg[q]

Ties (both in the same bin) count as errors. Since both histograms are
probability vectors the risk lies in ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidConfig
from .numeric import matmul
from .pairs import (
    EmbeddingBatch,
    PairHistograms,
    PairSets,
    distance_matrix,
    pair_distances,
    pair_histograms,
    soft_histogram_vjp,
)


@dataclass
class RiskValue:
    risk: float
    grad_embeddings: np.ndarray
    grad_distances: np.ndarray
    histograms: PairHistograms


@dataclass(frozen=True)
class CombinedLossConfig:
    num_classes: int
    ce_weight: float = 1.0

    def __post_init__(self):
        if self.ce_weight < 0:
            raise InvalidConfig("ce_weight must be >= 0")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")


@dataclass
class CombinedLoss:
    total: float
    risk: float
    cross_entropy: float
    grad_embeddings: np.ndarray
    grad_logits: np.ndarray


def brm_risk(h: PairHistograms) -> float:
    return float(np.dot(h.h_pos, h.cum_neg))


def brm_risk_naive(h: PairHistograms) -> float:
    """Literal double sum over bin pairs ``j <= i``; reference for :func:`brm_risk`."""
    total = 0.0
    for i in range(h.bins):
        # inner sum over j = 0..i, written out rather than taken from cum_neg
        total += float(np.sum(h.h_pos[i] * h.h_neg[:i + 1]))
    return total


def embedding_grad_from_distances(grad_dist: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Chain ``dL/dd_ij`` (symmetric, zero diagonal) to ``dL/dx`` using ``dd_ij/dx_i = -x_j``."""
    return -matmul(grad_dist, embeddings)


def scatter_pair_grads(n: int, pairs: np.ndarray, grads: np.ndarray, out=None) -> np.ndarray:
    """Accumulate per-pair gradients into a symmetric ``n x n`` matrix."""
    if out is None:
        out = np.zeros((n, n))
    out[pairs[:, 0], pairs[:, 1]] += grads
    out[pairs[:, 1], pairs[:, 0]] += grads
    return out


def brm_backward(batch: EmbeddingBatch, pairs: PairSets, bins: int, *, _fault: str | None = None) -> RiskValue:
    """Risk of ``batch`` and its gradient with respect to the (normalized) embeddings.

    Raises :class:`EmptyPairSet` if either pair set is empty. ``_fault`` is a
    mutation hook for the gradient checker and must stay ``None`` otherwise.
    """
    dist = distance_matrix(batch)
    hist = pair_histograms(dist, pairs, bins)
    risk = brm_risk(hist)

    up_pos = hist.cum_neg
    up_neg = np.cumsum(hist.h_pos[::-1])[::-1]
    if _fault == "neg-hist-sign":
        up_neg = -up_neg

    g_pos = soft_histogram_vjp(pair_distances(dist, pairs.positives), bins, up_pos)
    g_neg = soft_histogram_vjp(pair_distances(dist, pairs.negatives), bins, up_neg)
    grad_dist = scatter_pair_grads(batch.n, pairs.positives, g_pos)
    scatter_pair_grads(batch.n, pairs.negatives, g_neg, out=grad_dist)

    return RiskValue(
        risk=risk,
        grad_embeddings=embedding_grad_from_distances(grad_dist, batch.embeddings),
        grad_distances=grad_dist,
        histograms=hist,
    )


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"logits {logits.shape} do not align with labels {labels.shape}")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    rows = np.arange(n)
    value = float(-log_probs[rows, labels].sum() / n)
    grad = exp / denom
    grad[rows, labels] -= 1.0
    return value, grad / n


def combined_loss(batch: EmbeddingBatch, pairs: PairSets, logits, labels,
                  cfg: CombinedLossConfig, bins: int) -> CombinedLoss:
    """``risk + ce_weight * mean cross-entropy`` with gradients for both paths."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (batch.n, cfg.num_classes):
        raise DimensionMismatch(
            f"logits shape {logits.shape} != ({batch.n}, {cfg.num_classes})")
    rv = brm_backward(batch, pairs, bins)
    ce, g_logits = softmax_cross_entropy(logits, labels)
    return CombinedLoss(
        total=rv.risk + cfg.ce_weight * ce,
        risk=rv.risk,
        cross_entropy=ce,
        grad_embeddings=rv.grad_embeddings,
        grad_logits=cfg.ce_weight * g_logits,
    )

"""Pair sets, negative-cosine distances and soft (triangular-kernel) histograms.

Histogram nodes sit at ``t_r = -1 + r * delta`` for ``r = 0 .. R-1`` with
``delta = 2 / (R - 1)``. A distance ``d`` gives weight
``max(0, 1 - |d - t_r| / delta)`` to node ``r``, so it splits its unit mass
between the two nodes bracketing it. Bin values are piecewise linear in ``d``.
Their derivative is taken as 0 exactly on a node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, DimensionMismatch, EmptyPairSet, NotNormalized
from .numeric import _norms, matmul

DEFAULT_BINS = 75


@dataclass(frozen=True)
class EmbeddingBatch:
    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if emb.ndim != 2 or lab.ndim != 1 or emb.shape[0] != lab.shape[0]:
            raise DimensionMismatch(
                f"embeddings {emb.shape} and labels {lab.shape} do not align")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class PairSets:
    """Unordered index pairs ``(i, j)``, ``i < j``, as ``(m, 2)`` int arrays."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        for name in ("positives", "negatives"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class PairHistograms:
    h_pos: np.ndarray
    h_neg: np.ndarray
    cum_neg: np.ndarray = field(default=None)

    def __post_init__(self):
        h_pos = np.asarray(self.h_pos, dtype=np.float64)
        h_neg = np.asarray(self.h_neg, dtype=np.float64)
        if h_pos.shape != h_neg.shape or h_pos.ndim != 1 or h_pos.size < 2:
            raise DimensionMismatch("histograms must be equal-length vectors with R >= 2")
        object.__setattr__(self, "h_pos", h_pos)
        object.__setattr__(self, "h_neg", h_neg)
        if self.cum_neg is None:
            object.__setattr__(self, "cum_neg", cumulative(h_neg))

    @property
    def bins(self) -> int:
        return self.h_pos.size

    @property
    def nodes(self) -> np.ndarray:
        return bin_nodes(self.bins)


def enumerate_pairs(labels) -> PairSets:
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < 2:
        raise BatchTooSmall(f"need at least 2 samples, got {n}")
    i, j = np.triu_indices(n, k=1)
    same = labels[i] == labels[j]
    both = np.stack([i, j], axis=1)
    return PairSets(positives=both[same], negatives=both[~same])


def distance_matrix(batch, tol: float = 1e-6) -> np.ndarray:
    """Pairwise ``-(x_i . x_j)`` clamped to ``[-1, 1]``. Rows must be unit-norm."""
    x = batch.embeddings if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=np.float64)
    norms = _norms(x)
    if np.any(np.abs(norms - 1.0) > tol):
        raise NotNormalized(f"row norms deviate from 1 by up to {np.max(np.abs(norms - 1.0)):.3g}")
    return np.clip(-matmul(x, x.T), -1.0, 1.0)


def pair_distances(dist: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return dist[pairs[:, 0], pairs[:, 1]]


def bin_nodes(bins: int) -> np.ndarray:
    return -1.0 + np.arange(bins) * bin_width(bins)


def bin_width(bins: int) -> float:
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    return 2.0 / (bins - 1)


def bin_coordinates(distances, bins: int):
    """Lower bracketing node index and the fractional offset in ``[0, 1]``."""
    delta = bin_width(bins)
    d = np.clip(np.asarray(distances, dtype=np.float64), -1.0, 1.0)
    u = (d + 1.0) / delta
    lo = np.clip(np.floor(u).astype(np.int64), 0, bins - 2)
    frac = u - lo
    return lo, frac


def _check(distances, bins):
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        raise EmptyPairSet("distance")
    bin_width(bins)
    return d


def soft_histogram(distances, bins: int) -> np.ndarray:
    """Probability histogram of ``distances`` over ``bins`` nodes (sums to 1)."""
    d = _check(distances, bins)
    lo, frac = bin_coordinates(d, bins)
    hist = np.bincount(lo, weights=1.0 - frac, minlength=bins)
    hist += np.bincount(lo + 1, weights=frac, minlength=bins)
    return hist / d.size


def soft_histogram_vjp(distances, bins: int, upstream) -> np.ndarray:
    """Per-distance ``dL/dd`` given ``dL/dhist`` (``upstream``)."""
    d = _check(distances, bins)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (bins,):
        raise DimensionMismatch(f"upstream must have shape ({bins},), got {up.shape}")
    lo, frac = bin_coordinates(d, bins)
    grad = (up[lo + 1] - up[lo]) / (bin_width(bins) * d.size)
    grad[(frac == 0.0) | (frac == 1.0)] = 0.0
    return grad


def cumulative(h) -> np.ndarray:
    return np.cumsum(np.asarray(h, dtype=np.float64))


def pair_histograms(dist: np.ndarray, pairs: PairSets, bins: int) -> PairHistograms:
    if len(pairs.positives) == 0:
        raise EmptyPairSet("positive")
    if len(pairs.negatives) == 0:
        raise EmptyPairSet("negative")
    return PairHistograms(
        h_pos=soft_histogram(pair_distances(dist, pairs.positives), bins),
        h_neg=soft_histogram(pair_distances(dist, pairs.negatives), bins),
    )

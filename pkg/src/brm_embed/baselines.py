"""Margin-based reference losses: contrastive, batch-hard triplet, lifted structure.

All three take a negative-cosine distance matrix and return ``(value, grad)``
where ``grad[i, j] == grad[j, i]`` is the derivative with respect to the
unordered pair distance ``d_ij``. Use
:func:`brm_embed.brm.embedding_grad_from_distances` to reach the embeddings.
Hinge boundaries get subgradient 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPairSet, InvalidConfig, NoNegativePartner, NoValidTriplet
from .pairs import PairSets, pair_distances


@dataclass(frozen=True)
class MarginConfig:
    contrastive: float = 0.5
    triplet: float = 0.2
    lifted: float = 1.0

    def __post_init__(self):
        if min(self.contrastive, self.triplet, self.lifted) <= 0:
            raise InvalidConfig("margins must be positive")
        if self.contrastive > 1:
            raise InvalidConfig("contrastive margin must lie in (0, 1]")


def _symmetrize(acc: np.ndarray) -> np.ndarray:
    return acc + acc.T


def contrastive_loss(dist: np.ndarray, pairs: PairSets, margin: float = 0.5):
    """Squared pull on positives plus squared hinge on negatives.

    Distances are rescaled to ``s = (1 + d) / 2`` in ``[0, 1]``; the loss is
    ``mean_pos s^2 + mean_neg max(0, margin - s)^2``. An empty side contributes 0.
    """
    n_pos, n_neg = len(pairs.positives), len(pairs.negatives)
    if n_pos == 0 and n_neg == 0:
        raise EmptyPairSet("pair")
    acc = np.zeros_like(dist)
    value = 0.0
    if n_pos:
        s = (1.0 + pair_distances(dist, pairs.positives)) / 2.0
        value += float(np.sum(s * s) / n_pos)
        np.add.at(acc, (pairs.positives[:, 0], pairs.positives[:, 1]), s / n_pos)
    if n_neg:
        s = (1.0 + pair_distances(dist, pairs.negatives)) / 2.0
        gap = np.maximum(0.0, margin - s)
        value += float(np.sum(gap * gap) / n_neg)
        np.add.at(acc, (pairs.negatives[:, 0], pairs.negatives[:, 1]), -gap / n_neg)
    return value, _symmetrize(acc)


def hardest_negatives(dist: np.ndarray, labels) -> np.ndarray:
    """Per anchor, the closest sample of another class (-1 if none).

    ``argmin`` returns the first minimum, so ties resolve to the lowest index.
    """
    labels = np.asarray(labels)
    neg = labels[:, None] != labels[None, :]
    masked = np.where(neg, dist, np.inf)
    idx = np.argmin(masked, axis=1)
    idx[~neg.any(axis=1)] = -1
    return idx


def triplet_loss_hard(dist: np.ndarray, labels, margin: float = 0.2):
    """Mean hinge ``max(0, d(a,p) - d(a,n*) + margin)`` over ordered anchor-positive pairs.

    ``n*`` is the hardest in-batch negative of the anchor.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    nstar = hardest_negatives(dist, labels)
    pos = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    pos &= (nstar >= 0)[:, None]
    a, p = np.nonzero(pos)
    if a.size == 0:
        raise NoValidTriplet("no anchor has both a positive and a negative")
    ng = nstar[a]
    slack = dist[a, p] - dist[a, ng] + margin
    active = slack > 0
    count = a.size
    acc = np.zeros_like(dist)
    np.add.at(acc, (a[active], p[active]), 1.0 / count)
    np.add.at(acc, (a[active], ng[active]), -1.0 / count)
    return float(np.sum(slack[active]) / count), _symmetrize(acc)


def lifted_loss(dist: np.ndarray, pairs: PairSets, margin: float = 1.0):
    """Lifted-structure loss with max-shifted log-sum-exp.

    For a positive pair ``(i, j)``::

        J_ij = log(sum_{(i,k) in S-} exp(margin - d_ik) + sum_{(j,l) in S-} exp(margin - d_jl)) + d_ij

    and the loss is ``sum max(0, J_ij)^2 / (2 |S+|)``.
    """
    n_pos = len(pairs.positives)
    if n_pos == 0:
        raise EmptyPairSet("positive")
    n = dist.shape[0]
    partner = np.zeros((n, n), dtype=bool)
    partner[pairs.negatives[:, 0], pairs.negatives[:, 1]] = True
    partner |= partner.T

    i, j = pairs.positives[:, 0], pairs.positives[:, 1]
    # terms for each positive: row i then row j of the partner matrix
    mask = np.concatenate([partner[i], partner[j]], axis=1)
    if not np.all(mask.any(axis=1)):
        raise NoNegativePartner("a positive pair has no negative partner")
    logits = np.concatenate([margin - dist[i], margin - dist[j]], axis=1)
    logits = np.where(mask, logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - top)
    total = w.sum(axis=1, keepdims=True)
    J = top[:, 0] + np.log(total[:, 0]) + dist[i, j]

    hinge = np.maximum(0.0, J)
    value = float(np.sum(hinge * hinge) / (2.0 * n_pos))

    coef = hinge / n_pos
    soft = w / total * coef[:, None]
    acc = np.zeros_like(dist)
    np.add.at(acc, (i, j), coef)
    np.add.at(acc, i, -soft[:, :n])
    np.add.at(acc, j, -soft[:, n:])
    return value, _symmetrize(acc)

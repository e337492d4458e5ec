"""Embedding quality metrics and the linear hinge classifier.

Tie-breaking is fixed everywhere: equal distances or scores resolve to the
lowest index, and equal kNN votes resolve to the smallest label.

EvalReport JSON schema::

    {
      "top1": float, "top3": float, "top5": float,
      "recall_at": {"1": float, "2": float, "4": float, "8": float},
      "per_class_accuracy": [float | null, ...],   # length C, null = class absent
      "confusion": [[int, ...], ...],             # C x C, rows = true label
      "n": int, "num_classes": int
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, DimensionMismatch, EmptyTrainSet, InvalidConfig, SingleClass
from .numeric import make_rng, matmul

RECALL_KS = (1, 2, 4, 8)


def _unpack(batch):
    if hasattr(batch, "embeddings"):
        return np.asarray(batch.embeddings, dtype=np.float64), np.asarray(batch.labels)
    emb, labels = batch
    return np.asarray(emb, dtype=np.float64), np.asarray(labels)


def _cosine_distances(queries, refs):
    return -matmul(queries, refs.T)


def knn_classify(train, test, k: int = 1) -> np.ndarray:
    """Majority label among the ``k`` nearest training rows (negative cosine distance)."""
    tr_x, tr_y = _unpack(train)
    te_x, _ = _unpack(test)
    if tr_x.shape[0] == 0:
        raise EmptyTrainSet("no reference embeddings")
    if not 1 <= k <= tr_x.shape[0]:
        raise InvalidConfig(f"k must lie in [1, {tr_x.shape[0]}]")
    if te_x.shape[1] != tr_x.shape[1]:
        raise DimensionMismatch("train and test embeddings differ in dimension")
    dist = _cosine_distances(te_x, tr_x)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = tr_y[nearest]
    n_labels = int(tr_y.max()) + 1
    counts = np.zeros((te_x.shape[0], n_labels), dtype=np.int64)
    for col in range(k):
        counts[np.arange(te_x.shape[0]), votes[:, col]] += 1
    return np.argmax(counts, axis=1)


def rank_classes(scores) -> np.ndarray:
    """Class indices per row, best first; equal scores keep ascending class order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), axis=1, kind="stable")


def topk_accuracy(scores, labels, k: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"scores {scores.shape} do not align with {labels.shape[0]} labels")
    if not 1 <= k <= scores.shape[1]:
        raise DimensionMismatch(f"k={k} outside [1, {scores.shape[1]}]")
    top = rank_classes(scores)[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def recall_at_k(batch, k: int) -> float:
    """Fraction of samples with a same-class sample among their ``k`` nearest others."""
    x, y = _unpack(batch)
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmall("recall@K needs at least 2 samples")
    if k < 1:
        raise InvalidConfig("K must be >= 1")
    dist = _cosine_distances(x, x)
    np.fill_diagonal(dist, np.inf)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :min(k, n - 1)]
    return float(np.mean(np.any(y[nearest] == y[:, None], axis=1)))


@dataclass
class LinearClassifier:
    weights: np.ndarray   # (D, C)
    bias: np.ndarray      # (C,)

    def scores(self, features) -> np.ndarray:
        return matmul(np.asarray(features, dtype=np.float64), self.weights) + self.bias

    def predict(self, features) -> np.ndarray:
        return rank_classes(self.scores(features))[:, 0]


def linear_classifier_train(features, labels, num_classes: int, epochs: int = 100,
                            reg: float = 1e-4, lr: float = 0.1, batch_size: int = 32,
                            seed: int = 0) -> LinearClassifier:
    """One-vs-rest linear classifier on the L2-regularized hinge loss.

    Mini-batch subgradient descent, shuffled per epoch from ``seed``, with step
    ``lr / sqrt(1 + epoch)``. The weight penalty is applied implicitly,
    ``W <- (W - step * g) / (1 + step * reg)``, which stays stable for any
    ``reg``. The bias is not regularized.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(x)):
        raise InvalidConfig("non-finite features")
    if num_classes < 2 or np.unique(y).size < 2:
        raise SingleClass("need at least two classes")
    n, d = x.shape
    targets = np.where(y[:, None] == np.arange(num_classes)[None, :], 1.0, -1.0)
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    rng = make_rng(seed)
    for epoch in range(epochs):
        step = lr / np.sqrt(1.0 + epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, tb = x[idx], targets[idx]
            margins = tb * (matmul(xb, w) + b)
            coef = np.where(margins < 1.0, tb, 0.0) / idx.size
            g_w = -matmul(xb.T, coef)
            g_b = -coef.sum(axis=0)
            w = (w - step * g_w) / (1.0 + step * reg)
            b = b - step * g_b
    return LinearClassifier(w, b)


def hinge_objective(clf: LinearClassifier, features, labels, reg: float = 0.0) -> float:
    """Mean one-vs-rest hinge loss (summed over classes) plus ``reg/2 * |W|^2``."""
    y = np.asarray(labels)
    c = clf.weights.shape[1]
    targets = np.where(y[:, None] == np.arange(c)[None, :], 1.0, -1.0)
    margins = targets * clf.scores(features)
    return float(np.mean(np.maximum(0.0, 1.0 - margins).sum(axis=1))
                 + 0.5 * reg * np.sum(clf.weights ** 2))


@dataclass
class EvalReport:
    top1: float
    top3: float
    top5: float
    recall_at: dict = field(default_factory=dict)
    per_class_accuracy: list = field(default_factory=list)
    confusion: list = field(default_factory=list)
    n: int = 0
    num_classes: int = 0

    def to_dict(self) -> dict:
        return {
            "top1": self.top1, "top3": self.top3, "top5": self.top5,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
            "n": self.n, "num_classes": self.num_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_report(scores, labels, embeddings, num_classes: int) -> EvalReport:
    """Classification metrics from ``scores`` plus recall@K on ``embeddings``.

    top-k uses ``min(k, C)`` when fewer than ``k`` classes exist.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = rank_classes(scores)[:, 0]
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / support[c]) if support[c] else None
                 for c in range(num_classes)]
    recall = {}
    if labels.size >= 2:
        recall = {k: recall_at_k((embeddings, labels), k) for k in RECALL_KS}
    return EvalReport(
        top1=topk_accuracy(scores, labels, 1),
        top3=topk_accuracy(scores, labels, min(3, num_classes)),
        top5=topk_accuracy(scores, labels, min(5, num_classes)),
        recall_at=recall,
        per_class_accuracy=per_class,
        confusion=confusion.tolist(),
        n=int(labels.size),
        num_classes=num_classes,
    )

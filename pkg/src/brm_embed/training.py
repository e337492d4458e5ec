"""Training loop shared by the ``train``, ``sweep-bins`` and ``compare-losses`` commands.

Random streams are derived from the run seed so that a run is reproducible
bit-for-bit and a resumed run continues exactly where it stopped:

* ``make_rng(seed)``           synthetic data (same stream as ``gen-data``)
* ``make_rng([seed, 0])``      parameter initialisation
* ``make_rng([seed, 1, e])``   batch sampling and augmentation in epoch ``e``
* ``make_rng([seed, 2])``      train/validation split
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .baselines import contrastive_loss, lifted_loss, triplet_loss_hard
from .brm import (
    CombinedLossConfig,
    brm_backward,
    combined_loss,
    embedding_grad_from_distances,
)
from .config import RunConfig
from .data import (
    AugmentConfig,
    BatchSampler,
    RasterDataset,
    augment,
    center_crop,
    gen_synthetic,
    load_dataset,
    rasters_to_vectors,
    split_indices,
)
from .encoder import AdamState, adam_step, backward, forward, init_params
from .errors import (
    BRMError,
    DimensionMismatch,
    EmptyPairSet,
    InsufficientClassSamples,
    NoNegativePartner,
    NoValidTriplet,
)
from .evaluation import knn_classify, rank_classes, recall_at_k
from .numeric import make_rng, matmul
from .pairs import EmbeddingBatch, distance_matrix, enumerate_pairs

log = logging.getLogger(__name__)

MAX_RESAMPLES = 10
DEGENERATE = (EmptyPairSet, NoValidTriplet, NoNegativePartner)


class DegenerateData(BRMError):
    """No usable batch could be drawn (exit code 4)."""


@dataclass
class PreparedData:
    """Dataset split into encoder-ready train/validation arrays."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    num_classes: int
    rasters: np.ndarray | None = None   # cropped training rasters, for augmentation

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


def load_run_data(cfg: RunConfig):
    if cfg.data is None:
        return gen_synthetic(make_rng(cfg.seed), cfg.classes, cfg.per_class, cfg.dim, cfg.sigma)
    return load_dataset(cfg.data)


def dataset_vectors(ds, crop: float) -> np.ndarray:
    if isinstance(ds, RasterDataset):
        return rasters_to_vectors(ds.images, crop)
    return ds.vectors


def prepare(ds, cfg: RunConfig) -> PreparedData:
    train_idx, val_idx = split_indices(ds.labels, cfg.val_fraction, make_rng([cfg.seed, 2]))
    x = dataset_vectors(ds, cfg.crop)
    rasters = None
    if isinstance(ds, RasterDataset) and cfg.augment:
        rasters = center_crop(ds.images[train_idx], cfg.crop)
    return PreparedData(x[train_idx], ds.labels[train_idx], x[val_idx], ds.labels[val_idx],
                        ds.num_classes, rasters)


def loss_and_grad(cfg: RunConfig, emb: np.ndarray, labels: np.ndarray, head=None,
                  num_classes: int = 0):
    """Loss value, gradient at the normalized embeddings, and head gradients (or None)."""
    batch = EmbeddingBatch(emb, labels)
    if cfg.loss == "brm":
        rv = brm_backward(batch, enumerate_pairs(labels), cfg.bins)
        return rv.risk, rv.grad_embeddings, None
    if cfg.loss == "brm+ce":
        w, b = head
        logits = matmul(emb, w) + b
        out = combined_loss(batch, enumerate_pairs(labels), logits, labels,
                            CombinedLossConfig(num_classes, cfg.ce_weight), cfg.bins)
        grad_emb = out.grad_embeddings + matmul(out.grad_logits, w.T)
        head_grads = [matmul(emb.T, out.grad_logits), out.grad_logits.sum(axis=0)]
        return out.total, grad_emb, head_grads
    dist = distance_matrix(batch)
    if cfg.loss == "contrastive":
        value, g = contrastive_loss(dist, enumerate_pairs(labels), cfg.contrastive_margin)
    elif cfg.loss == "triplet":
        value, g = triplet_loss_hard(dist, labels, cfg.triplet_margin)
    else:
        value, g = lifted_loss(dist, enumerate_pairs(labels), cfg.lifted_margin)
    return value, embedding_grad_from_distances(g, emb), None


def embed(params, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


def new_checkpoint(cfg: RunConfig, input_dim: int, num_classes: int) -> ckpt_io.Checkpoint:
    if cfg.layers[0] != input_dim:
        raise DimensionMismatch(
            f"encoder input size {cfg.layers[0]} does not match data dimension {input_dim}")
    rng = make_rng([cfg.seed, 0])
    params = init_params(rng, cfg.layers, cfg.init, cfg.activation)
    head = None
    if cfg.loss == "brm+ce":
        d = cfg.layers[-1]
        head = (rng.normal(0.0, math.sqrt(1.0 / d), size=(d, num_classes)), np.zeros(num_classes))
    arrays = params.arrays() + (list(head) if head else [])
    adam = AdamState.zeros_like(arrays, lr=cfg.lr, gamma=cfg.gamma, decay_every=cfg.decay_every)
    return ckpt_io.Checkpoint(params, adam, 0, head)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    checkpoint: ckpt_io.Checkpoint | None = None
    best: ckpt_io.Checkpoint | None = None
    stopped_early: bool = False

    @property
    def best_epoch(self) -> int:
        """First epoch at which the best validation recall@1 was reached."""
        if not self.history:
            return 0
        top = max(h["val_recall_at_1"] for h in self.history)
        return next(h["epoch"] for h in self.history if h["val_recall_at_1"] == top)


def validation_metrics(ck: ckpt_io.Checkpoint, data: PreparedData) -> dict:
    val_emb = embed(ck.params, data.val_x)
    train_emb = embed(ck.params, data.train_x)
    metrics = {
        "val_recall_at_1": recall_at_k((val_emb, data.val_y), 1),
        "val_knn_top1": float(np.mean(
            knn_classify((train_emb, data.train_y), (val_emb, data.val_y), 1) == data.val_y)),
    }
    if ck.head is not None:
        w, b = ck.head
        pred = rank_classes(matmul(val_emb, w) + b)[:, 0]
        metrics["val_head_top1"] = float(np.mean(pred == data.val_y))
    return metrics


def _draw_batch(sampler, data, cfg, rng, aug_cfg):
    idx = sampler.sample(rng)
    if data.rasters is None:
        return data.train_x[idx], data.train_y[idx]
    images = np.stack([augment(data.rasters[i], aug_cfg, rng) for i in idx])
    return images.reshape(len(idx), -1).astype(np.float64) / 255.0, data.train_y[idx]


def train_epoch(ck: ckpt_io.Checkpoint, data: PreparedData, cfg: RunConfig,
                sampler: BatchSampler, epoch: int):
    """One pass of ``len(train) // batch_size`` steps. Returns (checkpoint, mean loss)."""
    rng = make_rng([cfg.seed, 1, epoch])
    aug_cfg = AugmentConfig()
    steps = max(1, len(data.train_y) // sampler.batch_size)
    losses = []
    n_enc = len(ck.params.arrays())
    for _ in range(steps):
        for _attempt in range(MAX_RESAMPLES):
            x, y = _draw_batch(sampler, data, cfg, rng, aug_cfg)
            emb, cache = forward(ck.params, x)
            try:
                value, grad_emb, head_grads = loss_and_grad(cfg, emb, y, ck.head, data.num_classes)
                break
            except DEGENERATE as exc:
                log.debug("degenerate batch (%s), resampling", exc)
        else:
            raise DegenerateData(f"no usable batch after {MAX_RESAMPLES} resamples")
        grads = backward(ck.params, cache, grad_emb).arrays()
        if head_grads is not None:
            grads += head_grads
        arrays, ck.adam = adam_step(ck.arrays(), grads, ck.adam, epoch)
        ck.params = ck.params.with_arrays(arrays[:n_enc])
        if ck.head is not None:
            ck.head = tuple(arrays[n_enc:])
        losses.append(value)
    return ck, float(np.mean(losses))


def _copy(ck: ckpt_io.Checkpoint) -> ckpt_io.Checkpoint:
    return ckpt_io.loads(ckpt_io.dumps(ck))


def train(cfg: RunConfig, data: PreparedData | None = None, resume: ckpt_io.Checkpoint | None = None,
          out_dir=None) -> TrainResult:
    """Train until ``max_epochs`` or ``patience`` epochs without a better validation recall@1.

    With ``out_dir`` the run writes ``metrics.jsonl`` (a config header line,
    then one line per epoch), ``final.ckpt`` and ``best.ckpt``.
    """
    if data is None:
        data = prepare(load_run_data(cfg), cfg)
    try:
        sampler = BatchSampler(data.train_y, cfg.classes_per_batch, cfg.samples_per_class)
    except InsufficientClassSamples as exc:
        raise DegenerateData(str(exc)) from None

    if resume is not None:
        ck = resume
        if ck.params.input_dim != data.input_dim:
            raise DimensionMismatch("checkpoint input size does not match the data")
    else:
        ck = new_checkpoint(cfg, data.input_dim, data.num_classes)

    metrics_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "a" if resume is not None else "w",
                          encoding="utf-8")
        header = {"config": cfg.to_dict()}
        if resume is not None:
            header["resume_from_epoch"] = ck.epoch
        metrics_fh.write(json.dumps(header, sort_keys=True) + "\n")

    result = TrainResult()
    best = _copy(ck)
    since_best = 0
    try:
        while ck.epoch < cfg.max_epochs:
            epoch = ck.epoch
            lr = ck.adam.lr_at(epoch)
            ck, mean_loss = train_epoch(ck, data, cfg, sampler, epoch)
            ck.epoch = epoch + 1
            row = {"epoch": ck.epoch, "loss": mean_loss, "lr": lr}
            row.update(validation_metrics(ck, data))
            result.history.append(row)
            if metrics_fh:
                metrics_fh.write(json.dumps(row, sort_keys=True) + "\n")
                metrics_fh.flush()
            log.info("epoch %d loss %.5f val_recall@1 %.4f", ck.epoch, mean_loss,
                     row["val_recall_at_1"])

            if math.isnan(ck.best_metric) or row["val_recall_at_1"] > ck.best_metric:
                ck.best_metric = row["val_recall_at_1"]
                best = _copy(ck)
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    result.stopped_early = True
                    break
    finally:
        if metrics_fh:
            metrics_fh.close()

    result.checkpoint = ck
    result.best = best
    if out_dir is not None:
        ckpt_io.save(out_dir / "final.ckpt", ck)
        ckpt_io.save(out_dir / "best.ckpt", best)
    return result

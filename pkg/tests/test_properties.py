"""Property tests for file round trips and loss gradient structure."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brm_embed import checkpoint as ckpt_io
from brm_embed.baselines import contrastive_loss, lifted_loss, triplet_loss_hard
from brm_embed.brm import brm_backward
from brm_embed.data import (
    FeatureDataset,
    RasterDataset,
    feature_dumps,
    feature_loads,
    raster_dumps,
    raster_loads,
)
from brm_embed.encoder import AdamState, init_params
from brm_embed.errors import MalformedFile
from brm_embed.numeric import make_rng
from brm_embed.pairs import EmbeddingBatch, enumerate_pairs

from conftest import unit_rows

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.integers(1, 20), st.integers(1, 6), st.integers(2, 5))
def test_feature_csv_round_trip(seed, n, dim, classes):
    rng = make_rng(seed)
    ds = FeatureDataset(rng.standard_normal((n, dim)) * 10.0 ** rng.integers(-8, 8),
                        rng.integers(0, classes, n), classes)
    back = feature_loads(feature_dumps(ds), classes)
    assert np.array_equal(back.vectors, ds.vectors)
    assert np.array_equal(back.labels, ds.labels)


@given(seeds, st.integers(1, 10), st.integers(1, 9), st.integers(1, 256))
def test_raster_round_trip(seed, n, side, classes):
    rng = make_rng(seed)
    ds = RasterDataset(rng.integers(0, 256, (n, side, side), dtype=np.uint8),
                       rng.integers(0, classes, n), classes)
    blob = raster_dumps(ds)
    back = raster_loads(blob)
    assert np.array_equal(back.images, ds.images) and np.array_equal(back.labels, ds.labels)
    assert raster_dumps(back) == blob


@given(seeds, st.integers(0, 60))
def test_raster_truncation_always_rejected(seed, cut):
    rng = make_rng(seed)
    blob = raster_dumps(RasterDataset(rng.integers(0, 256, (3, 4, 4), dtype=np.uint8),
                                      np.array([0, 1, 1]), 2))
    with pytest.raises(MalformedFile):
        raster_loads(blob[:min(cut, len(blob) - 1)])


@settings(max_examples=30)
@given(seeds, st.lists(st.integers(1, 6), min_size=1, max_size=3).map(lambda s: s + [2]),
       st.booleans(),
       st.integers(0, 10_000))
def test_checkpoint_round_trip(seed, sizes, with_head, epoch):
    rng = make_rng(seed)
    params = init_params(rng, sizes)
    head = (rng.standard_normal((sizes[-1], 3)), rng.standard_normal(3)) if with_head else None
    arrays = params.arrays() + (list(head) if head else [])
    adam = AdamState.zeros_like(arrays, lr=1e-3, gamma=0.5, decay_every=7)
    adam.m = [rng.standard_normal(a.shape) for a in arrays]
    adam.step = epoch * 3
    ck = ckpt_io.Checkpoint(params, adam, epoch, head, float(rng.random()))
    blob = ckpt_io.dumps(ck)
    assert ckpt_io.dumps(ckpt_io.loads(blob)) == blob


def _distance_grads(x, y):
    d = np.clip(-(x @ x.T), -1, 1)
    p = enumerate_pairs(y)
    return {
        "brm": brm_backward(EmbeddingBatch(x, y), p, 15).grad_distances,
        "contrastive": contrastive_loss(d, p, 0.5)[1],
        "triplet": triplet_loss_hard(d, y, 0.2)[1],
        "lifted": lifted_loss(d, p, 1.0)[1],
    }


@given(seeds, st.integers(2, 4), st.integers(2, 4))
def test_distance_gradients_symmetric_with_zero_diagonal(seed, classes, per_class):
    rng = make_rng(seed)
    y = np.repeat(np.arange(classes), per_class)
    for name, g in _distance_grads(unit_rows(rng, y.size, 4), y).items():
        assert np.allclose(g, g.T, atol=1e-15), name
        assert np.all(np.diag(g) == 0), name


@given(seeds)
def test_distance_gradients_sign(seed):
    # pulling positives together and pushing negatives apart never hurts
    rng = make_rng(seed)
    y = np.repeat(np.arange(3), 3)
    same = y[:, None] == y[None, :]
    for name, g in _distance_grads(unit_rows(rng, 9, 4), y).items():
        if name == "brm":
            continue  # soft binning can move mass either way within a bin
        assert np.all(g[same] >= 0) and np.all(g[~same] <= 0), name

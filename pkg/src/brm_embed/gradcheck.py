"""Central finite-difference checks of the hand-derived gradients.

The numerical side evaluates only forward computations (encoder forward,
distances, histograms, loss value). It never touches a backward routine.

Kink rule: a coordinate is *excluded* when its stencil ``x - h, x, x + h``
changes the active piece of a non-smooth function anywhere in the pipeline.
That covers the histogram bin bracketing a pair distance, the ReLU active set,
a hinge switching on or off, and the hardest-negative choice of the triplet
loss. Such a stencil straddles a kink, so the difference quotient does not
estimate either one-sided derivative.

Relative error is ``|a - n| / max(|a|, |n|, floor)``. The floor (default
1e-6) keeps round-off in near-zero gradient entries from dominating.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import contrastive_loss, hardest_negatives, lifted_loss, triplet_loss_hard
from .brm import brm_backward, brm_risk, embedding_grad_from_distances
from .encoder import backward, forward, init_params
from .numeric import l2_normalize, make_rng
from .pairs import EmbeddingBatch, bin_coordinates, enumerate_pairs, pair_distances, pair_histograms

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
REL_FLOOR = 1e-6
PIPELINE_LOSSES = ("brm", "contrastive", "triplet", "lifted")


def central_difference(f, x: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """``(f(x + h e_k) - f(x - h e_k)) / 2h`` for every coordinate ``k`` of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for k in range(x.size):
        orig = x.flat[k]
        x.flat[k] = orig + h
        up = f(x)
        x.flat[k] = orig - h
        down = f(x)
        x.flat[k] = orig
        grad.flat[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _raw_distances(emb):
    # no unit-norm check: perturbed embeddings are evaluated as-is
    return np.clip(-(emb @ emb.T), -1.0, 1.0)


def _loss_value(loss, emb, labels, pairs, bins, margins):
    """Loss value and the piece signature used by the kink rule."""
    dist = _raw_distances(emb)
    if loss == "brm":
        hist = pair_histograms(dist, pairs, bins)
        sig = [bin_coordinates(pair_distances(dist, pairs.positives), bins)[0],
               bin_coordinates(pair_distances(dist, pairs.negatives), bins)[0]]
        return brm_risk(hist), sig
    if loss == "contrastive":
        value, _ = contrastive_loss(dist, pairs, margins["contrastive"])
        s = (1.0 + pair_distances(dist, pairs.negatives)) / 2.0
        return value, [s < margins["contrastive"]]
    if loss == "triplet":
        value, g = triplet_loss_hard(dist, labels, margins["triplet"])
        return value, [hardest_negatives(dist, labels), g != 0]
    value, g = lifted_loss(dist, pairs, margins["lifted"])
    return value, [g != 0]


def _analytic_distance_grad(loss, dist, labels, pairs, bins, margins, fault=None):
    if loss == "brm":
        raise AssertionError("brm goes through brm_backward")
    if loss == "contrastive":
        return contrastive_loss(dist, pairs, margins["contrastive"])[1]
    if loss == "triplet":
        return triplet_loss_hard(dist, labels, margins["triplet"])[1]
    return lifted_loss(dist, pairs, margins["lifted"])[1]


@dataclass
class SeedReport:
    seed: int
    max_rel: dict = field(default_factory=dict)    # component -> max relative error
    checked: int = 0
    excluded: int = 0
    tolerance: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.max_rel.values())


def check_pipeline(seed: int, *, loss: str = "brm", n: int = 16, dim: int = 8, bins: int = 15,
                   input_dim: int = 6, hidden=(10,), classes: int = 4,
                   h: float = DEFAULT_H, tolerance: float = DEFAULT_TOL,
                   margins: dict | None = None, fault: str | None = None) -> SeedReport:
    """Compare analytic and numerical gradients of inputs -> encoder -> loss.

    Every encoder parameter and every input coordinate is checked. ``fault``
    injects a known bug (``"neg-hist-sign"``) to show the check catches it.
    """
    margins = margins or {"contrastive": 0.5, "triplet": 0.2, "lifted": 1.0}
    rng = make_rng([seed, 99])
    sizes = (input_dim, *hidden, dim)
    params = init_params(rng, sizes)
    for b in params.biases:
        b += rng.normal(0.0, 0.1, size=b.shape)
    x = rng.standard_normal((n, input_dim))
    labels = np.arange(n) % classes
    pairs = enumerate_pairs(labels)

    emb, cache = forward(params, x)
    if loss == "brm":
        grad_emb = brm_backward(EmbeddingBatch(emb, labels), pairs, bins, _fault=fault).grad_embeddings
    else:
        dist = _raw_distances(emb)
        g = _analytic_distance_grad(loss, dist, labels, pairs, bins, margins)
        grad_emb = embedding_grad_from_distances(g, emb)
    grads = backward(params, cache, grad_emb)

    def evaluate(p, inputs):
        out = inputs
        relu = []
        for l, (w, b) in enumerate(zip(p.weights, p.biases)):
            z = out @ w + b
            if l < len(p.weights) - 1:
                relu.append(z > 0)
                z = np.maximum(z, 0.0)
            out = z
        value, sig = _loss_value(loss, l2_normalize(out), labels, pairs, bins, margins)
        return value, relu + sig

    report = SeedReport(seed, tolerance=tolerance)
    components = [("inputs", x, grads.inputs, None)]
    for l in range(len(params.weights)):
        components.append((f"W{l}", params.weights[l], grads.weights[l], ("w", l)))
        components.append((f"b{l}", params.biases[l], grads.biases[l], ("b", l)))

    for name, base, analytic, slot in components:
        def run(values, slot=slot):
            if slot is None:
                return evaluate(params, values)
            ws = list(params.weights)
            bs = list(params.biases)
            (ws if slot[0] == "w" else bs)[slot[1]] = values
            return evaluate(type(params)(params.sizes, ws, bs, params.activation), x)

        _, base_sig = run(base)
        errs = []
        work = np.array(base, dtype=np.float64)
        for k in range(work.size):
            orig = work.flat[k]
            work.flat[k] = orig + h
            up, sig_up = run(work)
            work.flat[k] = orig - h
            down, sig_down = run(work)
            work.flat[k] = orig
            if not (_same(base_sig, sig_up) and _same(base_sig, sig_down)):
                report.excluded += 1
                continue
            numeric = (up - down) / (2.0 * h)
            errs.append(relative_error(analytic.flat[k], numeric))
            report.checked += 1
        report.max_rel[name] = float(max(errs)) if errs else 0.0
    return report


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def run_checks(seeds, **kw) -> list:
    return [check_pipeline(s, **kw) for s in seeds]

"""Feedforward embedding network with a hand-derived backward pass and Adam.

Layer ``l`` computes ``z = h @ W_l + b_l``. Every layer except the last is
followed by the activation, and the final output rows are L2-normalized.
``sizes = [D]`` is the zero-depth network (normalization only).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatch, DimensionMismatch, InvalidConfig, ShapeMismatch
from .numeric import l2_normalize, l2_normalize_vjp, matmul

ACTIVATIONS = ("relu", "tanh")


@dataclass
class EncoderParams:
    sizes: tuple
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        _validate_sizes(self.sizes, self.activation)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise InvalidConfig("one weight matrix and bias per layer required")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.sizes[l], self.sizes[l + 1])
            if np.shape(w) != shape or np.shape(b) != (shape[1],):
                raise ShapeMismatch(f"layer {l}: expected W{shape}, b({shape[1]},)")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def arrays(self) -> list:
        """Parameters in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "EncoderParams":
        return EncoderParams(self.sizes, list(arrays[0::2]), list(arrays[1::2]), self.activation)


@dataclass
class ForwardCache:
    sizes: tuple
    inputs: np.ndarray
    pre: list          # pre-activation of every layer
    post: list         # input of every layer (post[0] is the network input)
    raw: np.ndarray    # final output before normalization


@dataclass
class EncoderGrads:
    weights: list
    biases: list
    inputs: np.ndarray

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def _validate_sizes(sizes, activation="relu"):
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise InvalidConfig(f"invalid layer sizes {sizes}")
    if sizes[-1] < 2:
        raise InvalidConfig("embedding dimension must be >= 2")
    if activation not in ACTIVATIONS:
        raise InvalidConfig(f"unknown activation {activation!r}")


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def init_params(rng: np.random.Generator, sizes, scheme: str = "he",
                activation: str = "relu") -> EncoderParams:
    """Gaussian weights (He: var 2/fan_in, Xavier: var 2/(fan_in+fan_out)), zero biases."""
    sizes = tuple(int(s) for s in sizes)
    _validate_sizes(sizes, activation)
    if scheme not in ("he", "xavier"):
        raise InvalidConfig(f"unknown init scheme {scheme!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        var = 2.0 / fan_in if scheme == "he" else 2.0 / (fan_in + fan_out)
        weights.append(rng.normal(0.0, np.sqrt(var), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(sizes, weights, biases, activation)


def forward(params: EncoderParams, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionMismatch(f"input shape {x.shape} incompatible with input dim {params.input_dim}")
    pre, post = [], []
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        post.append(h)
        z = matmul(h, w) + b
        pre.append(z)
        h = z if l == last else _act(z, params.activation)
    out = l2_normalize(h)
    return out, ForwardCache(params.sizes, x, pre, post, h)


def backward(params: EncoderParams, cache: ForwardCache, grad_embeddings) -> EncoderGrads:
    """Gradients of a loss with respect to parameters and inputs.

    ``grad_embeddings`` is the loss gradient at the normalized outputs.
    """
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if cache.sizes != params.sizes or g.shape != cache.raw.shape:
        raise CacheMismatch("cache does not belong to this network / gradient shape")
    g = l2_normalize_vjp(cache.raw, g)
    n_layers = len(params.weights)
    dW, db = [None] * n_layers, [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        if l != n_layers - 1:
            g = g * _act_grad(cache.pre[l], params.activation)
        dW[l] = matmul(cache.post[l].T, g)
        db[l] = g.sum(axis=0)
        g = matmul(g, params.weights[l].T)
    return EncoderGrads(dW, db, g)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.5
    decay_every: int = 50

    @classmethod
    def zeros_like(cls, arrays, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)

    def lr_at(self, epoch: int) -> float:
        return scheduled_lr(self.lr, self.gamma, self.decay_every, epoch)


def scheduled_lr(base: float, gamma: float, every: int, epoch: int) -> float:
    """Step decay: ``base * gamma ** (epoch // every)``."""
    return base * gamma ** (epoch // every)


def adam_step(arrays, grads, state: AdamState, epoch: int = 0):
    """One bias-corrected Adam update. Returns ``(new_arrays, new_state)``."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeMismatch("parameter, gradient and moment lists differ in length")
    t = state.step + 1
    lr = state.lr_at(epoch)
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if np.shape(p) != g.shape or m.shape != g.shape:
            raise ShapeMismatch(f"shape mismatch {np.shape(p)} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps,
                          state.gamma, state.decay_every)
    return new_p, new_state

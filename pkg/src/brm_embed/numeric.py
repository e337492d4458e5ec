"""Dense float64 arithmetic with a fixed reduction order, plus L2 normalization.

Every reduction that feeds a loss or a gradient goes through :func:`matmul`,
which accumulates over the inner dimension in ascending order using plain
elementwise multiply/add. IEEE-754 makes those bit-exact on every platform,
which BLAS does not guarantee.

Random numbers come from numpy's ``PCG64`` bit generator (see :func:`make_rng`).
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateNorm, DimensionMismatch

EPS_NORM = 1e-12
RNG_ALGORITHM = "PCG64"


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty matrix, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated row-major over ascending ``k``.

    Gives results identical to the textbook triple loop
    ``out[i, j] = ((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    out = a[:, 0:1] * b[0:1, :]
    for k in range(1, a.shape[1]):
        out += a[:, k:k + 1] * b[k:k + 1, :]
    return out


def _norms(x: np.ndarray) -> np.ndarray:
    # fixed-order sum of squares, same rationale as matmul
    sq = x * x
    acc = sq[..., 0].copy()
    for k in range(1, x.shape[-1]):
        acc += sq[..., k]
    return np.sqrt(acc)


def l2_normalize(v, eps: float = EPS_NORM) -> np.ndarray:
    """Scale ``v`` to unit L2 norm. Works row-wise on 2-D input."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.shape[-1] == 0:
        raise DimensionMismatch(f"cannot normalize array of shape {v.shape}")
    norm = _norms(v)
    if np.any(norm <= eps):
        raise DegenerateNorm(f"L2 norm <= {eps:g}")
    return v / norm[..., None]


def l2_normalize_vjp(v, upstream, eps: float = EPS_NORM) -> np.ndarray:
    """Vector-Jacobian product of :func:`l2_normalize`.

    With ``x = v/|v|`` the Jacobian is ``(I - x x^T)/|v|``, so the product is
    ``(u - (u.x) x) / |v|``. Row-wise on 2-D input.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"upstream shape {u.shape} != input shape {v.shape}")
    x = l2_normalize(v, eps)
    norm = _norms(v)
    proj = _rowdot(u, x)
    return (u - proj[..., None] * x) / norm[..., None]


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    prod = a * b
    acc = prod[..., 0].copy()
    for k in range(1, a.shape[-1]):
        acc += prod[..., k]
    return acc

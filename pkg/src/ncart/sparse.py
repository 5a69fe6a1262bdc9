"""Sparse probability mappings (sparsemax, alpha-entmax) and their backward passes.

All functions act on the last axis, so a matrix is transformed row by row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkernel import asfloat

ENTMAX_ALPHA = 1.5


def _validate(z) -> np.ndarray:
    z = asfloat(z)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ValueError("sparse mapping needs a non-empty last axis")
    if not np.all(np.isfinite(z)):
        raise ValueError("sparse mapping input contains non-finite entries")
    return z


def sparsemax(z) -> np.ndarray:
    """Euclidean projection of each row of ``z`` onto the probability simplex."""
    z = _validate(z)
    d = z.shape[-1]
    # stable descending sort: ties keep original index order
    order = np.argsort(-z, axis=-1, kind="stable")
    zs = np.take_along_axis(z, order, axis=-1)
    cssv = np.cumsum(zs, axis=-1)
    ks = np.arange(1, d + 1, dtype=np.float64)
    support = 1.0 + ks * zs > cssv
    k = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cssv, k - 1, axis=-1) - 1.0) / k
    return np.maximum(z - tau, 0.0)


def sparsemax_bwd(p, v) -> np.ndarray:
    """Vector-Jacobian product of sparsemax at output ``p`` with cotangent ``v``."""
    p, v = asfloat(p), asfloat(v)
    s = p > 0
    n_s = s.sum(axis=-1, keepdims=True)
    if np.any(n_s == 0):
        raise ValueError("sparsemax output has empty support")
    vbar = (v * s).sum(axis=-1, keepdims=True) / n_s
    return s * (v - vbar)


def entmax(z, alpha: float = ENTMAX_ALPHA, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """alpha-entmax by bisection on the threshold.

    p_i = max((alpha - 1) z_i - tau, 0) ** (1 / (alpha - 1)), with tau chosen so
    the row sums to one. Stops once every row has ``|sum(p) - 1| <= tol``, the
    bracket can no longer shrink, or after ``max_iter`` halvings. ``tol=0``
    runs to full working precision.
    """
    if not alpha > 1:
        raise ValueError("entmax requires alpha > 1")
    z = _validate(z)
    x = (alpha - 1.0) * z
    expo = 1.0 / (alpha - 1.0)
    hi = x.max(axis=-1, keepdims=True)
    lo = hi - 1.0

    def power(u):
        return np.square(u) if expo == 2.0 else u**expo

    def mass(tau):
        return power(np.maximum(x - tau, 0.0)).sum(axis=-1, keepdims=True)

    for _ in range(max_iter):
        tau = 0.5 * (lo + hi)
        f = mass(tau)
        if np.all(np.abs(f - 1.0) <= tol) or np.all((tau == lo) | (tau == hi)):
            break
        big = f >= 1.0
        lo = np.where(big, tau, lo)
        hi = np.where(big, hi, tau)
    p = power(np.maximum(x - tau, 0.0))
    return p / p.sum(axis=-1, keepdims=True)


def entmax_bwd(p, v, alpha: float = ENTMAX_ALPHA) -> np.ndarray:
    p, v = asfloat(p), asfloat(v)
    s = p > 0
    if np.any(s.sum(axis=-1) == 0):
        raise ValueError("entmax output has empty support")
    g = np.where(s, p, 0.0) ** (2.0 - alpha) * s
    q = (g * v).sum(axis=-1, keepdims=True) / g.sum(axis=-1, keepdims=True)
    return g * v - g * q


@dataclass(frozen=True)
class SparseFn:
    kind: str = "sparsemax"
    alpha: float = ENTMAX_ALPHA

    def __post_init__(self):
        if self.kind not in ("sparsemax", "entmax"):
            raise ValueError(f"unknown sparse function {self.kind!r}")
        if self.kind == "entmax" and not self.alpha > 1:
            raise ValueError("entmax requires alpha > 1")

    def __call__(self, z) -> np.ndarray:
        if self.kind == "sparsemax":
            return sparsemax(z)
        return entmax(z, self.alpha, tol=0.0)

    def backward(self, p, v) -> np.ndarray:
        if self.kind == "sparsemax":
            return sparsemax_bwd(p, v)
        return entmax_bwd(p, v, self.alpha)


def get(kind: str) -> SparseFn:
    return SparseFn(kind)

"""Dense float64 kernels with explicit forward/backward pairs.

Every ``*_fwd`` returns ``(out, cache)`` and the matching ``*_bwd`` consumes
that cache together with the upstream cotangent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def asfloat(x) -> np.ndarray:
    """Array view of ``x``; keeps wider float dtypes, casts everything else to float64."""
    a = np.asarray(x)
    if a.dtype.kind != "f" or a.dtype.itemsize < 8:
        a = a.astype(np.float64)
    return a


def as_matrix(x, name: str = "x") -> np.ndarray:
    a = asfloat(x)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(x: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product with a fixed left-to-right summation order per output element.

    Accepts batched operands (``(..., m, k) @ (..., k, n)``). The inner
    dimension is accumulated one term at a time, so the result is bitwise
    equal to the naive triple loop.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    k = a.shape[-1]
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    out = np.zeros(shape)
    for i in range(k):
        out = out + a[..., :, i : i + 1] * b[..., i : i + 1, :]
    return out


def bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """BLAS-backed batched product used on the training hot path.

    Deterministic for fixed shapes and thread count, but the summation order
    is the library's; use :func:`matmul` where bitwise order matters.
    """
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


# -- elementwise layers ------------------------------------------------------

def relu_fwd(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_bwd(dout: np.ndarray, cache: np.ndarray) -> np.ndarray:
    if dout.shape != cache.shape:
        raise ValueError("relu_bwd: shape mismatch")
    return dout * (cache > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function (scipy's expit keeps long double inputs wide)."""
    return expit(asfloat(x))


def sigmoid_fwd(x: np.ndarray):
    y = sigmoid(x)
    return y, y


def sigmoid_bwd(dout: np.ndarray, cache: np.ndarray) -> np.ndarray:
    if dout.shape != cache.shape:
        raise ValueError("sigmoid_bwd: shape mismatch")
    return dout * cache * (1.0 - cache)


def bias_add_fwd(x: np.ndarray, b: np.ndarray):
    if x.shape[-1] != b.shape[-1]:
        raise ValueError(f"bias_add: {x.shape} vs {b.shape}")
    return x + b, None


def bias_add_bwd(dout: np.ndarray, cache=None):
    """Returns ``(dx, db)``; ``db`` sums over every leading axis."""
    return dout, dout.reshape(-1, dout.shape[-1]).sum(axis=0)


# -- batch normalization -----------------------------------------------------

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, n_features: int) -> "BatchNormState":
        if n_features < 1:
            raise ValueError("batch norm needs at least one feature")
        return cls(
            gamma=np.ones(n_features),
            beta=np.zeros(n_features),
            running_mean=np.zeros(n_features),
            running_var=np.ones(n_features),
        )

    @property
    def n_features(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    train: bool


def batchnorm_fwd(x: np.ndarray, state: BatchNormState, mode: str = "train",
                  update_running: bool = True):
    x = as_matrix(x)
    if x.shape[1] == 0:
        raise ValueError("batch norm over zero features")
    if x.shape[1] != state.n_features:
        raise ValueError(f"batch norm expects {state.n_features} features, got {x.shape[1]}")
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode batch norm needs a batch of at least 2")
        mean = x.mean(axis=0)
        var = ((x - mean) ** 2).mean(axis=0)
        if update_running:
            m = state.momentum
            state.running_mean = (1 - m) * state.running_mean + m * mean
            state.running_var = (1 - m) * state.running_var + m * var
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    out = xhat * state.gamma + state.beta
    return out, BatchNormCache(xhat, inv_std, state.gamma, mode == "train")


def batchnorm_bwd(dout: np.ndarray, cache: BatchNormCache):
    """Returns ``(dx, dgamma, dbeta)``."""
    dbeta = dout.sum(axis=0)
    dgamma = (dout * cache.xhat).sum(axis=0)
    dxhat = dout * cache.gamma
    if not cache.train:
        return dxhat * cache.inv_std, dgamma, dbeta
    m = dout.shape[0]
    dx = cache.inv_std / m * (
        m * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0)
    )
    return dx, dgamma, dbeta


# -- softmax and losses ------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    z = asfloat(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_fwd(z: np.ndarray):
    p = softmax(z)
    return p, p


def softmax_bwd(dout: np.ndarray, cache: np.ndarray) -> np.ndarray:
    p = cache
    return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    The loss keeps the dtype of ``logits`` (a numpy scalar).
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    m, k = logits.shape
    if labels.shape != (m,):
        raise ValueError("one label per row required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"class index out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(m)
    loss = np.mean(logsum - shifted[rows, labels])
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / m


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries, with gradient w.r.t. ``pred``."""
    pred = asfloat(pred)
    target = asfloat(target).reshape(pred.shape)
    diff = pred - target
    return np.mean(diff**2), 2.0 * diff / diff.size


# -- gradient checking -------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_err: float
    n_checked: int
    n_skipped: int = 0
    worst: tuple | None = None
    per_param: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def rel_err(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[], float],
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    h: float = 1e-5,
    max_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    skip: Callable[[str, tuple], bool] | None = None,
) -> GradcheckReport:
    """Compare analytic ``grads`` to central differences of ``fn``.

    ``fn`` is re-evaluated after in-place perturbation of entries of
    ``params``. When ``max_per_param`` is set, that many entries per array
    are drawn with ``rng``; otherwise every entry is checked. ``skip`` may
    veto points where the mapping is not differentiable.
    """
    rng = rng or np.random.default_rng(0)
    worst, worst_at = 0.0, None
    n_checked = n_skipped = 0
    per_param = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        flat = list(np.ndindex(p.shape))
        if max_per_param is not None and len(flat) > max_per_param:
            pick = rng.choice(len(flat), size=max_per_param, replace=False)
            flat = [flat[i] for i in sorted(pick)]
        pmax = 0.0
        for idx in flat:
            if skip is not None and skip(name, idx):
                n_skipped += 1
                continue
            old = p[idx]
            p[idx] = old + h
            fp = fn()
            p[idx] = old - h
            fm = fn()
            p[idx] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss while perturbing {name}{idx}")
            num = (fp - fm) / (2 * h)
            e = rel_err(float(g[idx]), num)
            n_checked += 1
            pmax = max(pmax, e)
            if e > worst:
                worst, worst_at = e, (name, idx, float(g[idx]), num)
        per_param[name] = pmax
    return GradcheckReport(worst, n_checked, n_skipped, worst_at, per_param)


def check_grads_vec(f: Callable[[np.ndarray], float], x: np.ndarray, grad: np.ndarray,
                    h: float = 1e-5) -> float:
    """Max relative error between ``grad`` and central differences of ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    report = gradcheck(lambda: f(x), {"x": x}, {"x": np.asarray(grad, dtype=np.float64)}, h=h)
    return report.max_rel_err


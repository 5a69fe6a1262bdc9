"""NCART network: residual stack of blocks, each an ensemble of differentiable oblivious trees.

Tree parameters of a block are stored stacked along a leading tree axis so a
whole ensemble is evaluated with batched products:

    s  (N, m)        split thresholds
    W1 (N, h, m)     leaf network, first layer
    b1 (N, h)
    W2 (N, o, h)     leaf network, second layer
    b2 (N, o)
    w  (N,)          ensemble weights
    A  (N, d, n)     selection logits (final block only)
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .sparse import SparseFn

TASKS = ("binclass", "multiclass", "regression")
BLOCK_CHOICES = (2, 4)
TREE_CHOICES = (8, 16, 32, 64)
SEL_DIM_RANGE = (2, 10)
TREE_KEYS = ("s", "W1", "b1", "W2", "b2")


@dataclass
class NcartConfig:
    n_blocks: int = 2
    n_trees: int = 16
    sel_dim: int = 4
    hidden: int | None = None
    sparse_fn: str = "sparsemax"
    task: str = "binclass"
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 1024
    epochs: int = 1000
    patience: int = 0
    trials: int = 10
    timeout: float = 50000.0
    eval_batch_size: int = 256

    def validate(self) -> "NcartConfig":
        if self.n_blocks not in BLOCK_CHOICES:
            raise ValueError(f"n_blocks must be one of {BLOCK_CHOICES}, got {self.n_blocks}")
        if self.n_trees not in TREE_CHOICES:
            raise ValueError(f"n_trees must be one of {TREE_CHOICES}, got {self.n_trees}")
        lo, hi = SEL_DIM_RANGE
        if not lo <= self.sel_dim <= hi:
            raise ValueError(f"sel_dim must lie in [{lo}, {hi}], got {self.sel_dim}")
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden width must be positive")
        SparseFn(self.sparse_fn)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.patience < 0:
            raise ValueError("lr, batch_size, epochs and patience must be positive")
        if self.trials < 1 or self.timeout <= 0 or self.eval_batch_size < 1:
            raise ValueError("trials, timeout and eval_batch_size must be positive")
        return self

    def hidden_for(self, n_features: int) -> int:
        return self.hidden if self.hidden is not None else max(n_features, 16)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NcartConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class TreeParams:
    """A single tree's parameters (views into the stacked block arrays)."""

    s: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class NcartBlock:
    bn: nk.BatchNormState
    s: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w: np.ndarray
    A: np.ndarray | None = None
    sparse_fn: SparseFn = field(default_factory=SparseFn)

    @property
    def has_selection(self) -> bool:
        return self.A is not None

    @property
    def n_trees(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.bn.n_features

    @property
    def tree_dim(self) -> int:
        return self.s.shape[1]

    @property
    def out_dim(self) -> int:
        return self.b2.shape[1]

    def tree(self, i: int) -> TreeParams:
        return TreeParams(self.s[i], self.W1[i], self.b1[i], self.W2[i], self.b2[i])

    def params(self) -> dict[str, np.ndarray]:
        p = {"gamma": self.bn.gamma, "beta": self.bn.beta}
        p.update({k: getattr(self, k) for k in TREE_KEYS})
        p["w"] = self.w
        if self.A is not None:
            p["A"] = self.A
        return p

    def selection(self) -> np.ndarray:
        """Row-stochastic projection h(A), shape (N, d, n)."""
        key = (self.sparse_fn, self.A.dtype.str, self.A.tobytes())
        cached = self.__dict__.get("_selection")
        if cached is None or cached[0] != key:
            cached = (key, self.sparse_fn(self.A))
            self.__dict__["_selection"] = cached
        return cached[1]


@dataclass
class NcartModel:
    blocks: list[NcartBlock]
    n_features: int
    task: str
    n_outputs: int

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for l, blk in enumerate(self.blocks):
            for k, v in blk.params().items():
                out[f"{l}.{k}"] = v
        return out

    def copy(self) -> "NcartModel":
        return copy.deepcopy(self)

    def check_shapes(self) -> None:
        n = self.n_features
        for l, blk in enumerate(self.blocks):
            last = l == len(self.blocks) - 1
            if blk.in_dim != n:
                raise ValueError(f"block {l} expects {blk.in_dim} inputs, stream has {n}")
            if last:
                if not blk.has_selection or blk.out_dim != self.n_outputs:
                    raise ValueError("final block must select features and emit n_outputs")
            elif blk.has_selection or blk.out_dim != n:
                raise ValueError(f"residual block {l} must map {n} -> {n} without selection")


def n_outputs_for(task: str, n_classes: int | None = None) -> int:
    if task == "regression":
        return 1
    if task == "binclass":
        return 2
    if n_classes is None or n_classes < 2:
        raise ValueError("multiclass task needs at least two classes")
    return n_classes


# -- construction ------------------------------------------------------------

def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def init_block(rng: np.random.Generator, n_in: int, n_trees: int, hidden: int, out_dim: int,
               sel_dim: int | None = None, sparse_fn: str = "sparsemax") -> NcartBlock:
    m = n_in if sel_dim is None else sel_dim
    A = None if sel_dim is None else rng.uniform(-0.1, 0.1, size=(n_trees, sel_dim, n_in))
    W1 = _uniform(rng, np.sqrt(1.0 / m), (n_trees, hidden, m))
    W2 = _uniform(rng, np.sqrt(1.0 / hidden), (n_trees, out_dim, hidden))
    return NcartBlock(
        bn=nk.BatchNormState.create(n_in),
        s=np.zeros((n_trees, m)),
        W1=W1,
        b1=np.zeros((n_trees, hidden)),
        W2=W2,
        b2=np.zeros((n_trees, out_dim)),
        w=np.ones(n_trees),
        A=A,
        sparse_fn=SparseFn(sparse_fn),
    )


def init(config: NcartConfig, n_features: int, n_outputs: int, seed: int | None = None) -> NcartModel:
    config.validate()
    if n_features < 1:
        raise ValueError("n_features must be at least 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    h = config.hidden_for(n_features)
    blocks = [init_block(rng, n_features, config.n_trees, h, n_features)
              for _ in range(config.n_blocks - 1)]
    blocks.append(init_block(rng, n_features, config.n_trees, h, n_outputs,
                             sel_dim=config.sel_dim, sparse_fn=config.sparse_fn))
    model = NcartModel(blocks, n_features, config.task, n_outputs)
    model.check_shapes()
    return model


# -- forward -----------------------------------------------------------------

def tree_forward(tree, xP: np.ndarray):
    """t(xP) = W2 relu(W1 sigmoid(xP - s) + b1) + b2.

    Works for one tree (xP of shape (M, m)) or a stack (tree arrays with a
    leading axis N and xP of shape (N, M, m) or broadcastable to it).
    """
    if xP.shape[-1] != tree.s.shape[-1]:
        raise ValueError(f"tree expects {tree.s.shape[-1]} inputs, got {xP.shape[-1]}")
    z, _ = nk.sigmoid_fwd(xP - tree.s[..., None, :])
    pre = nk.bmm(z, np.swapaxes(tree.W1, -1, -2)) + tree.b1[..., None, :]
    r, _ = nk.relu_fwd(pre)
    t = nk.bmm(r, np.swapaxes(tree.W2, -1, -2)) + tree.b2[..., None, :]
    return t, {"z": z, "pre": pre, "r": r}


def tree_backward(tree, cache: dict, dt: np.ndarray):
    """Gradients of a tree stack given dL/dt of shape (N, M, o)."""
    r, pre, z = cache["r"], cache["pre"], cache["z"]
    dW2 = nk.bmm(np.swapaxes(dt, -1, -2), r)
    db2 = dt.sum(axis=-2)
    dr = nk.bmm(dt, tree.W2)
    dpre = nk.relu_bwd(dr, pre)
    dW1 = nk.bmm(np.swapaxes(dpre, -1, -2), z)
    db1 = dpre.sum(axis=-2)
    dz = nk.bmm(dpre, tree.W1)
    du = nk.sigmoid_bwd(dz, z)
    ds = -du.sum(axis=-2)
    return du, {"s": ds, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def project(block: NcartBlock, xB: np.ndarray):
    """Per-tree inputs: h(A_i) xB for a selection block, xB itself otherwise."""
    if not block.has_selection:
        return xB[None, :, :], None
    P = block.selection()
    return nk.bmm(xB[None, :, :], np.swapaxes(P, -1, -2)), P


def block_forward(block: NcartBlock, x: np.ndarray, mode: str = "train",
                  update_running: bool = True):
    x = nk.as_matrix(x)
    if x.shape[1] != block.in_dim:
        raise ValueError(f"block expects {block.in_dim} features, got {x.shape[1]}")
    xB, bn_cache = nk.batchnorm_fwd(x, block.bn, mode, update_running=update_running)
    xP, P = project(block, xB)
    t, tcache = tree_forward(block, xP)
    N = block.n_trees
    out = np.tensordot(block.w, t, axes=(0, 0)) / N
    cache = {"bn": bn_cache, "xB": xB, "P": P, "t": t, "tree": tcache}
    return out, cache


def block_backward(block: NcartBlock, cache: dict, dout: np.ndarray):
    N = block.n_trees
    t = cache["t"]
    grads = {"w": np.einsum("nmo,mo->n", t, dout) / N}
    dt = block.w[:, None, None] * dout[None, :, :] / N
    du, tg = tree_backward(block, cache["tree"], dt)
    grads.update(tg)
    if block.has_selection:
        P, xB = cache["P"], cache["xB"]
        dP = nk.bmm(np.swapaxes(du, -1, -2), xB[None, :, :])
        dxB = nk.bmm(du, P).sum(axis=0)
        grads["A"] = block.sparse_fn.backward(P, dP)
    else:
        dxB = du.sum(axis=0)
    dx, grads["gamma"], grads["beta"] = nk.batchnorm_bwd(dxB, cache["bn"])
    return dx, grads


def forward(model: NcartModel, x: np.ndarray, mode: str = "train", update_running: bool = True):
    """Return (outputs, caches). Residual blocks add their input back; the last does not."""
    x = nk.as_matrix(x)
    if x.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {x.shape[1]}")
    caches = []
    y = x
    for blk in model.blocks[:-1]:
        o, c = block_forward(blk, y, mode, update_running)
        y = y + o
        caches.append(c)
    out, c = block_forward(model.blocks[-1], y, mode, update_running)
    caches.append(c)
    return out, caches


def backward(model: NcartModel, caches: list, d_out: np.ndarray) -> dict[str, np.ndarray]:
    if len(caches) != len(model.blocks):
        raise ValueError("cache/model mismatch")
    grads = {}
    dy, g = block_backward(model.blocks[-1], caches[-1], d_out)
    last = len(model.blocks) - 1
    grads.update({f"{last}.{k}": v for k, v in g.items()})
    for l in range(last - 1, -1, -1):
        dx, g = block_backward(model.blocks[l], caches[l], dy)
        dy = dy + dx
        grads.update({f"{l}.{k}": v for k, v in g.items()})
    return grads


def loss_and_grad(model: NcartModel, out: np.ndarray, y: np.ndarray):
    if model.task == "regression":
        return nk.mse_loss(out, np.asarray(y, dtype=np.float64).reshape(out.shape))
    return nk.cross_entropy(out, y)


def loss(model: NcartModel, x: np.ndarray, y: np.ndarray, mode: str = "train") -> float:
    out, _ = forward(model, x, mode, update_running=False)
    return loss_and_grad(model, out, y)[0]


def value_and_grad(model: NcartModel, x: np.ndarray, y: np.ndarray, update_running: bool = True):
    out, caches = forward(model, x, "train", update_running)
    value, d_out = loss_and_grad(model, out, y)
    return value, backward(model, caches, d_out)


def predict_raw(model: NcartModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = nk.as_matrix(x)
    if x.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {x.shape[1]}")
    parts = [forward(model, x[i : i + batch_size], "eval")[0]
             for i in range(0, x.shape[0], batch_size)]
    if not parts:
        return np.zeros((0, model.n_outputs))
    return np.concatenate(parts, axis=0)


def predict(model: NcartModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class probabilities (M, K) for classification, values (M,) for regression."""
    out = predict_raw(model, x, batch_size)
    if model.task == "regression":
        return out[:, 0]
    return nk.softmax(out)


def route_counts(model: NcartModel, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per block, (m_left, m_right) arrays of shape (N, m).

    A sample goes right on coordinate j of a tree when sigmoid(x_j^P - s_j) > 0.5.
    """
    x = nk.as_matrix(x)
    if x.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {x.shape[1]}")
    M = x.shape[0]
    tallies = []
    y = x
    for l, blk in enumerate(model.blocks):
        xB, _ = nk.batchnorm_fwd(y, blk.bn, "eval")
        xP, _ = project(blk, xB)
        z = nk.sigmoid(xP - blk.s[:, None, :])
        right = (z > 0.5).sum(axis=1)
        tallies.append((M - right, right))
        if l < len(model.blocks) - 1:
            o, _ = block_forward(blk, y, "eval")
            y = y + o
    return tallies


# -- (de)serialization -------------------------------------------------------

def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _unarr(d: dict, where: str) -> np.ndarray:
    try:
        shape, values = d["shape"], d["values"]
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed array in section {where!r}") from e
    a = np.asarray(values, dtype=np.float64)
    if a.size != int(np.prod(shape)):
        raise ValueError(f"array size mismatch in section {where!r}")
    return a.reshape(shape)


def model_to_dict(model: NcartModel) -> dict:
    blocks = []
    for blk in model.blocks:
        b = {
            "sparse_fn": blk.sparse_fn.kind,
            "alpha": blk.sparse_fn.alpha,
            "bn": {
                "gamma": _arr(blk.bn.gamma),
                "beta": _arr(blk.bn.beta),
                "running_mean": _arr(blk.bn.running_mean),
                "running_var": _arr(blk.bn.running_var),
                "momentum": blk.bn.momentum,
                "eps": blk.bn.eps,
            },
            "w": _arr(blk.w),
        }
        for k in TREE_KEYS:
            b[k] = _arr(getattr(blk, k))
        if blk.A is not None:
            b["A"] = _arr(blk.A)
        blocks.append(b)
    return {"n_features": model.n_features, "task": model.task,
            "n_outputs": model.n_outputs, "blocks": blocks}


def model_from_dict(d: dict) -> NcartModel:
    for key in ("n_features", "task", "n_outputs", "blocks"):
        if key not in d:
            raise ValueError(f"model section missing {key!r}")
    blocks = []
    for i, b in enumerate(d["blocks"]):
        where = f"blocks[{i}]"
        try:
            bn = b["bn"]
            state = nk.BatchNormState(
                gamma=_unarr(bn["gamma"], where + ".bn.gamma"),
                beta=_unarr(bn["beta"], where + ".bn.beta"),
                running_mean=_unarr(bn["running_mean"], where + ".bn.running_mean"),
                running_var=_unarr(bn["running_var"], where + ".bn.running_var"),
                momentum=float(bn["momentum"]),
                eps=float(bn["eps"]),
            )
            kw = {k: _unarr(b[k], f"{where}.{k}") for k in TREE_KEYS}
            blocks.append(NcartBlock(
                bn=state, w=_unarr(b["w"], where + ".w"),
                A=_unarr(b["A"], where + ".A") if "A" in b else None,
                sparse_fn=SparseFn(b["sparse_fn"], float(b["alpha"])),
                **kw,
            ))
        except KeyError as e:
            raise ValueError(f"model section {where} missing {e.args[0]!r}") from e
    model = NcartModel(blocks, int(d["n_features"]), d["task"], int(d["n_outputs"]))
    model.check_shapes()
    return model


def astype(model: NcartModel, dtype) -> NcartModel:
    """Deep copy with every parameter and statistic cast to ``dtype``."""
    m = model.copy()
    for blk in m.blocks:
        for k in TREE_KEYS + ("w",):
            setattr(blk, k, getattr(blk, k).astype(dtype))
        if blk.A is not None:
            blk.A = blk.A.astype(dtype)
        for k in ("gamma", "beta", "running_mean", "running_var"):
            setattr(blk.bn, k, getattr(blk.bn, k).astype(dtype))
    return m


def _support_changes(fn: SparseFn, row: np.ndarray, j: int, delta: float) -> bool:
    base = fn(row[None, :])[0] > 0
    for step in (delta, -delta):
        moved = row.copy()
        moved[j] += step
        if not np.array_equal(fn(moved[None, :])[0] > 0, base):
            return True
    return False


def gradcheck_model(n_blocks: int, n_trees: int, sel_dim: int, sparse_fn: str, hidden: int = 8,
                    batch: int = 16, n_features: int = 12, n_classes: int = 3, seed: int = 0,
                    per_param: int | None = 5, h: float = 1e-5, support_margin: float = 1e-4):
    """Finite-difference check of the whole-model loss gradient at a random point.

    Parameters are jittered away from their structured initial values so no
    gradient is trivially zero. The analytic side runs in float64; the
    numeric side re-evaluates the loss on a long-double copy so that the
    differences are not swamped by rounding. Selection logits whose
    perturbation by ``support_margin`` would change a sparse support are
    skipped because the loss has a kink there.
    """
    cfg = NcartConfig(n_blocks=n_blocks, n_trees=n_trees, sel_dim=sel_dim, hidden=hidden,
                      sparse_fn=sparse_fn, task="multiclass").validate()
    rng = np.random.default_rng(seed)
    model = init(cfg, n_features, n_classes, seed=seed)
    for v in model.params().values():
        v += rng.normal(scale=0.3, size=v.shape)
    x = rng.normal(size=(batch, n_features))
    y = rng.integers(0, n_classes, batch)
    _, grads = value_and_grad(model, x, y, update_running=False)
    wide = astype(model, np.longdouble)
    xw = x.astype(np.longdouble)
    wide_params = wide.params()

    def skip(name: str, idx: tuple) -> bool:
        if not name.endswith(".A"):
            return False
        blk = model.blocks[int(name.split(".")[0])]
        t, k, j = idx
        return _support_changes(blk.sparse_fn, blk.A[t, k], j, support_margin)

    return nk.gradcheck(lambda: loss(wide, xw, y), wide_params, grads, h=h,
                        max_per_param=per_param, rng=rng, skip=skip)

"""Adam, the minibatch training loop, k-fold cross-validation and random search."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import model as M
from .data_io import Dataset, f1, mse, roc_auc
from .numkernel import NonFiniteError

log = logging.getLogger(__name__)

VAL_FRACTION = 0.1


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteError(f"non-finite gradient for {k} ({bad} entries) at step {state.step + 1}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    fold_metrics: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    config: dict = field(default_factory=dict)
    seed: int = 0
    completed: bool = True
    best_epoch: int | None = None
    trials: list[dict] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)

    def summary(self) -> dict[str, tuple[float, float]]:
        """Mean and population std of every fold metric."""
        out = {}
        if not self.fold_metrics:
            return out
        for key in self.fold_metrics[0]:
            if key in ("fold", "seconds"):
                continue
            vals = np.array([fm[key] for fm in self.fold_metrics], dtype=np.float64)
            out[key] = (float(vals.mean()), float(vals.std()))
        return out

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "val_losses": self.val_losses,
            "fold_metrics": self.fold_metrics,
            "summary": {k: {"mean": m, "std": s} for k, (m, s) in self.summary().items()},
            "seconds": self.seconds,
            "config": self.config,
            "seed": self.seed,
            "completed": self.completed,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "trials": self.trials,
        }


def stream_seed(seed: int, *stream: int) -> int:
    """Independent, reproducible seed for a (fold/trial) stream."""
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


def check_dataset(data: Dataset) -> None:
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.task != "regression" and np.unique(data.y).size < 2:
        raise ValueError("classification target has a single class")


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch of one sample joins its predecessor."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _val_split(data: Dataset, rng: np.random.Generator):
    n = len(data)
    n_val = max(2, int(round(VAL_FRACTION * n)))
    if n - n_val < 2:
        return data, None
    perm = rng.permutation(n)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def train(model: M.NcartModel, data: Dataset, config: M.NcartConfig,
          seed: int | None = None) -> tuple[M.NcartModel, TrainReport]:
    """Fixed-epoch Adam training, with optional early stopping on a 10% split.

    The model is updated in place and returned. When ``config.patience > 0``
    the parameters from the best validation epoch are restored at the end.
    """
    config.validate()
    check_dataset(data)
    seed = config.seed if seed is None else seed
    report = TrainReport(config=config.to_dict(), seed=seed)
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    train_data, val_data = data, None
    if config.patience > 0:
        train_data, val_data = _val_split(data, rng)
    if len(train_data) < 2:
        raise ValueError("need at least two training samples for batch normalization")
    X, y = train_data.X, train_data.y
    params = model.params()
    state = AdamState(lr=config.lr)
    best, best_loss, stale = None, np.inf, 0

    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(len(train_data), config.batch_size, rng):
            value, grads = M.value_and_grad(model, X[idx], y[idx])
            if not np.isfinite(value):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}")
            adam_step(params, grads, state)
            total += float(value) * idx.size
        report.epoch_losses.append(total / len(train_data))
        if val_data is not None:
            out = M.predict_raw(model, val_data.X, config.eval_batch_size)
            vloss = float(M.loss_and_grad(model, out, val_data.y)[0])
            report.val_losses.append(vloss)
            if vloss < best_loss - 1e-12:
                best, best_loss, stale = model.copy(), vloss, 0
                report.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.patience:
                    break
        if time.perf_counter() - start > config.timeout:
            log.warning("training stopped by timeout after %d epochs", epoch + 1)
            report.completed = False
            break

    if best is not None:
        model.blocks = best.blocks
    report.seconds = time.perf_counter() - start
    return model, report


def fit(data: Dataset, config: M.NcartConfig, seed: int | None = None):
    """Initialise a fresh model for ``data`` and train it."""
    seed = config.seed if seed is None else seed
    k = M.n_outputs_for(data.task, data.n_classes)
    model = M.init(config, data.X.shape[1], k, seed=seed)
    return train(model, data, config, seed=seed)


def evaluate(model: M.NcartModel, data: Dataset, batch_size: int = 256) -> dict[str, float]:
    pred = M.predict(model, data.X, batch_size)
    if data.task == "regression":
        return {"mse": mse(pred, data.y)}
    return {"auc": roc_auc(pred, data.y),
            "f1": f1(pred.argmax(axis=1), data.y, n_classes=pred.shape[1])}


# -- cross-validation ----------------------------------------------------------

def row_keys(data: Dataset, seed: int) -> np.ndarray:
    """Seeded per-row sort keys that depend only on row content."""
    keys = np.empty(len(data), dtype=np.uint64)
    salt = str(seed).encode()
    for i in range(len(data)):
        h = hashlib.blake2b(data.X[i].tobytes() + np.asarray(data.y[i]).tobytes(),
                            digest_size=8, key=salt)
        keys[i] = int.from_bytes(h.digest(), "little")
    return keys


def fold_assignment(data: Dataset, k: int, seed: int) -> np.ndarray:
    """Fold id per row: stratified for classification, contiguous otherwise.

    Rows are ordered by content-derived keys, so permuting the input rows
    permutes the assignment along with them.
    """
    if k < 2:
        raise ValueError("need at least two folds")
    n = len(data)
    if n < k:
        raise ValueError(f"{n} samples cannot fill {k} folds")
    keys = row_keys(data, seed)
    fold = np.empty(n, dtype=np.int64)
    if data.task == "regression":
        order = np.lexsort((data.y, keys))
        for f, part in enumerate(np.array_split(order, k)):
            fold[part] = f
        return fold
    classes, counts = np.unique(data.y, return_counts=True)
    if counts.min() < k:
        small = classes[counts.argmin()]
        raise ValueError(f"class {small} has {counts.min()} samples, fewer than {k} folds")
    pos = 0
    for c in classes:
        members = np.flatnonzero(data.y == c)
        members = members[np.argsort(keys[members], kind="stable")]
        fold[members] = (pos + np.arange(members.size)) % k
        pos += members.size
    return fold


def _key_order(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return idx[np.argsort(keys[idx], kind="stable")]


def kfold_cv(data: Dataset, config: M.NcartConfig, k: int = 5,
             seed: int | None = None) -> TrainReport:
    config.validate()
    check_dataset(data)
    seed = config.seed if seed is None else seed
    start = time.perf_counter()
    fold = fold_assignment(data, k, seed)
    keys = row_keys(data, seed)
    report = TrainReport(config=config.to_dict(), seed=seed)
    for f in range(k):
        t0 = time.perf_counter()
        tr = _key_order(keys, np.flatnonzero(fold != f))
        te = _key_order(keys, np.flatnonzero(fold == f))
        model, rep = fit(data.subset(tr), config, seed=stream_seed(seed, f))
        metrics = evaluate(model, data.subset(te), config.eval_batch_size)
        report.fold_metrics.append({"fold": f, **metrics, "seconds": time.perf_counter() - t0})
        report.completed = report.completed and rep.completed
        log.info("fold %d: %s", f, metrics)
    report.seconds = time.perf_counter() - start
    return report


# -- hyperparameter search ---------------------------------------------------

def sample_config(rng: np.random.Generator, base: M.NcartConfig) -> M.NcartConfig:
    return replace(
        base,
        n_trees=int(rng.choice(M.TREE_CHOICES)),
        sel_dim=int(rng.integers(M.SEL_DIM_RANGE[0], M.SEL_DIM_RANGE[1] + 1)),
        n_blocks=int(rng.choice(M.BLOCK_CHOICES)),
        sparse_fn=str(rng.choice(["sparsemax", "entmax"])),
    )


def cv_score(data: Dataset, config: M.NcartConfig, k: int = 5, seed: int | None = None):
    rep = kfold_cv(data, config, k, seed)
    summary = rep.summary()
    score = -summary["mse"][0] if data.task == "regression" else summary["auc"][0]
    return score, rep


def random_search(data: Dataset, base: M.NcartConfig, trials: int = 10, seed: int = 0,
                  k: int = 5, scorer: Callable[[M.NcartConfig], float] | None = None):
    """Uniform random search over the block/tree/selection/sparse-fn space.

    Each trial is scored by mean k-fold AUC (classification) or -MSE
    (regression), or by ``scorer`` when given. Ties go to the earlier trial.
    Returns ``(best_config, report_of_best)``; the report lists every trial.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    best_cfg, best_score, best_rep = None, -np.inf, None
    history = []
    for t in range(trials):
        cfg = sample_config(rng, base)
        if scorer is not None:
            score, rep = float(scorer(cfg)), TrainReport(config=cfg.to_dict(), seed=seed)
        else:
            score, rep = cv_score(data, cfg, k, seed)
        history.append({"trial": t, "score": score, "config": cfg.to_dict()})
        log.info("trial %d score %.5f config %s", t, score, cfg)
        if best_cfg is None or score > best_score:
            best_cfg, best_score, best_rep = cfg, score, rep
    best_rep.trials = history
    return best_cfg, best_rep

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncart import model as M
from ncart import train as T
from ncart.data_io import Dataset
from ncart.numkernel import NonFiniteError

FAST = M.NcartConfig(n_blocks=2, n_trees=8, sel_dim=2, hidden=8, epochs=5, batch_size=32)


def blobs(n=200, seed=0, k=2, d=4):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    X = rng.normal(size=(n, d)) * 0.5
    X[:, 0] += 2.0 * y
    return Dataset.from_arrays(X, y, "binclass" if k == 2 else "multiclass")


# -- Adam ----------------------------------------------------------------------

def test_adam_first_step_hand_oracle():
    p = {"x": np.array([0.5])}
    state = T.AdamState()
    T.adam_step(p, {"x": np.array([1.0])}, state)
    m = 0.1 * 1.0
    v = 0.001 * 1.0
    mhat, vhat = m / (1 - 0.9), v / (1 - 0.999)
    expected = 0.5 - 1e-3 * mhat / (np.sqrt(vhat) + 1e-8)
    assert abs(p["x"][0] - expected) < 1e-12
    assert abs((p["x"][0] - 0.5) + 0.001) < 1e-10


def test_adam_two_steps_hand_oracle():
    p = {"x": np.array([0.0])}
    state = T.AdamState(lr=0.01)
    for g in (2.0, -1.0):
        T.adam_step(p, {"x": np.array([g])}, state)
    m1, v1 = 0.1 * 2.0, 0.001 * 4.0
    x1 = -0.01 * (m1 / 0.1) / (np.sqrt(v1 / 0.001) + 1e-8)
    m2, v2 = 0.9 * m1 + 0.1 * -1.0, 0.999 * v1 + 0.001 * 1.0
    x2 = x1 - 0.01 * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
    assert abs(p["x"][0] - x2) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(1, 5))
def test_adam_zero_gradient_fixed_point(values, steps):
    x = np.array(values)
    p = {"x": x.copy()}
    state = T.AdamState()
    for _ in range(steps):
        T.adam_step(p, {"x": np.zeros_like(x)}, state)
    assert np.array_equal(p["x"], x)


def test_adam_rejects_nonfinite_and_shape():
    p = {"x": np.zeros(2)}
    with pytest.raises(NonFiniteError, match="x"):
        T.adam_step(p, {"x": np.array([0.0, np.nan])}, T.AdamState())
    with pytest.raises(ValueError):
        T.adam_step(p, {"x": np.zeros(3)}, T.AdamState())


# -- training loop ---------------------------------------------------------------

def test_minibatches_cover_every_index_once():
    rng = np.random.default_rng(0)
    for n, bs in [(10, 3), (10, 5), (11, 5), (1, 4), (7, 100)]:
        batches = T.minibatches(n, bs, rng)
        assert sorted(np.concatenate(batches).tolist()) == list(range(n))
        if len(batches) > 1:
            assert min(b.size for b in batches) >= 2


def test_epochs_zero_returns_model_unchanged():
    ds = blobs()
    model = M.init(FAST, 4, 2, seed=0)
    before = model.copy()
    out, rep = T.train(model, ds, replace(FAST, epochs=0))
    assert rep.epochs_run == 0
    for (k, a), (_, b) in zip(out.params().items(), before.params().items()):
        assert np.array_equal(a, b), k


def test_training_is_deterministic_and_losses_finite():
    ds = blobs()
    m1, r1 = T.fit(ds, FAST, seed=3)
    m2, r2 = T.fit(ds, FAST, seed=3)
    assert r1.epoch_losses == r2.epoch_losses
    assert all(np.isfinite(r1.epoch_losses)) and r1.epochs_run == FAST.epochs
    assert np.array_equal(M.predict(m1, ds.X), M.predict(m2, ds.X))


def test_linearly_separable_reaches_high_accuracy():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 4))
    y = (X @ np.array([1.0, -0.5, 0.25, 0.0]) > 0).astype(int)
    X += 0.5 * (2 * y[:, None] - 1) * np.array([1.0, -0.5, 0.25, 0.0])  # open a margin
    ds = Dataset.from_arrays(X, y)
    cfg = replace(M.NcartConfig(), epochs=200, batch_size=64)
    model, _ = T.fit(ds, cfg, seed=0)
    acc = (M.predict(model, ds.X).argmax(axis=1) == ds.y).mean()
    assert acc >= 0.99


def test_full_batch_loss_decreases_initially():
    ds = blobs(n=128, seed=2)
    model = M.init(M.NcartConfig(), 4, 2, seed=0)
    params = model.params()
    state = T.AdamState()
    losses = []
    for _ in range(10):
        value, g = M.value_and_grad(model, ds.X, ds.y)
        losses.append(float(value))
        T.adam_step(params, g, state)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_rejects_bad_data():
    with pytest.raises(ValueError, match="empty"):
        T.train(M.init(FAST, 2, 2), Dataset.from_arrays(np.zeros((0, 2)), np.zeros(0, int)), FAST)
    with pytest.raises(ValueError, match="single class"):
        T.fit(Dataset.from_arrays(np.zeros((4, 2)), [1, 1, 1, 1]), FAST)


def test_early_stopping_and_timeout():
    ds = blobs(n=200)
    cfg = replace(FAST, epochs=400, patience=3, lr=0.05)
    _, rep = T.fit(ds, cfg, seed=0)
    assert rep.epochs_run < 400 and rep.best_epoch is not None
    assert len(rep.val_losses) == rep.epochs_run
    _, rep = T.fit(ds, replace(FAST, epochs=10_000, timeout=0.05), seed=0)
    assert not rep.completed and rep.epochs_run < 10_000


def test_regression_training_runs():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 3))
    ds = Dataset.from_arrays(X, X[:, 0] * 2.0, "regression")
    cfg = replace(FAST, task="regression", epochs=30)
    model, rep = T.fit(ds, cfg)
    assert rep.epoch_losses[-1] < rep.epoch_losses[0]
    assert set(T.evaluate(model, ds)) == {"mse"}


# -- cross-validation --------------------------------------------------------

def test_fold_assignment_partition_and_stratification():
    ds = blobs(n=103, k=3, seed=5)
    fold = T.fold_assignment(ds, 5, seed=0)
    assert sorted(set(fold.tolist())) == list(range(5))
    classes, counts = np.unique(ds.y, return_counts=True)
    for f in range(5):
        members = ds.y[fold == f]
        for c, total in zip(classes, counts):
            assert abs((members == c).sum() - total / 5) <= 1
    assert np.array_equal(fold, T.fold_assignment(ds, 5, seed=0))


def test_fold_assignment_regression_contiguous():
    rng = np.random.default_rng(1)
    ds = Dataset.from_arrays(rng.normal(size=(23, 2)), rng.normal(size=23), "regression")
    fold = T.fold_assignment(ds, 4, seed=2)
    sizes = np.bincount(fold)
    assert sizes.sum() == 23 and sizes.max() - sizes.min() <= 1


def test_fold_assignment_errors():
    ds = Dataset.from_arrays(np.arange(8.0).reshape(4, 2), [0, 0, 0, 1])
    with pytest.raises(ValueError, match="fewer than"):
        T.fold_assignment(ds, 2, seed=0)
    with pytest.raises(ValueError):
        T.fold_assignment(ds, 1, seed=0)


def test_two_folds_on_four_rows():
    ds = Dataset.from_arrays(np.arange(8.0).reshape(4, 2), [0, 1, 0, 1])
    fold = T.fold_assignment(ds, 2, seed=0)
    assert np.bincount(fold).tolist() == [2, 2]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 100))
def test_fold_contents_permutation_invariant(perm_seed, seed):
    ds = blobs(n=60, k=3, seed=6)
    perm = np.random.default_rng(perm_seed).permutation(len(ds))
    shuffled = ds.subset(perm)
    a = T.fold_assignment(ds, 5, seed)
    b = T.fold_assignment(shuffled, 5, seed)

    def fold_sets(d, f):
        return sorted(sorted(map(tuple, d.X[f == i].tolist())) for i in range(5))

    assert fold_sets(ds, a) == fold_sets(shuffled, b)


def test_kfold_metrics_permutation_invariant():
    ds = blobs(n=80, seed=7)
    perm = np.random.default_rng(0).permutation(len(ds))
    r1 = T.kfold_cv(ds, FAST, k=4, seed=1)
    r2 = T.kfold_cv(ds.subset(perm), FAST, k=4, seed=1)
    strip = lambda r: [{k: v for k, v in fm.items() if k != "seconds"} for fm in r.fold_metrics]
    assert strip(r1) == strip(r2)


def test_kfold_report_summary():
    ds = blobs(n=80, seed=8)
    rep = T.kfold_cv(ds, FAST, k=4, seed=0)
    assert len(rep.fold_metrics) == 4
    s = rep.summary()
    aucs = np.array([fm["auc"] for fm in rep.fold_metrics])
    assert s["auc"] == (aucs.mean(), aucs.std())
    assert set(s) == {"auc", "f1"}
    d = rep.to_dict()
    assert d["summary"]["auc"]["mean"] == aucs.mean()


# -- random search -------------------------------------------------------------

def test_sampled_configs_in_range():
    rng = np.random.default_rng(0)
    for _ in range(300):
        c = T.sample_config(rng, M.NcartConfig())
        c.validate()
        assert c.n_trees in (8, 16, 32, 64) and 2 <= c.sel_dim <= 10
        assert c.n_blocks in (2, 4) and c.sparse_fn in ("sparsemax", "entmax")


def test_random_search_with_rigged_scorer():
    best, rep = T.random_search(None, M.NcartConfig(), trials=10, seed=1,
                                scorer=lambda c: float(c.n_trees == 64))
    assert best.n_trees == 64 and len(rep.trials) == 10
    first64 = next(t for t in rep.trials if t["config"]["n_trees"] == 64)
    assert best.to_dict() == first64["config"]


def test_random_search_ties_go_to_earlier_trial():
    best, rep = T.random_search(None, M.NcartConfig(), trials=5, seed=2, scorer=lambda c: 1.0)
    assert best.to_dict() == rep.trials[0]["config"]
    with pytest.raises(ValueError):
        T.random_search(None, M.NcartConfig(), trials=0)


def test_random_search_single_trial_real_scoring():
    ds = blobs(n=60, seed=9)
    best, rep = T.random_search(ds, replace(FAST, epochs=2), trials=1, seed=0, k=3)
    assert rep.trials[0]["config"] == best.to_dict()
    assert rep.trials[0]["score"] == rep.summary()["auc"][0]


def test_stream_seeds_distinct():
    seeds = {T.stream_seed(0, i) for i in range(50)}
    assert len(seeds) == 50 and T.stream_seed(3, 1) == T.stream_seed(3, 1)

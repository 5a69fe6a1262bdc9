"""Seeded synthetic datasets used by the experiment scripts and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .data_io import Dataset
from .odt_approx import AxisTree, Leaf, Split, tree_eval


def labelled_tree(rng: np.random.Generator, n_features: int, depth: int = 3) -> AxisTree:
    """Axis-aligned tree with random split axes, N(0, 0.5) thresholds and balanced 0/1 leaves."""
    n_leaves = 2**depth
    labels = iter(rng.permutation(np.arange(n_leaves) % 2).astype(float))

    def build(level: int) -> AxisTree:
        if level == depth:
            return Leaf(float(next(labels)))
        axis = int(rng.integers(n_features))
        thr = float(rng.normal(scale=0.5))
        return Split(axis, thr, build(level + 1), build(level + 1))

    return build(0)


def tree_target(seed: int, n_train: int = 2000, n_holdout: int = 1000, n_features: int = 6,
                depth: int = 3) -> tuple[Dataset, Dataset, AxisTree]:
    rng = np.random.default_rng(100 + seed)
    tree = labelled_tree(rng, n_features, depth)
    X = rng.normal(size=(n_train + n_holdout, n_features))
    y = np.array([tree_eval(tree, x) for x in X]).astype(int)
    train = Dataset.from_arrays(X[:n_train], y[:n_train], "binclass")
    holdout = Dataset.from_arrays(X[n_train:], y[n_train:], "binclass")
    return train, holdout, tree


def two_feature_target(seed: int, n: int = 1000, n_features: int = 8) -> Dataset:
    """Binary label decided by features 0 and 1 only; the rest is noise of equal scale."""
    rng = np.random.default_rng(200 + seed)
    X = rng.normal(size=(n, n_features))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return Dataset.from_arrays(X, y, "binclass", [f"x{j}" for j in range(n_features)])

"""Gini feature importance aggregated over every tree of every block."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M


def gini_leaf(m_left, m_right, M_total):
    """1 - (m_left/M)^2 - (m_right/M)^2, elementwise over arrays of counts."""
    M_total = np.asarray(M_total, dtype=np.float64)
    if np.any(M_total <= 0):
        raise ValueError("gini needs at least one sample")
    l = np.asarray(m_left, dtype=np.float64) / M_total
    r = np.asarray(m_right, dtype=np.float64) / M_total
    return 1.0 - l * l - r * r


def block_importance(block: M.NcartBlock, tallies: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Per-input-coordinate scores of one block, summed over its trees.

    For a selection block the Gini of selected coordinate k is spread back
    onto the inputs through the row-stochastic weights h(A)[k, :].
    """
    m_left, m_right = (np.asarray(t) for t in tallies)
    if m_left.shape != (block.n_trees, block.tree_dim) or m_right.shape != m_left.shape:
        raise ValueError("tallies do not match block shape")
    g = gini_leaf(m_left, m_right, m_left + m_right)
    if not block.has_selection:
        return g.sum(axis=0)
    return np.einsum("tk,tkj->j", g, block.selection())


@dataclass
class ImportanceVector:
    raw: np.ndarray
    feature_names: list[str]

    @property
    def normalized(self) -> np.ndarray:
        total = self.raw.sum()
        return self.raw / total if total > 0 else np.zeros_like(self.raw)

    def ranking(self) -> list[int]:
        """Feature indices by decreasing score (ties keep feature order)."""
        return np.argsort(-self.raw, kind="stable").tolist()

    def rows(self) -> list[tuple[str, float, float]]:
        norm = self.normalized
        return [(self.feature_names[j], float(self.raw[j]), float(norm[j])) for j in self.ranking()]


def feature_importance(model: M.NcartModel, X: np.ndarray,
                       feature_names: list[str] | None = None) -> ImportanceVector:
    """Sum block scores over all blocks; stream coordinate j is credited to feature j."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("importance needs at least one sample")
    tallies = M.route_counts(model, X)
    total = np.zeros(model.n_features)
    for blk, t in zip(model.blocks, tallies):
        total += block_importance(blk, t)
    names = feature_names or [f"x{j}" for j in range(model.n_features)]
    return ImportanceVector(total, list(names))

"""Approximating an axis-aligned decision tree by the sum of two oblivious trees.

The tree is first refined into a grid (every threshold extended across the
whole space, which leaves each region's value unchanged), then leaf vectors
``a`` (per row interval) and ``b`` (per column interval) are fitted so that
``a[r] + b[c]`` matches the grid in the L1 sense.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np


@dataclass
class Leaf:
    value: float


@dataclass
class Split:
    axis: int
    threshold: float
    left: "Leaf | Split"
    right: "Leaf | Split"


AxisTree = Leaf | Split


def tree_eval(tree: AxisTree, x) -> float:
    """Route left when x[axis] < threshold, right otherwise."""
    while isinstance(tree, Split):
        tree = tree.right if x[tree.axis] >= tree.threshold else tree.left
    return tree.value


def tree_axes(tree: AxisTree) -> set[int]:
    if isinstance(tree, Leaf):
        return set()
    return {tree.axis} | tree_axes(tree.left) | tree_axes(tree.right)


def tree_thresholds(tree: AxisTree, n_axes: int) -> list[np.ndarray]:
    found: list[set[float]] = [set() for _ in range(n_axes)]

    def walk(t):
        if isinstance(t, Split):
            found[t.axis].add(float(t.threshold))
            walk(t.left)
            walk(t.right)

    walk(tree)
    return [np.array(sorted(s)) for s in found]


_TOKEN = re.compile(r"[{}]|[^\s{}]+")


def parse_tree(text: str) -> AxisTree:
    """Parse ``split AXIS THRESHOLD { LEFT } { RIGHT }`` / ``leaf VALUE``."""
    tokens = _TOKEN.findall(re.sub(r"#[^\n]*", "", text))
    pos = 0

    def take(expected=None):
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of tree description")
        tok = tokens[pos]
        if expected is not None and tok != expected:
            raise ValueError(f"expected {expected!r}, got {tok!r} at token {pos}")
        pos += 1
        return tok

    def node():
        kind = take()
        if kind == "leaf":
            return Leaf(float(take()))
        if kind == "split":
            axis, thr = int(take()), float(take())
            if axis < 0 or not np.isfinite(thr):
                raise ValueError("split needs a non-negative axis and a finite threshold")
            take("{")
            left = node()
            take("}")
            take("{")
            right = node()
            take("}")
            return Split(axis, thr, left, right)
        raise ValueError(f"unknown node kind {kind!r}")

    tree = node()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens after tree: {tokens[pos:]}")
    return tree


def format_tree(tree: AxisTree) -> str:
    if isinstance(tree, Leaf):
        return f"leaf {float(tree.value)!r}"
    return (f"split {tree.axis} {float(tree.threshold)!r} "
            f"{{ {format_tree(tree.left)} }} {{ {format_tree(tree.right)} }}")


@dataclass
class GridSpec:
    thresholds: list[np.ndarray]
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def locate(self, point) -> tuple[int, ...]:
        # side="right": a coordinate equal to a threshold lands in the upper interval
        return tuple(int(np.searchsorted(t, point[i], side="right"))
                     for i, t in enumerate(self.thresholds))

    def eval(self, point) -> float:
        return float(self.values[self.locate(point)])

    def midpoints(self) -> list[np.ndarray]:
        out = []
        for t in self.thresholds:
            if t.size == 0:
                out.append(np.array([0.0]))
                continue
            inner = (t[:-1] + t[1:]) / 2.0
            out.append(np.concatenate([[t[0] - 1.0], inner, [t[-1] + 1.0]]))
        return out


def refine(tree: AxisTree, n_axes: int | None = None) -> GridSpec:
    axes = tree_axes(tree)
    if n_axes is None:
        n_axes = max(axes) + 1 if axes else 1
    if axes and max(axes) >= n_axes:
        raise ValueError("tree uses an axis beyond n_axes")
    if n_axes > 3:
        raise ValueError("refinement is limited to three axes")
    thresholds = tree_thresholds(tree, n_axes)
    grid = GridSpec(thresholds, np.empty([t.size + 1 for t in thresholds]))
    mids = grid.midpoints()
    for cell in itertools.product(*[range(len(m)) for m in mids]):
        point = [mids[i][c] for i, c in enumerate(cell)]
        grid.values[cell] = tree_eval(tree, point)
    return grid


@dataclass
class OdtLeafVectors:
    a: np.ndarray
    b: np.ndarray


def l1_residual(values: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a[:, None] + b[None, :] - values).sum())


def fit_two_odts(grid: GridSpec | np.ndarray, tol: float = 1e-12, max_sweeps: int = 200,
                 history: list | None = None) -> tuple[OdtLeafVectors, float]:
    """Alternating median descent on sum |a_r + b_c - V_rc|.

    Each half-sweep solves its block exactly (a row-wise or column-wise
    median). Objective values after every sweep are appended to ``history``.
    The free shift (a + t, b - t) is fixed so that mean(b) = median(V).
    """
    V = np.asarray(grid.values if isinstance(grid, GridSpec) else grid, dtype=np.float64)
    if V.size == 0:
        raise ValueError("empty grid")
    if V.ndim != 2:
        raise ValueError("two-ODT fit needs a 2-axis grid")
    a = np.zeros(V.shape[0])
    b = np.median(V, axis=0)
    obj = l1_residual(V, a, b)
    if history is not None:
        history.append(obj)
    for _ in range(max_sweeps):
        a = np.median(V - b[None, :], axis=1)
        b = np.median(V - a[:, None], axis=0)
        new = l1_residual(V, a, b)
        if history is not None:
            history.append(new)
        done = obj - new < tol
        obj = new
        if done:
            break
    shift = np.median(V) - b.mean()
    b, a = b + shift, a - shift
    return OdtLeafVectors(a, b), l1_residual(V, a, b)


def odt_eval(vectors: OdtLeafVectors, thresholds: list[np.ndarray], point) -> float:
    """Sum of the two oblivious trees at ``point``; H(0) = 1 routes ties upward."""
    r = int(np.searchsorted(thresholds[0], point[0], side="right"))
    c = int(np.searchsorted(thresholds[1], point[1], side="right"))
    return float(vectors.a[r] + vectors.b[c])

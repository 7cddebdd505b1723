"""Greedy variance-reduction trees (CART) and their conversion to meta-trees."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .leaf_model import NormalGammaParams
from .metatree import FeatureSchema, MetaTree, MetaTreeNode, Split

# absolute tolerance when comparing impurity reductions
TIE_TOL = 1e-12
DEFAULT_MIN_SAMPLES_LEAF = 5


@dataclass(frozen=True)
class SplitCandidate:
    split: Split
    impurity_reduction: float
    left_count: int
    right_count: int


@dataclass(eq=False)
class TreeNode:
    """Node of a representative tree; ``value`` is the mean target of its rows."""

    split: Split | None
    n: int
    value: float
    depth: int
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def iter_nodes(self):
        yield self
        if not self.is_leaf:
            yield from self.left.iter_nodes()
            yield from self.right.iter_nodes()

    @property
    def height(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.height, self.right.height)


def sse(y: np.ndarray) -> float:
    """Sum of squared deviations from the mean (two-pass)."""
    if len(y) == 0:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2))


def _continuous_candidates(x, y, min_leaf):
    """Screening reductions for every midpoint of ``x``; returns (thresholds, reductions, n_left)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(ys)
    cs = np.cumsum(ys)[:-1]
    cs2 = np.cumsum(ys * ys)[:-1]
    n_left = np.arange(1, n)
    n_right = n - n_left
    total, total2 = cs[-1] + ys[-1], cs2[-1] + ys[-1] ** 2
    sse_left = cs2 - cs * cs / n_left
    sse_right = (total2 - cs2) - (total - cs) ** 2 / n_right
    reduction = (total2 - total * total / n) - sse_left - sse_right
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    thresholds = 0.5 * (xs[:-1] + xs[1:])
    # adjacent floats can round the midpoint up onto the right value
    thresholds = np.where(thresholds < xs[1:], thresholds, xs[:-1])
    return thresholds[valid], reduction[valid], n_left[valid]


def best_split(X, y, schema: FeatureSchema,
               min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF) -> SplitCandidate | None:
    """Split of the rows ``(X, y)`` with the largest drop in summed squared error.

    Thresholds for continuous features are midpoints between consecutive
    distinct values; binary features split 0 | 1.  Returns ``None`` if no
    admissible split reduces the error by more than ``TIE_TOL``.  Ties within
    ``TIE_TOL`` go to the lower feature index, then the lower threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("best_split needs at least one row")
    total_sse = sse(y)
    if total_sse <= TIE_TOL:
        return None

    screened = []  # (feature, threshold, screening reduction)
    for j in range(schema.n_features):
        col = X[:, j]
        if schema.is_binary(j):
            n_left = int(np.count_nonzero(col == 0.0))
            if n_left < min_samples_leaf or len(y) - n_left < min_samples_leaf:
                continue
            mask = col == 0.0
            red = total_sse - sse(y[mask]) - sse(y[~mask])
            screened.append((j, None, red))
        else:
            thr, red, _ = _continuous_candidates(col, y, min_samples_leaf)
            screened.extend((j, float(t), float(r)) for t, r in zip(thr, red))
    if not screened:
        return None

    top = max(r for _, _, r in screened)
    # cumulative-sum screening is only accurate to roughly eps * total_sse
    slack = 1e-9 * (total_sse + abs(top)) + TIE_TOL
    best = None
    for j, t, _ in (c for c in screened if c[2] >= top - slack):
        mask = X[:, j] <= (0.0 if t is None else t)
        red = total_sse - sse(y[mask]) - sse(y[~mask])
        key = (j, -np.inf if t is None else t)
        if best is None or red > best[0] + TIE_TOL or (
                abs(red - best[0]) <= TIE_TOL and key < best[1]):
            best = (red, key, j, t, int(mask.sum()))
    red, _, j, t, n_left = best
    if red <= TIE_TOL:
        return None
    return SplitCandidate(Split(j, t), red, n_left, len(y) - n_left)


def build_tree(X, y, schema: FeatureSchema, d_max: int,
               min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF) -> TreeNode:
    """Grow a CART regression tree of depth at most ``d_max``."""
    X = schema.check_matrix(X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("build_tree needs at least one row")
    if d_max < 0:
        raise ValueError("d_max must be nonnegative")

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        yr = y[rows]
        node = TreeNode(None, len(rows), float(yr.mean()), depth)
        if depth >= d_max or len(rows) < 2 * min_samples_leaf:
            return node
        cand = best_split(X[rows], yr, schema, min_samples_leaf)
        if cand is None:
            return node
        go_left = X[rows, cand.split.feature] <= cand.split.cut
        node.split = cand.split
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    return grow(np.arange(len(y)), 0)


def tree_predict(root: TreeNode, X) -> np.ndarray:
    """Leaf mean for every row of ``X``."""
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X))

    def descend(node, rows):
        if node.is_leaf:
            out[rows] = node.value
            return
        go_left = X[rows, node.split.feature] <= node.split.cut
        descend(node.left, rows[go_left])
        descend(node.right, rows[~go_left])

    descend(root, np.arange(len(X)))
    return out


def build_meta_tree(rep_tree: TreeNode, schema: FeatureSchema,
                    g_prior: float | Sequence[float] = 0.6,
                    leaf_prior: NormalGammaParams | None = None) -> MetaTree:
    """Unfitted meta-tree over the skeleton of ``rep_tree``.

    ``g_prior`` is either one value for every internal node or a sequence
    indexed by depth.  Leaves always get ``g = 0``.
    """

    def g_at(depth: int) -> float:
        if np.ndim(g_prior) == 0:
            return float(g_prior)
        return float(g_prior[depth])

    def copy(node: TreeNode) -> MetaTreeNode:
        if node.is_leaf:
            return MetaTreeNode(depth=node.depth)
        g = g_at(node.depth)
        return MetaTreeNode(split=node.split, g_prior=g, g_post=g, depth=node.depth,
                            left=copy(node.left), right=copy(node.right))

    return MetaTree(copy(rep_tree), schema, leaf_prior)

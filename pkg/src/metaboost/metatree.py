"""Meta-trees: exact Bayesian mixtures over every subtree of a fixed tree.

A :class:`MetaTree` holds a representative tree whose internal nodes carry a
split.  Each node keeps the normal-gamma sufficient statistics of all samples
routed through it and a probability ``g_post`` that the node is internal
(rather than a leaf) given the data.  Predictive densities and means mix the
node predictives along the routing path of ``x``:

    mix_s = (1 - g_s) * q_s + g_s * mix_child        (internal s)
    mix_s = q_s                                      (leaf s)

which sums over all subtrees in time linear in the depth.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import leaf_model
from .leaf_model import NormalGammaParams, SufficientStats

FORMAT_TAG = "metaboost.metatree"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureSchema:
    """Feature layout: ``n_continuous`` real columns followed by ``n_binary`` 0/1 columns."""

    n_continuous: int
    n_binary: int

    def __post_init__(self):
        if self.n_continuous < 0 or self.n_binary < 0:
            raise ValueError("feature counts must be nonnegative")

    @property
    def n_features(self) -> int:
        return self.n_continuous + self.n_binary

    def is_binary(self, feature: int) -> bool:
        return feature >= self.n_continuous

    def check_vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        binary = x[self.n_continuous:]
        if not np.all((binary == 0.0) | (binary == 1.0)):
            raise ValueError("binary features must be 0 or 1")
        return x

    def check_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.n_features)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected an (n, {self.n_features}) matrix, got shape {X.shape}")
        binary = X[:, self.n_continuous:]
        if not np.all((binary == 0.0) | (binary == 1.0)):
            raise ValueError("binary features must be 0 or 1")
        return X

    def to_dict(self) -> dict:
        return {"n_continuous": self.n_continuous, "n_binary": self.n_binary}


@dataclass(frozen=True)
class Split:
    """Feature index plus threshold; binary features carry no threshold."""

    feature: int
    threshold: float | None = None

    def check(self, schema: FeatureSchema) -> None:
        if not 0 <= self.feature < schema.n_features:
            raise ValueError(f"feature index {self.feature} out of range")
        if schema.is_binary(self.feature):
            if self.threshold is not None:
                raise ValueError("binary split must not carry a threshold")
        elif self.threshold is None or not math.isfinite(self.threshold):
            raise ValueError("continuous split needs a finite threshold")

    @property
    def cut(self) -> float:
        """Value ``c`` such that ``x[feature] <= c`` routes left."""
        return 0.0 if self.threshold is None else self.threshold

    def goes_left(self, x) -> bool:
        return bool(x[self.feature] <= self.cut)


@dataclass(eq=False)
class MetaTreeNode:
    split: Split | None = None
    g_prior: float = 0.0
    g_post: float = 0.0
    stats: SufficientStats = field(default_factory=SufficientStats)
    left: "MetaTreeNode | None" = None
    right: "MetaTreeNode | None" = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def child(self, x) -> "MetaTreeNode":
        return self.left if self.split.goes_left(x) else self.right


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def _mix(g: float, log_q: float, log_child: float) -> float:
    # log((1 - g) * q + g * child)
    return _logaddexp(_log(1.0 - g) + log_q, _log(g) + log_child)


class MetaTree:
    """Representative tree plus the per-node posterior state of its meta-tree.

    Parameters
    ----------
    root : MetaTreeNode
        Root of a binary regular tree; leaves must have ``split is None``.
    schema : FeatureSchema
        Layout of the feature vectors the tree routes.
    prior : NormalGammaParams
        Leaf-model prior shared by every node.
    """

    def __init__(self, root: MetaTreeNode, schema: FeatureSchema,
                 prior: NormalGammaParams | None = None):
        self.root = root
        self.schema = schema
        self.prior = prior if prior is not None else NormalGammaParams()
        self.log_marginal_likelihood = 0.0
        self.nodes = list(self._preorder())
        self._validate()
        self._index = {id(node): i for i, node in enumerate(self.nodes)}

    def _preorder(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def _validate(self) -> None:
        for node in self.nodes:
            if node.is_leaf:
                if node.left is not None or node.right is not None:
                    raise ValueError("leaf nodes must not have children")
                if node.g_prior != 0.0 or node.g_post != 0.0:
                    raise ValueError("leaf nodes must have g = 0")
            else:
                if node.left is None or node.right is None:
                    raise ValueError("internal nodes need exactly two children")
                node.split.check(self.schema)
                if node.left.depth != node.depth + 1 or node.right.depth != node.depth + 1:
                    raise ValueError("child depth must be parent depth + 1")
            if not (0.0 <= node.g_prior <= 1.0 and 0.0 <= node.g_post <= 1.0):
                raise ValueError("g values must lie in [0, 1]")

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes) - self.root.depth

    @property
    def n_fitted(self) -> int:
        return self.root.stats.n

    def __deepcopy__(self, memo) -> "MetaTree":
        # the node index is keyed by id(), so it has to be rebuilt for the new nodes
        clone = MetaTree(copy.deepcopy(self.root, memo), self.schema, self.prior)
        clone.log_marginal_likelihood = self.log_marginal_likelihood
        return clone

    def copy(self) -> "MetaTree":
        return copy.deepcopy(self)

    # -- routing -----------------------------------------------------------

    def route(self, x) -> list[MetaTreeNode]:
        """Root-to-leaf node path followed by ``x``."""
        x = self.schema.check_vector(x)
        path = [self.root]
        while not path[-1].is_leaf:
            path.append(path[-1].child(x))
        return path

    def _flat(self):
        index = self._index
        feature = np.full(len(self.nodes), -1, dtype=np.intp)
        cut = np.zeros(len(self.nodes))
        left = np.arange(len(self.nodes))
        right = np.arange(len(self.nodes))
        for i, node in enumerate(self.nodes):
            if not node.is_leaf:
                feature[i] = node.split.feature
                cut[i] = node.split.cut
                left[i] = index[id(node.left)]
                right[i] = index[id(node.right)]
        return feature, cut, left, right

    def leaf_indices(self, X) -> np.ndarray:
        """Index into ``self.nodes`` of the representative leaf reached by each row."""
        X = self.schema.check_matrix(X)
        feature, cut, left, right = self._flat()
        cur = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        for _ in range(self.depth):
            f = feature[cur]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= cut[cur]
            cur = np.where(internal, np.where(go_left, left[cur], right[cur]), cur)
        return cur

    # -- node posteriors ---------------------------------------------------

    def node_posterior(self, node: MetaTreeNode) -> NormalGammaParams:
        return leaf_model.posterior(self.prior, node.stats)

    def _path_log_q(self, path, y: float) -> list[float]:
        return [leaf_model.predictive_log_density(self.node_posterior(s), y) for s in path]

    @staticmethod
    def _mixture_logs(path, log_q: list[float]) -> list[float]:
        """Log of the subtree-mixed density at every path node, root first."""
        mixed = [0.0] * len(path)
        mixed[-1] = log_q[-1]
        for i in range(len(path) - 2, -1, -1):
            mixed[i] = _mix(path[i].g_post, log_q[i], mixed[i + 1])
        return mixed

    # -- prediction --------------------------------------------------------

    def predictive_log_density(self, x, y: float) -> float:
        """Log posterior-predictive density of ``y`` at ``x`` mixed over all subtrees."""
        y = float(y)
        if not math.isfinite(y):
            raise ValueError(f"observation must be finite, got {y}")
        path = self.route(x)
        return self._mixture_logs(path, self._path_log_q(path, y))[0]

    def path_weights(self, x) -> tuple[list[MetaTreeNode], np.ndarray]:
        """Path nodes and the mixture weight each node's predictive receives."""
        path = self.route(x)
        weights = np.empty(len(path))
        carry = 1.0
        for i, node in enumerate(path):
            weights[i] = carry * (1.0 - node.g_post)
            carry *= node.g_post
        weights[-1] += carry  # leaf g is 0, kept for safety
        return path, weights

    def predict(self, x) -> float:
        """Posterior-predictive mean at ``x``."""
        path = self.route(x)
        mean = self.node_posterior(path[-1]).m
        for node in reversed(path[:-1]):
            g = node.g_post
            mean = (1.0 - g) * self.node_posterior(node).m + g * mean
        return mean

    def leaf_values(self) -> np.ndarray:
        """Predictive mean for every node index; only leaf entries are meaningful."""
        n, s, _ = self._stats_arrays()
        means = (self.prior.kappa * self.prior.m + s) / (self.prior.kappa + n)
        values = np.zeros(len(self.nodes))
        stack = [(self.root, 0.0, 1.0)]
        while stack:
            node, acc, carry = stack.pop()
            i = self._index[id(node)]
            if node.is_leaf:
                values[i] = acc + carry * means[i]
                continue
            acc = acc + carry * (1.0 - node.g_post) * means[i]
            carry = carry * node.g_post
            stack.append((node.left, acc, carry))
            stack.append((node.right, acc, carry))
        return values

    def predict_many(self, X) -> np.ndarray:
        """Vectorised :meth:`predict` over the rows of ``X``."""
        return self.leaf_values()[self.leaf_indices(X)]

    # -- fitting -----------------------------------------------------------

    def fit_one(self, x, y: float) -> "MetaTree":
        """Condition on one more observation, in place; returns ``self``.

        All densities are evaluated on the pre-update state before any
        ``g_post`` or statistics change.
        """
        y = float(y)
        if not math.isfinite(y):
            raise ValueError(f"observation must be finite, got {y}")
        path = self.route(x)
        mixed = self._mixture_logs(path, self._path_log_q(path, y))
        self.log_marginal_likelihood += mixed[0]
        for i, node in enumerate(path[:-1]):
            if node.g_post > 0.0:
                g = math.exp(math.log(node.g_post) + mixed[i + 1] - mixed[i])
                node.g_post = min(max(g, 0.0), 1.0)
        for node in path:
            node.stats = leaf_model.update_stats(node.stats, y)
        return self

    def fit(self, X, y, sequential: bool = False) -> "MetaTree":
        """Condition on all rows of ``(X, y)``, in place; returns ``self``.

        ``sequential=True`` folds :meth:`fit_one` over the rows.  The default
        computes the same state in closed form from the merged statistics:
        every node's marginal likelihood depends only on its statistics, so
        the posterior ``g`` and the evidence follow from one bottom-up pass.
        """
        X = self.schema.check_matrix(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        if len(y) == 0:
            return self
        if sequential:
            for xi, yi in zip(X, y):
                self.fit_one(xi, yi)
            return self
        self._add_batch_stats(X, y)
        self._recompute_posterior()
        return self

    def _stats_arrays(self):
        n = np.array([node.stats.n for node in self.nodes], dtype=float)
        s = np.array([node.stats.sum_y for node in self.nodes])
        ss = np.array([node.stats.sum_y_sq for node in self.nodes])
        return n, s, ss

    def _add_batch_stats(self, X, y) -> None:
        leaves = self.leaf_indices(X)
        size = len(self.nodes)
        n = np.bincount(leaves, minlength=size).astype(float)
        s = np.bincount(leaves, weights=y, minlength=size)
        ss = np.bincount(leaves, weights=y * y, minlength=size)
        # children follow parents in preorder, so a reverse sweep aggregates upward
        for i in range(size - 1, -1, -1):
            node = self.nodes[i]
            if not node.is_leaf:
                li, ri = self._index[id(node.left)], self._index[id(node.right)]
                n[i] = n[li] + n[ri]
                s[i] = s[li] + s[ri]
                ss[i] = ss[li] + ss[ri]
        for i, node in enumerate(self.nodes):
            if n[i] > 0:
                old = node.stats
                node.stats = SufficientStats(old.n + int(n[i]), old.sum_y + s[i],
                                             old.sum_y_sq + ss[i])

    def _recompute_posterior(self) -> None:
        """Reset ``g_post`` and the evidence from ``g_prior`` and the statistics."""
        n, s, ss = self._stats_arrays()
        log_ml = leaf_model.log_marginal_arrays(self.prior, n, s, ss)
        mixed = np.empty(len(self.nodes))
        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            if node.is_leaf:
                mixed[i] = log_ml[i]
                continue
            split_branch = (mixed[self._index[id(node.left)]]
                            + mixed[self._index[id(node.right)]])
            mixed[i] = _mix(node.g_prior, log_ml[i], split_branch)
            if node.g_prior > 0.0:
                g = math.exp(math.log(node.g_prior) + split_branch - mixed[i])
                node.g_post = min(max(g, 0.0), 1.0)
            else:
                node.g_post = 0.0
        self.log_marginal_likelihood = float(mixed[0])

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        records = []
        for i, node in enumerate(self.nodes):
            post = self.node_posterior(node)
            records.append({
                "id": i,
                "depth": node.depth,
                "split": None if node.is_leaf else {
                    "feature": node.split.feature, "threshold": node.split.threshold},
                "g_prior": node.g_prior,
                "g_post": node.g_post,
                "stats": {"n": node.stats.n, "sum_y": node.stats.sum_y,
                          "sum_y_sq": node.stats.sum_y_sq},
                "posterior": list(post.as_tuple()),
                "left": None if node.is_leaf else self._index[id(node.left)],
                "right": None if node.is_leaf else self._index[id(node.right)],
            })
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "prior": dict(zip(("m", "kappa", "alpha", "beta"), self.prior.as_tuple())),
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "nodes": records,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetaTree":
        if data.get("format") != FORMAT_TAG:
            raise ValueError(f"not a serialized meta-tree: {data.get('format')!r}")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported meta-tree version {data.get('version')}")
        records = data["nodes"]
        nodes = []
        for rec in records:
            split = rec["split"]
            stats = rec["stats"]
            nodes.append(MetaTreeNode(
                split=None if split is None else Split(int(split["feature"]), split["threshold"]),
                g_prior=float(rec["g_prior"]),
                g_post=float(rec["g_post"]),
                stats=SufficientStats(int(stats["n"]), float(stats["sum_y"]),
                                      float(stats["sum_y_sq"])),
                depth=int(rec["depth"]),
            ))
        for node, rec in zip(nodes, records):
            if rec["left"] is not None:
                node.left = nodes[rec["left"]]
                node.right = nodes[rec["right"]]
        tree = cls(nodes[0], FeatureSchema(**data["schema"]), NormalGammaParams(**data["prior"]))
        tree.log_marginal_likelihood = float(data["log_marginal_likelihood"])
        return tree

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "MetaTree":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        n_internal = sum(not node.is_leaf for node in self.nodes)
        return (f"MetaTree(depth={self.depth}, internal={n_internal}, "
                f"n={self.n_fitted}, log_ml={self.log_marginal_likelihood:.4f})")


def fit(tree: MetaTree, data: Iterable[tuple]) -> MetaTree:
    """Fold :meth:`MetaTree.fit_one` over ``(x, y)`` pairs."""
    for x, y in data:
        tree.fit_one(x, y)
    return tree

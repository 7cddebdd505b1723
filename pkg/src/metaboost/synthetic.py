"""Synthetic data from random model trees, and Monte Carlo Bayes-risk estimates.

A true model tree splits on binary features; every leaf holds a normal
``(mu, tau)`` drawn from a normal-gamma prior.  Inputs are uniform on
``{0, 1}^K``.  :func:`approx_bayes_risk` samples true trees and datasets,
trains every requested method and averages the test MSE.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .ensemble import mse, train_method
from .leaf_model import NormalGammaParams
from .metatree import FeatureSchema, MetaTree, MetaTreeNode, Split

TRUE_PRIOR = NormalGammaParams(0.0, 2.0, 2.0, 2.0)


@dataclass(eq=False)
class TrueNode:
    depth: int
    feature: int | None = None
    left: "TrueNode | None" = None
    right: "TrueNode | None" = None
    mu: float = math.nan
    tau: float = math.nan

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()

    @property
    def height(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.height, self.right.height)


@dataclass(eq=False)
class TrueModelTree:
    root: TrueNode
    n_features: int

    @property
    def depth(self) -> int:
        return self.root.height

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(0, self.n_features)

    def internal_features(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                out.append(node.feature)
                stack.extend((node.right, node.left))
        return out

    def leaf_params(self, X) -> tuple[np.ndarray, np.ndarray]:
        """``(mu, tau)`` of the leaf reached by every row of ``X``."""
        X = np.asarray(X)
        mu = np.empty(len(X))
        tau = np.empty(len(X))

        def descend(node, rows):
            if node.is_leaf:
                mu[rows], tau[rows] = node.mu, node.tau
                return
            right = X[rows, node.feature] == 1
            descend(node.left, rows[~right])
            descend(node.right, rows[right])

        descend(self.root, np.arange(len(X)))
        return mu, tau

    def mean(self, X) -> np.ndarray:
        return self.leaf_params(X)[0]

    def meta_tree(self, g: float = 0.6, leaf_prior: NormalGammaParams = TRUE_PRIOR) -> MetaTree:
        """Unfitted meta-tree whose skeleton and splits are those of this tree."""

        def copy(node: TrueNode) -> MetaTreeNode:
            if node.is_leaf:
                return MetaTreeNode(depth=node.depth)
            return MetaTreeNode(split=Split(node.feature), g_prior=g, g_post=g, depth=node.depth,
                                left=copy(node.left), right=copy(node.right))

        return MetaTree(copy(self.root), self.schema, leaf_prior)

    def noise_floor(self) -> float:
        """Expected ``1/tau`` of the leaf hit by a uniform ``x``; the Bayes-oracle MSE."""
        return sum(2.0 ** -leaf.depth / leaf.tau for leaf in self.root.leaves())


def sample_true_tree(rng: np.random.Generator, K: int = 10, d_max_star: int = 3,
                     g_star: float = 0.9,
                     ng_prior: NormalGammaParams = TRUE_PRIOR) -> TrueModelTree:
    """Draw a true tree: nodes split with probability ``g_star`` until ``d_max_star``.

    Split features are uniform over those not yet used on the path, so every
    branch stays reachable.
    """
    if not 0.0 <= g_star <= 1.0:
        raise ValueError("g_star must lie in [0, 1]")

    def grow(depth: int, used: frozenset) -> TrueNode:
        free = [j for j in range(K) if j not in used]
        node = TrueNode(depth)
        if depth < d_max_star and free and rng.random() < g_star:
            node.feature = int(free[rng.integers(len(free))])
            node.left = grow(depth + 1, used | {node.feature})
            node.right = grow(depth + 1, used | {node.feature})
        else:
            node.tau = float(rng.gamma(ng_prior.alpha, 1.0 / ng_prior.beta))
            node.mu = float(rng.normal(ng_prior.m, 1.0 / math.sqrt(ng_prior.kappa * node.tau)))
        return node

    return TrueModelTree(grow(0, frozenset()), K)


def sample_dataset(rng: np.random.Generator, tree: TrueModelTree, n: int,
                   K: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``n`` rows with ``x`` uniform on ``{0,1}^K`` and ``y ~ N(mu, 1/tau)`` of its leaf."""
    if n < 1:
        raise ValueError("n must be positive")
    K = tree.n_features if K is None else K
    X = rng.integers(0, 2, size=(n, K)).astype(float)
    mu, tau = tree.leaf_params(X)
    y = mu + rng.standard_normal(n) / np.sqrt(tau)
    return X, y


class Method(Protocol):
    label: str
    d_max: int

    def fit(self, X, y, schema: FeatureSchema, truth: TrueModelTree): ...


@dataclass(frozen=True)
class MethodSpec:
    """A named training method with its hyperparameters."""

    method: str
    d_max: int = 5
    n_trees: int = 20
    g: float = 0.6
    leaf_prior: NormalGammaParams = TRUE_PRIOR
    learning_rate: float | None = None

    @property
    def label(self) -> str:
        return self.method

    def fit(self, X, y, schema, truth=None):
        return train_method(self.method, X, y, schema, n_trees=self.n_trees, d_max=self.d_max,
                            g=self.g, leaf_prior=self.leaf_prior,
                            learning_rate=self.learning_rate)


@dataclass(frozen=True)
class RiskConfig:
    n_true_trees: int = 10
    n_datasets: int = 2
    n_train: Sequence[int] = (200, 400, 600, 800, 1000)
    n_test: int = 250
    K: int = 10
    d_max_star: int = 3
    g_star: float = 0.9
    true_prior: NormalGammaParams = TRUE_PRIOR
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if min(self.n_true_trees, self.n_datasets, self.n_test, min(self.n_train)) < 1:
            raise ValueError("all counts must be at least 1")


@dataclass
class RiskRow:
    method: str
    n: int
    d_max: int
    mean_mse: float
    stderr: float
    seed: int
    mses: list = field(default_factory=list, repr=False)


def _replicate(args):
    config, methods, tree_index, seq = args
    tree_seq, *data_seqs = seq.spawn(1 + config.n_datasets)
    truth = sample_true_tree(np.random.default_rng(tree_seq), config.K, config.d_max_star,
                             config.g_star, config.true_prior)
    schema = truth.schema
    n_max = max(config.n_train)
    records = []
    for d, data_seq in enumerate(data_seqs):
        rng = np.random.default_rng(data_seq)
        X, y = sample_dataset(rng, truth, n_max + config.n_test)
        X_test, y_test = X[n_max:], y[n_max:]
        for n in config.n_train:
            for k, method in enumerate(methods):
                model = method.fit(X[:n], y[:n], schema, truth)
                records.append((k, n, tree_index, d, mse(y_test, model.predict(X_test))))
    return records


def approx_bayes_risk(methods: Sequence[Method], config: RiskConfig = RiskConfig()) -> list[RiskRow]:
    """Monte Carlo test MSE per method and training size.

    Every method sees the same true trees and datasets.  Returns one row per
    ``(method, n)`` in the order given, with the standard error over all
    ``n_true_trees * n_datasets`` replicates.
    """
    master = np.random.SeedSequence(config.seed)
    jobs = [(config, list(methods), i, seq)
            for i, seq in enumerate(master.spawn(config.n_true_trees))]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(job) for job in jobs]

    collected: dict[tuple[int, int], list[float]] = {}
    for records in results:
        for k, n, _, _, value in records:
            collected.setdefault((k, n), []).append(value)
    rows = []
    for k, method in enumerate(methods):
        for n in config.n_train:
            values = np.array(collected[(k, n)])
            stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
            rows.append(RiskRow(method.label, n, method.d_max, float(values.mean()), stderr,
                                config.seed, values.tolist()))
    return rows


RISK_COLUMNS = ("method", "n", "d_max", "mean_mse", "stderr", "seed")


def write_risk_csv(rows: Sequence[RiskRow], path, extra: dict | None = None) -> None:
    """Write risk rows as CSV; ``extra`` adds constant leading columns."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(extra) + list(RISK_COLUMNS))
        for row in rows:
            writer.writerow(list(extra.values()) + [row.method, row.n, row.d_max,
                                                    repr(row.mean_mse), repr(row.stderr), row.seed])

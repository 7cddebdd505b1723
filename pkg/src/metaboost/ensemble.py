"""Boosting-style construction of meta-tree ensembles, plus a plain GBDT baseline.

Tree ``b`` is grown by CART on the residuals of the current ensemble
prediction ``F_{b-1}`` and turned into a meta-tree.  How ``F_{b-1}`` and the
final prediction combine the trees depends on the weight scheme:

``gbdt``
    every tree predicts a residual; ``F_b = F_0 + lr * sum_j f_j``.
``uniform``
    every tree predicts ``y``; ``F_b`` is the plain average of the trees.
``posterior``
    every tree predicts ``y``; trees are weighted by their posterior
    probability, i.e. a softmax of their log marginal likelihoods.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .cart import DEFAULT_MIN_SAMPLES_LEAF, TreeNode, build_meta_tree, build_tree, tree_predict
from .leaf_model import NormalGammaParams
from .metatree import FeatureSchema, MetaTree, Split

log = logging.getLogger(__name__)

ENSEMBLE_FORMAT = "metaboost.ensemble"
GBDT_FORMAT = "metaboost.gbdt"

WEIGHT_TAGS = ("gbdt", "uniform", "posterior")
VALID_SCHEMES = {
    ("gbdt", "gbdt"),
    ("uniform", "uniform"),
    ("uniform", "posterior"),
    ("posterior", "posterior"),
}

METHODS = {
    "mt_gbdt": ("gbdt", "gbdt"),
    "mt_uni_uni": ("uniform", "uniform"),
    "mt_uni_pos": ("uniform", "posterior"),
    "mt_pos_pos": ("posterior", "posterior"),
}
BASELINE = "gbdt_baseline"
ALL_METHODS = tuple(METHODS) + (BASELINE,)


@dataclass(frozen=True)
class WeightScheme:
    learning: str = "posterior"
    prediction: str = "posterior"

    def __post_init__(self):
        if (self.learning, self.prediction) not in VALID_SCHEMES:
            raise ValueError(f"invalid weight scheme {self.learning}/{self.prediction}")

    @property
    def is_gbdt(self) -> bool:
        return self.learning == "gbdt"

    @property
    def default_learning_rate(self) -> float:
        return 0.1 if self.is_gbdt else 1.0

    @classmethod
    def for_method(cls, method: str) -> "WeightScheme":
        try:
            return cls(*METHODS[method])
        except KeyError:
            raise ValueError(f"unknown meta-tree method {method!r}") from None


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 100
    d_max: int = 5
    g: float = 0.6
    leaf_prior: NormalGammaParams = field(default_factory=NormalGammaParams)
    scheme: WeightScheme = field(default_factory=WeightScheme)
    learning_rate: float | None = None
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    # probability-weight modes only: fit leaf posteriors on residuals instead of y
    fit_residuals: bool = False

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be nonnegative")
        if self.d_max < 0:
            raise ValueError("d_max must be nonnegative")
        if not 0.0 <= self.g <= 1.0:
            raise ValueError("g must lie in [0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.learning_rate is not None and not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    @property
    def lr(self) -> float:
        if self.learning_rate is None:
            return self.scheme.default_learning_rate
        return self.learning_rate


def posterior_over_k(trees_or_log_ml) -> np.ndarray:
    """Posterior weights of the trees under a uniform prior over them.

    Accepts fitted :class:`MetaTree` objects or their log marginal likelihoods.
    """
    values = []
    for item in trees_or_log_ml:
        if isinstance(item, MetaTree):
            if item.n_fitted == 0:
                raise ValueError("posterior weights need fitted trees")
            item = item.log_marginal_likelihood
        values.append(float(item))
    log_ml = np.asarray(values)
    if log_ml.size == 0:
        return log_ml
    if not np.all(np.isfinite(log_ml)):
        raise ValueError("log marginal likelihoods must be finite")
    # subtracting the max keeps exp() in range and makes integer shifts exact
    w = np.exp(log_ml - log_ml.max())
    return w / w.sum()


def uniform_weights(b: int) -> np.ndarray:
    return np.full(b, 1.0 / b) if b else np.zeros(0)


def evaluation(y, prediction) -> float:
    """Summed squared error ``sum_i (y_i - F(x_i))^2``."""
    resid = np.asarray(y, dtype=float) - np.asarray(prediction, dtype=float)
    return float(np.dot(resid, resid))


def mse(y, prediction) -> float:
    y = np.asarray(y, dtype=float)
    return evaluation(y, prediction) / len(y) if len(y) else float("nan")


class Ensemble:
    """Trained ensemble of meta-trees."""

    def __init__(self, trees, scheme: WeightScheme, learning_rate: float,
                 prediction_weights, f0: float, targets, schema: FeatureSchema):
        self.trees = list(trees)
        self.scheme = scheme
        self.learning_rate = float(learning_rate)
        self.prediction_weights = np.asarray(prediction_weights, dtype=float)
        self.f0 = float(f0)
        self.targets = list(targets)
        self.schema = schema
        # learning weights used at each boosting step, recorded by train()
        self.learning_weights: list[np.ndarray] = []

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tree_predictions(self, X) -> np.ndarray:
        X = self.schema.check_matrix(X)
        if not self.trees:
            return np.zeros((0, len(X)))
        return np.vstack([tree.predict_many(X) for tree in self.trees])

    def combine(self, per_tree: np.ndarray) -> np.ndarray:
        """Apply the prediction weights to a ``(n_trees, n_rows)`` prediction matrix."""
        if self.scheme.is_gbdt:
            return self.f0 + self.learning_rate * (self.prediction_weights @ per_tree)
        return self.prediction_weights @ per_tree

    def predict(self, X) -> np.ndarray:
        X = self.schema.check_matrix(X)
        if not self.trees:
            return np.full(len(X), self.f0)
        return self.combine(self.tree_predictions(X))

    def to_dict(self) -> dict:
        return {
            "format": ENSEMBLE_FORMAT,
            "version": 1,
            "scheme": {"learning": self.scheme.learning, "prediction": self.scheme.prediction},
            "learning_rate": self.learning_rate,
            "prediction_weights": self.prediction_weights.tolist(),
            "f0": self.f0,
            "targets": self.targets,
            "schema": self.schema.to_dict(),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ensemble":
        if data.get("format") != ENSEMBLE_FORMAT:
            raise ValueError(f"not a serialized ensemble: {data.get('format')!r}")
        return cls(
            trees=[MetaTree.from_dict(t) for t in data["trees"]],
            scheme=WeightScheme(**data["scheme"]),
            learning_rate=data["learning_rate"],
            prediction_weights=data["prediction_weights"],
            f0=data["f0"],
            targets=data["targets"],
            schema=FeatureSchema(**data["schema"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def __repr__(self) -> str:
        return (f"Ensemble({self.scheme.learning}/{self.scheme.prediction}, "
                f"B={self.n_trees}, lr={self.learning_rate})")


def _learning_weights(scheme: WeightScheme, trees: list[MetaTree]) -> np.ndarray:
    if scheme.learning == "gbdt":
        return np.ones(len(trees))
    if scheme.learning == "uniform":
        return uniform_weights(len(trees))
    return posterior_over_k(trees)


def _prediction_weights(scheme: WeightScheme, trees: list[MetaTree]) -> np.ndarray:
    if scheme.prediction == "gbdt":
        return np.ones(len(trees))
    if scheme.prediction == "uniform":
        return uniform_weights(len(trees))
    return posterior_over_k(trees)


def train(X, y, config: EnsembleConfig, schema: FeatureSchema) -> Ensemble:
    """Build ``config.n_trees`` meta-trees one after another on residuals.

    For step ``b`` the learning weights of trees ``1..b-1`` give ``F_{b-1}``,
    CART grows a tree on ``r = y - F_{b-1}`` and the resulting meta-tree is
    fitted on ``r`` (gbdt scheme) or on ``y`` (probability schemes).
    """
    X = schema.check_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("training data is empty")
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    scheme, lr = config.scheme, config.lr
    gbdt = scheme.is_gbdt
    f0 = float(y.mean()) if gbdt else 0.0

    trees: list[MetaTree] = []
    train_pred = np.zeros((config.n_trees, len(y)))
    learning_history = []
    for b in range(config.n_trees):
        weights = _learning_weights(scheme, trees)
        learning_history.append(weights)
        combined = weights @ train_pred[:b]
        if gbdt:
            resid = y - (f0 + lr * combined)
        else:
            resid = y - lr * combined
        rep = build_tree(X, resid, schema, config.d_max, config.min_samples_leaf)
        tree = build_meta_tree(rep, schema, config.g, config.leaf_prior)
        on_residuals = gbdt or config.fit_residuals
        tree.fit(X, resid if on_residuals else y)
        train_pred[b] = tree.predict_many(X)
        trees.append(tree)
        log.debug("tree %d: depth %d, log ML %.3f", b + 1, tree.depth,
                  tree.log_marginal_likelihood)

    targets = ["residual" if (gbdt or config.fit_residuals) else "raw"] * len(trees)
    model = Ensemble(trees, scheme, lr, _prediction_weights(scheme, trees), f0, targets, schema)
    model.learning_weights = learning_history
    return model


# -- plain GBDT baseline ----------------------------------------------------


class GBDTBaseline:
    """Gradient boosting with sample-mean leaves on the same CART trees."""

    def __init__(self, f0: float, trees: list[TreeNode], learning_rate: float,
                 schema: FeatureSchema):
        self.f0 = float(f0)
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)
        self.schema = schema

    def staged_predict(self, X):
        X = self.schema.check_matrix(X)
        pred = np.full(len(X), self.f0)
        yield pred.copy()
        for tree in self.trees:
            pred += self.learning_rate * tree_predict(tree, X)
            yield pred.copy()

    def predict(self, X) -> np.ndarray:
        X = self.schema.check_matrix(X)
        pred = np.full(len(X), self.f0)
        for tree in self.trees:
            pred += self.learning_rate * tree_predict(tree, X)
        return pred

    def to_dict(self) -> dict:
        def node_dict(node: TreeNode) -> dict:
            out = {"n": node.n, "value": node.value, "depth": node.depth}
            if not node.is_leaf:
                out["split"] = {"feature": node.split.feature, "threshold": node.split.threshold}
                out["left"] = node_dict(node.left)
                out["right"] = node_dict(node.right)
            return out

        return {
            "format": GBDT_FORMAT,
            "version": 1,
            "f0": self.f0,
            "learning_rate": self.learning_rate,
            "schema": self.schema.to_dict(),
            "trees": [node_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GBDTBaseline":
        if data.get("format") != GBDT_FORMAT:
            raise ValueError(f"not a serialized GBDT model: {data.get('format')!r}")

        def node_from(d: dict) -> TreeNode:
            node = TreeNode(None, int(d["n"]), float(d["value"]), int(d["depth"]))
            if "split" in d:
                node.split = Split(int(d["split"]["feature"]), d["split"]["threshold"])
                node.left = node_from(d["left"])
                node.right = node_from(d["right"])
            return node

        return cls(data["f0"], [node_from(t) for t in data["trees"]], data["learning_rate"],
                   FeatureSchema(**data["schema"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def train_baseline_gbdt(X, y, schema: FeatureSchema, n_trees: int = 100, d_max: int = 5,
                        learning_rate: float = 0.1, min_samples_leaf: int = 1) -> GBDTBaseline:
    """Classical least-squares gradient boosting: ``F_b = F_{b-1} + lr * tree_b``."""
    X = schema.check_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("training data is empty")
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    f0 = float(y.mean())
    pred = np.full(len(y), f0)
    trees = []
    for _ in range(n_trees):
        tree = build_tree(X, y - pred, schema, d_max, min_samples_leaf)
        pred = pred + learning_rate * tree_predict(tree, X)
        trees.append(tree)
    return GBDTBaseline(f0, trees, learning_rate, schema)


def train_method(method: str, X, y, schema: FeatureSchema, n_trees: int = 100, d_max: int = 5,
                 g: float = 0.6, leaf_prior: NormalGammaParams | None = None,
                 learning_rate: float | None = None, min_samples_leaf: int | None = None,
                 fit_residuals: bool = False):
    """Train any named method; ``None`` arguments fall back to that method's defaults."""
    if method == BASELINE:
        return train_baseline_gbdt(
            X, y, schema, n_trees, d_max,
            0.1 if learning_rate is None else learning_rate,
            1 if min_samples_leaf is None else min_samples_leaf)
    config = EnsembleConfig(
        n_trees=n_trees, d_max=d_max, g=g,
        leaf_prior=leaf_prior if leaf_prior is not None else NormalGammaParams(),
        scheme=WeightScheme.for_method(method), learning_rate=learning_rate,
        min_samples_leaf=DEFAULT_MIN_SAMPLES_LEAF if min_samples_leaf is None else min_samples_leaf,
        fit_residuals=fit_residuals)
    return train(X, y, config, schema)


def load_model(text: str):
    """Deserialize either model kind from its JSON text."""
    data = json.loads(text)
    fmt = data.get("format")
    if fmt == ENSEMBLE_FORMAT:
        return Ensemble.from_dict(data)
    if fmt == GBDT_FORMAT:
        return GBDTBaseline.from_dict(data)
    raise ValueError(f"unrecognised model format {fmt!r}")

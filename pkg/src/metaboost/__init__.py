"""Meta-tree ensembles: exact Bayesian averaging over subtrees, built by boosting."""

from .cart import best_split, build_meta_tree, build_tree
from .ensemble import (
    Ensemble,
    EnsembleConfig,
    GBDTBaseline,
    WeightScheme,
    posterior_over_k,
    train,
    train_baseline_gbdt,
    train_method,
)
from .leaf_model import NormalGammaParams, SufficientStats
from .metatree import FeatureSchema, MetaTree, MetaTreeNode, Split

__all__ = [
    "Ensemble",
    "EnsembleConfig",
    "FeatureSchema",
    "GBDTBaseline",
    "MetaTree",
    "MetaTreeNode",
    "NormalGammaParams",
    "Split",
    "SufficientStats",
    "WeightScheme",
    "best_split",
    "build_meta_tree",
    "build_tree",
    "posterior_over_k",
    "train",
    "train_baseline_gbdt",
    "train_method",
]

"""Regularized gradient-boosted decision trees (from scratch).

Supports a weighted binary cross-entropy objective and a lambdarank objective
with NDCG-weighted pairwise gradients, histogram-based split finding with L1/L2
regularization, leaf-wise growth bounded by leaf count and depth, and a
versioned text serialization format.
"""

from .objectives import logloss_grad_hess, lambdarank_grad_hess
from .tree import (
    BinMapper,
    NodeHistogram,
    RegressionTree,
    SplitDecision,
    best_split,
    build_histograms,
    leaf_weight,
)
from .model import (
    PRESETS,
    BoostParams,
    BoostedModel,
    feature_importance,
    load_model,
    save_model,
    train,
)

__all__ = [
    "BinMapper",
    "BoostParams",
    "BoostedModel",
    "NodeHistogram",
    "PRESETS",
    "RegressionTree",
    "SplitDecision",
    "best_split",
    "build_histograms",
    "feature_importance",
    "lambdarank_grad_hess",
    "leaf_weight",
    "load_model",
    "logloss_grad_hess",
    "save_model",
    "train",
]

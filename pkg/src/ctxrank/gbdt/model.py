"""Boosting loop, parameters, presets, prediction and model serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..rank_eval import mrr_from_scores
from .objectives import lambdarank_grad_hess, logloss_grad_hess
from .tree import BinMapper, RegressionTree, grow_tree

OBJECTIVES = ("classification", "lambdarank")


@dataclass
class BoostParams:
    learning_rate: float = 0.1
    max_leaves: int = 31
    max_depth: int = 6
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    colsample_bylevel: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    scale_pos_weight: float = 1.0
    min_child_weight: float = 1.0
    min_split_gain: float = 0.0
    n_estimators: int = 100
    bagging_freq: int = 1
    histogram_bins: int = 256
    bin_sample_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name in ("subsample", "colsample_bytree", "colsample_bylevel"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        for name in ("reg_alpha", "reg_lambda", "min_child_weight", "min_split_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.scale_pos_weight <= 0:
            raise ValueError("scale_pos_weight must be > 0")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.bagging_freq < 1:
            raise ValueError("bagging_freq must be >= 1")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")


#: Published tuned parameter sets. ``xgb-table3`` does not fix n_estimators;
#: pass one to :func:`preset`.
PRESETS: dict[str, dict] = {
    "xgb-table3": dict(
        learning_rate=0.001, max_leaves=10, max_depth=6, subsample=0.71,
        colsample_bytree=0.84, colsample_bylevel=0.37, reg_alpha=7.82,
        reg_lambda=5.72, scale_pos_weight=35.0, min_child_weight=6.0,
    ),
    "lgbm-table4": dict(
        learning_rate=0.2986, max_leaves=8, max_depth=6, subsample=0.90,
        bagging_freq=16, colsample_bytree=0.97, reg_alpha=6.23,
        reg_lambda=4.75, min_split_gain=0.0338, min_child_weight=0.0675,
        n_estimators=8000, bin_sample_size=135880,
    ),
    "lgbm-rank-table5": dict(
        learning_rate=0.01, max_leaves=15, max_depth=8, subsample=0.86,
        bagging_freq=14, colsample_bytree=0.97, reg_alpha=6.97,
        reg_lambda=7.71, min_split_gain=0.0033, min_child_weight=0.0469,
        n_estimators=5000, bin_sample_size=200000,
    ),
}


def preset(name: str, n_estimators: int | None = None, seed: int = 0,
           **overrides) -> BoostParams:
    """Build BoostParams from a named preset, with optional overrides."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    if n_estimators is not None:
        kwargs["n_estimators"] = n_estimators
    elif "n_estimators" not in kwargs:
        raise ValueError(f"preset {name!r} requires an explicit n_estimators")
    kwargs["seed"] = seed
    kwargs.update(overrides)
    return BoostParams(**kwargs)


@dataclass
class BoostedModel:
    """Ordered tree ensemble plus everything needed to re-apply it:
    objective, parameters, feature schema, and fitted encoder/normalizer
    state from the feature pipeline."""

    trees: list[RegressionTree]
    base_score: float
    objective: str
    params: BoostParams
    feature_names: tuple[str, ...]
    best_iteration: int | None = None
    train_log: list[tuple[int, float, float]] = field(default_factory=list)
    encoders: dict[str, dict[str, int]] | None = None
    numeric_ranges: dict[str, tuple[float, float]] | None = None

    def raw_scores(self, X: np.ndarray, num_trees: int | None = None) -> np.ndarray:
        if num_trees is None:
            num_trees = len(self.trees)
        out = np.full(len(X), self.base_score)
        for tree in self.trees[:num_trees]:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def predict(self, matrix, num_trees: int | None = None) -> np.ndarray:
        """Click probabilities for classification, raw scores for lambdarank.

        Defaults to the MRR-best iteration when one was retained during
        training, otherwise the full ensemble.
        """
        if num_trees is None:
            num_trees = self.best_iteration or len(self.trees)
        X = _matrix_values(matrix, self.feature_names)
        raw = self.raw_scores(X, num_trees)
        if self.objective == "classification":
            return 1.0 / (1.0 + np.exp(-raw))
        return raw


def _matrix_values(matrix, expected_names) -> np.ndarray:
    if hasattr(matrix, "values") and hasattr(matrix, "column_names"):
        if tuple(matrix.column_names) != tuple(expected_names):
            raise ValueError("feature schema does not match the model's schema")
        return matrix.values
    X = np.asarray(matrix, dtype=np.float64)
    if X.shape[1] != len(expected_names):
        raise ValueError(
            f"matrix has {X.shape[1]} columns, model expects {len(expected_names)}"
        )
    return X


def _column_subset(rng: np.random.Generator, pool: np.ndarray, frac: float) -> np.ndarray:
    if frac >= 1.0:
        return pool
    k = max(1, int(round(frac * len(pool))))
    return np.sort(rng.choice(pool, size=k, replace=False))


def train(matrix, labels, groups=None, params: BoostParams | None = None,
          objective: str = "classification", eval_set=None) -> BoostedModel:
    """Train a boosted ensemble.

    ``groups`` (list of (start, stop) spans) is required for lambdarank.
    ``eval_set`` is an optional (matrix, labels, groups) triple; when given,
    validation MRR is tracked every round and the best round is retained in
    ``model.best_iteration``. Training is sequential and bit-reproducible for
    a fixed seed.
    """
    if params is None:
        params = BoostParams()
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if objective == "lambdarank" and groups is None:
        raise ValueError("lambdarank requires query groups")

    names = tuple(getattr(matrix, "column_names", ()))
    X = matrix.values if names else np.asarray(matrix, dtype=np.float64)
    if not names:
        names = tuple(f"f{i}" for i in range(X.shape[1]))
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(X):
        raise ValueError(f"matrix rows {len(X)} != label count {len(y)}")
    spans = _normalize_groups(groups)

    n, F = X.shape
    rng = np.random.default_rng(params.seed)
    mapper = BinMapper(params.histogram_bins)
    if params.bin_sample_size is not None and params.bin_sample_size < n:
        sample = np.sort(rng.choice(n, size=params.bin_sample_size, replace=False))
        mapper.fit(X, sample)
    else:
        mapper.fit(X)
    binned = mapper.transform(X)

    model = BoostedModel([], 0.0, objective, params, names)
    scores = np.full(n, model.base_score)
    all_rows = np.arange(n)
    sampled_rows = all_rows

    if eval_set is not None:
        X_val = _matrix_values(eval_set[0], names)
        y_val = np.asarray(eval_set[1], dtype=np.float64)
        val_spans = _normalize_groups(eval_set[2])
        val_scores = np.full(len(X_val), model.base_score)
        best_mrr = -np.inf

    for t in range(params.n_estimators):
        if objective == "classification":
            grad, hess = logloss_grad_hess(scores, y, params.scale_pos_weight)
        else:
            grad, hess = lambdarank_grad_hess(scores, y, spans)

        if params.subsample < 1.0 and t % params.bagging_freq == 0:
            k = max(1, int(round(params.subsample * n)))
            sampled_rows = np.sort(rng.choice(n, size=k, replace=False))
        tree_feats = _column_subset(rng, np.arange(F), params.colsample_bytree)
        level_feats = [
            _column_subset(rng, tree_feats, params.colsample_bylevel)
            for _ in range(params.max_depth + 1)
        ]

        tree = grow_tree(binned, grad, hess, sampled_rows, mapper, params,
                         tree_feats, level_feats)
        model.trees.append(tree)
        scores += params.learning_rate * tree.predict(X)

        train_loss = _train_loss(objective, scores, y, grad, params)
        val_mrr = math.nan
        if eval_set is not None:
            val_scores += params.learning_rate * tree.predict(X_val)
            val_mrr = mrr_from_scores(val_scores, y_val, val_spans)
            if val_mrr > best_mrr:
                best_mrr = val_mrr
                model.best_iteration = t + 1
        model.train_log.append((t + 1, train_loss, val_mrr))

    return model


def _normalize_groups(groups):
    if groups is None:
        return None
    spans = []
    for g in groups:
        if len(g) == 3:       # (query_id, start, stop)
            spans.append((int(g[1]), int(g[2])))
        else:
            spans.append((int(g[0]), int(g[1])))
    return spans


def _train_loss(objective, scores, y, grad, params) -> float:
    if objective == "classification":
        p = np.clip(1.0 / (1.0 + np.exp(-scores)), 1e-15, 1 - 1e-15)
        w = np.where(y == 1.0, params.scale_pos_weight, 1.0)
        return float(-np.mean(w * (y * np.log(p) + (1 - y) * np.log(1 - p))))
    # Mean absolute lambda gradient: a cheap monotone fit indicator.
    return float(np.mean(np.abs(grad)))


def feature_importance(model: BoostedModel) -> list[tuple[str, float]]:
    """Split-count importances as percentages summing to 100, sorted
    descending (ties by feature order)."""
    counts = np.zeros(len(model.feature_names))
    for tree in model.trees:
        for f in tree.split_features():
            counts[f] += 1
    total = counts.sum()
    if total == 0:
        return []
    pct = 100.0 * counts / total
    order = sorted(range(len(pct)), key=lambda i: (-pct[i], i))
    return [(model.feature_names[i], float(pct[i])) for i in order if pct[i] > 0]


# ---------------------------------------------------------------------------
# Serialization: versioned, self-describing text format.

MODEL_MAGIC = "ctxrank-model v1"

_PARAM_FIELDS = [f.name for f in fields(BoostParams)]


def save_model(model: BoostedModel, path: str) -> None:
    lines = [MODEL_MAGIC]
    lines.append(f"objective {model.objective}")
    lines.append(f"base_score {model.base_score!r}")
    lines.append(f"best_iteration {model.best_iteration if model.best_iteration is not None else -1}")
    for name in _PARAM_FIELDS:
        v = getattr(model.params, name)
        lines.append(f"param {name} {'none' if v is None else repr(v)}")
    lines.append(f"n_features {len(model.feature_names)}")
    for i, name in enumerate(model.feature_names):
        lines.append(f"feature {i} {name}")
    enc = model.encoders or {}
    lines.append(f"n_encoders {len(enc)}")
    for col, mapping in enc.items():
        lines.append(f"encoder {col} {len(mapping)}")
        for val, code in mapping.items():
            lines.append(f"value {code} {val}")
    ranges = model.numeric_ranges or {}
    lines.append(f"n_ranges {len(ranges)}")
    for col, (lo, hi) in ranges.items():
        lines.append(f"range {col} {float(lo)!r} {float(hi)!r}")
    lines.append(f"n_trees {len(model.trees)}")
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t} {tree.n_nodes}")
        for i in range(tree.n_nodes):
            if tree.is_leaf[i]:
                lines.append(f"node {i} leaf {float(tree.weight[i])!r}")
            else:
                side = "L" if tree.missing_left[i] else "R"
                lines.append(
                    f"node {i} split {int(tree.feature[i])} "
                    f"{float(tree.threshold[i])!r} "
                    f"{side} {int(tree.left[i])} {int(tree.right[i])}"
                )
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path: str) -> BoostedModel:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
    it = iter(lines[1:])

    def take(prefix):
        line = next(it)
        if not line.startswith(prefix + " "):
            raise ValueError(f"{path}: expected {prefix!r}, got {line!r}")
        return line[len(prefix) + 1:]

    objective = take("objective")
    base_score = float(take("base_score"))
    best_it = int(take("best_iteration"))
    kwargs = {}
    for name in _PARAM_FIELDS:
        raw = take("param").split(" ", 1)[1]
        if raw == "none":
            kwargs[name] = None
        else:
            fld = BoostParams.__dataclass_fields__[name]
            kwargs[name] = float(raw) if "float" in str(fld.type) else int(raw)
    params = BoostParams(**kwargs)

    n_features = int(take("n_features"))
    names = []
    for _ in range(n_features):
        names.append(take("feature").split(" ", 1)[1])

    encoders = {}
    for _ in range(int(take("n_encoders"))):
        col, count = take("encoder").rsplit(" ", 1)
        mapping = {}
        for _ in range(int(count)):
            code, val = take("value").split(" ", 1)
            mapping[val] = int(code)
        encoders[col] = mapping

    ranges = {}
    for _ in range(int(take("n_ranges"))):
        col, lo, hi = take("range").rsplit(" ", 2)
        ranges[col] = (float(lo), float(hi))

    trees = []
    for _ in range(int(take("n_trees"))):
        _, n_nodes = take("tree").split(" ")
        n_nodes = int(n_nodes)
        feature = np.full(n_nodes, -1, dtype=np.int32)
        threshold = np.zeros(n_nodes)
        missing_left = np.ones(n_nodes, dtype=bool)
        left = np.full(n_nodes, -1, dtype=np.int32)
        right = np.full(n_nodes, -1, dtype=np.int32)
        is_leaf = np.ones(n_nodes, dtype=bool)
        weight = np.zeros(n_nodes)
        for _ in range(n_nodes):
            parts = take("node").split(" ")
            i, kind = int(parts[0]), parts[1]
            if kind == "leaf":
                weight[i] = float(parts[2])
            else:
                feature[i] = int(parts[2])
                threshold[i] = float(parts[3])
                missing_left[i] = parts[4] == "L"
                left[i] = int(parts[5])
                right[i] = int(parts[6])
                is_leaf[i] = False
        trees.append(RegressionTree(feature, threshold, missing_left,
                                    left, right, is_leaf, weight))
    if next(it) != "end":
        raise ValueError(f"{path}: missing end marker")

    return BoostedModel(
        trees=trees, base_score=base_score, objective=objective, params=params,
        feature_names=tuple(names),
        best_iteration=None if best_it < 0 else best_it,
        encoders=encoders or None, numeric_ranges=ranges or None,
    )

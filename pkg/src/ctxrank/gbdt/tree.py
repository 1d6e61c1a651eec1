"""Histogram-based regression-tree growing.

Features are binned once per training run by quantile sketch; each node keeps
per-feature histograms of (sum grad, sum hess, count) with a dedicated bin for
missing values. Trees grow leaf-wise (best gain first), bounded by both a leaf
count and a depth cap. All computation is sequential numpy, so results are
bit-identical regardless of the configured worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def soft_threshold(g: float, alpha: float) -> float:
    return np.sign(g) * max(abs(g) - alpha, 0.0)


def leaf_weight(G: float, H: float, reg_lambda: float, reg_alpha: float) -> float:
    """Optimal leaf value -soft_threshold(G, alpha) / (H + lambda)."""
    denom = H + reg_lambda
    if denom == 0.0:
        return 0.0
    return -soft_threshold(G, reg_alpha) / denom


def _score(G, H, reg_lambda, reg_alpha):
    """Structure score soft(G, alpha)^2 / (H + lambda); vectorized.

    A zero denominator (empty child with reg_lambda = 0) scores 0 so that it
    never poisons the gain scan with 0/0."""
    gs = np.sign(G) * np.maximum(np.abs(G) - reg_alpha, 0.0)
    denom = np.asarray(H + reg_lambda, dtype=np.float64)
    num = np.asarray(gs * gs, dtype=np.float64)
    return np.divide(num, denom, out=np.zeros_like(num), where=denom != 0.0)


class BinMapper:
    """Per-feature quantile bin edges fitted on training data.

    For a feature with edges e_0..e_{k-1}, finite value x falls in the first
    bin b with x <= e_b (bin k if x exceeds every edge); missing values get
    the extra bin k + 1. A split at boundary b sends x <= e_b left.
    """

    def __init__(self, max_bins: int = 256):
        self.max_bins = max_bins
        self.edges: list[np.ndarray] = []

    def fit(self, X: np.ndarray, sample_rows: np.ndarray | None = None) -> "BinMapper":
        data = X if sample_rows is None else X[sample_rows]
        self.edges = []
        for f in range(X.shape[1]):
            col = data[:, f]
            finite = col[~np.isnan(col)]
            if finite.size == 0:
                self.edges.append(np.empty(0))
                continue
            distinct = np.unique(finite)
            if len(distinct) <= self.max_bins:
                edges = distinct
            else:
                qs = np.arange(1, self.max_bins) / self.max_bins
                edges = np.unique(np.quantile(finite, qs))
            self.edges.append(edges.astype(np.float64))
        return self

    def n_bins(self, feature: int) -> int:
        """Total bins for a feature, including the trailing missing bin."""
        return len(self.edges[feature]) + 2

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int32)
        for f in range(X.shape[1]):
            edges = self.edges[f]
            col = X[:, f]
            nan = np.isnan(col)
            out[:, f] = np.searchsorted(edges, col, side="left")
            out[nan, f] = len(edges) + 1
        return out


@dataclass
class NodeHistogram:
    """Per-feature (sum grad, sum hess, count) arrays; the last bin of each
    feature pools missing values."""

    grad: list[np.ndarray]
    hess: list[np.ndarray]
    count: list[np.ndarray]

    def subtract(self, other: "NodeHistogram") -> "NodeHistogram":
        return NodeHistogram(
            [a - b for a, b in zip(self.grad, other.grad)],
            [a - b for a, b in zip(self.hess, other.hess)],
            [a - b for a, b in zip(self.count, other.count)],
        )


def build_histograms(binned: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                     rows: np.ndarray, features, mapper: BinMapper) -> NodeHistogram:
    """Accumulate grad/hess/count histograms over ``rows`` for each feature.

    ``features`` indexes columns of the full matrix; skipped features get
    empty arrays so histogram layout stays aligned with feature indices.
    """
    n_features = binned.shape[1]
    active = set(int(f) for f in features)
    g_list, h_list, c_list = [], [], []
    g_rows = grad[rows]
    h_rows = hess[rows]
    for f in range(n_features):
        if f not in active:
            g_list.append(np.empty(0))
            h_list.append(np.empty(0))
            c_list.append(np.empty(0))
            continue
        nb = mapper.n_bins(f)
        b = binned[rows, f]
        g_list.append(np.bincount(b, weights=g_rows, minlength=nb))
        h_list.append(np.bincount(b, weights=h_rows, minlength=nb))
        c_list.append(np.bincount(b, minlength=nb).astype(np.float64))
    return NodeHistogram(g_list, h_list, c_list)


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    bin_boundary: int        # x <= edges[feature][bin_boundary] goes left
    threshold: float
    missing_left: bool
    gain: float


def best_split(hist: NodeHistogram, mapper: BinMapper, reg_lambda: float,
               reg_alpha: float, min_child_weight: float,
               min_split_gain: float, features=None) -> SplitDecision | None:
    """Max-gain split over the histogram, or None.

    gain = 0.5 * [score(G_L) + score(G_R) - score(G_parent)] with
    score(G, H) = soft_threshold(G, alpha)^2 / (H + lambda). Missing-value
    rows go to whichever side maximizes the gain. Both children must satisfy
    the hessian floor and the gain must strictly exceed ``min_split_gain``.
    Ties break toward the lower feature index, then the lower threshold.
    """
    if features is None:
        features = [f for f in range(len(hist.grad)) if len(hist.grad[f])]
    best: SplitDecision | None = None
    for f in sorted(int(x) for x in features):
        g = hist.grad[f]
        h = hist.hess[f]
        edges = mapper.edges[f]
        if len(g) == 0 or len(edges) == 0:
            continue
        g_miss, h_miss = g[-1], h[-1]
        cg = np.cumsum(g[:-1])
        ch = np.cumsum(h[:-1])
        G, H = cg[-1] + g_miss, ch[-1] + h_miss
        parent = _score(G, H, reg_lambda, reg_alpha)

        n_bound = len(edges)
        GL = cg[:n_bound]
        HL = ch[:n_bound]
        # Option A: missing rows left.
        GLa, HLa = GL + g_miss, HL + h_miss
        GRa, HRa = G - GLa, H - HLa
        gain_a = 0.5 * (_score(GLa, HLa, reg_lambda, reg_alpha)
                        + _score(GRa, HRa, reg_lambda, reg_alpha) - parent)
        ok_a = (HLa >= min_child_weight) & (HRa >= min_child_weight)
        # Option B: missing rows right.
        GRb, HRb = G - GL, H - HL
        gain_b = 0.5 * (_score(GL, HL, reg_lambda, reg_alpha)
                        + _score(GRb, HRb, reg_lambda, reg_alpha) - parent)
        ok_b = (HL >= min_child_weight) & (HRb >= min_child_weight)

        gain_a = np.where(ok_a, gain_a, -np.inf)
        gain_b = np.where(ok_b, gain_b, -np.inf)
        missing_left = gain_a >= gain_b
        gain = np.where(missing_left, gain_a, gain_b)

        b = int(np.argmax(gain))  # argmax takes the lowest index on ties
        if gain[b] > min_split_gain and (best is None or gain[b] > best.gain):
            best = SplitDecision(
                feature=f,
                bin_boundary=b,
                threshold=float(edges[b]),
                missing_left=bool(missing_left[b]),
                gain=float(gain[b]),
            )
    return best


@dataclass
class RegressionTree:
    """Flat-array binary tree; internal nodes test x[feature] <= threshold."""

    feature: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    threshold: np.ndarray = field(default_factory=lambda: np.empty(0))
    missing_left: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    left: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    right: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    is_leaf: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    weight: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            at_leaf = self.is_leaf[node]
            if at_leaf.all():
                break
            idx = np.flatnonzero(~at_leaf)
            nd = node[idx]
            x = X[idx, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.missing_left[nd],
                               x <= self.threshold[nd])
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
        return self.weight[node]

    def split_features(self) -> np.ndarray:
        return self.feature[~self.is_leaf]


class _GrowingNode:
    __slots__ = ("node_id", "depth", "rows", "hist", "split")

    def __init__(self, node_id, depth, rows, hist, split):
        self.node_id = node_id
        self.depth = depth
        self.rows = rows
        self.hist = hist
        self.split = split


def grow_tree(binned: np.ndarray, grad: np.ndarray, hess: np.ndarray,
              rows: np.ndarray, mapper: BinMapper, params,
              tree_features: np.ndarray, level_features: list[np.ndarray]
              ) -> RegressionTree:
    """Grow one tree leaf-wise over the sampled ``rows``.

    ``tree_features`` is the per-tree column subset; ``level_features[d]`` the
    subset usable at depth d (colsample_bylevel applied on top of bytree).
    """
    feature, threshold, missing_left = [], [], []
    left, right, is_leaf, weight = [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        missing_left.append(True)
        left.append(-1)
        right.append(-1)
        is_leaf.append(True)
        weight.append(0.0)
        return len(feature) - 1

    def node_stats(hist):
        f = next(i for i in range(len(hist.grad)) if len(hist.grad[i]))
        return float(hist.grad[f].sum()), float(hist.hess[f].sum())

    def make_candidate(node_id, depth, node_rows, hist):
        feats = level_features[min(depth, len(level_features) - 1)]
        split = None
        if depth < params.max_depth:
            split = best_split(hist, mapper, params.reg_lambda, params.reg_alpha,
                               params.min_child_weight, params.min_split_gain,
                               features=feats)
        return _GrowingNode(node_id, depth, node_rows, hist, split)

    root_hist = build_histograms(binned, grad, hess, rows, tree_features, mapper)
    root = make_candidate(new_node(), 0, rows, root_hist)
    leaves = [root]
    n_leaves = 1
    while n_leaves < params.max_leaves:
        grown = [n for n in leaves if n.split is not None]
        if not grown:
            break
        # Best gain; creation order (node_id) breaks ties deterministically.
        node = min(grown, key=lambda n: (-n.split.gain, n.node_id))
        sp = node.split
        b = binned[node.rows, sp.feature]
        edges = mapper.edges[sp.feature]
        miss_bin = len(edges) + 1
        go_left = b <= sp.bin_boundary
        if sp.missing_left:
            go_left |= b == miss_bin
        rows_l = node.rows[go_left]
        rows_r = node.rows[~go_left]

        # Build the smaller child's histogram; derive the sibling by subtraction.
        if len(rows_l) <= len(rows_r):
            hist_l = build_histograms(binned, grad, hess, rows_l, tree_features, mapper)
            hist_r = node.hist.subtract(hist_l)
        else:
            hist_r = build_histograms(binned, grad, hess, rows_r, tree_features, mapper)
            hist_l = node.hist.subtract(hist_r)

        nid = node.node_id
        lid, rid = new_node(), new_node()
        feature[nid] = sp.feature
        threshold[nid] = sp.threshold
        missing_left[nid] = sp.missing_left
        left[nid], right[nid] = lid, rid
        is_leaf[nid] = False

        leaves.remove(node)
        leaves.append(make_candidate(lid, node.depth + 1, rows_l, hist_l))
        leaves.append(make_candidate(rid, node.depth + 1, rows_r, hist_r))
        n_leaves += 1

    for n in leaves:
        G, H = node_stats(n.hist)
        weight[n.node_id] = leaf_weight(G, H, params.reg_lambda, params.reg_alpha)

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        missing_left=np.asarray(missing_left, dtype=bool),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        is_leaf=np.asarray(is_leaf, dtype=bool),
        weight=np.asarray(weight, dtype=np.float64),
    )

"""Gradient/hessian computation for the two supported objectives."""

from __future__ import annotations

import numpy as np

LOG2 = np.log(2.0)


def logloss_grad_hess(scores, labels, scale_pos_weight: float = 1.0):
    """Gradient and hessian of weighted binary cross-entropy at raw log-odds.

    Positive rows are weighted by ``scale_pos_weight``. With p = sigmoid(score)
    and w the row weight: grad = w * (p - label), hess = w * p * (1 - p).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-scores))
    w = np.where(labels == 1.0, scale_pos_weight, 1.0)
    grad = w * (p - labels)
    hess = w * p * (1.0 - p)
    return grad, hess


def _dcg_discounts(ranks: np.ndarray) -> np.ndarray:
    return 1.0 / (np.log1p(ranks) / LOG2)


def lambdarank_grad_hess(scores, labels, group_spans):
    """Pairwise lambdarank gradients over grouped rows.

    For every in-group pair (i, j) with label_i > label_j, the logistic pair
    cost is weighted by the absolute NDCG change of swapping i and j at the
    current score order (label gains 2^label - 1, log2 discounts). Groups with
    no label difference contribute zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    grad = np.zeros_like(scores)
    hess = np.zeros_like(scores)
    for start, stop in group_spans:
        s = scores[start:stop]
        y = labels[start:stop]
        m = stop - start
        gains = 2.0 ** y - 1.0
        # Positions from the current score order, ties by row index.
        order = np.lexsort((np.arange(m), -s))
        ranks = np.empty(m)
        ranks[order] = np.arange(1, m + 1)
        ideal = np.sort(gains)[::-1]
        idcg = float(np.sum(ideal * _dcg_discounts(np.arange(1, m + 1))))
        if idcg == 0.0:
            continue
        disc = _dcg_discounts(ranks)
        for i in range(m):
            for j in range(m):
                if y[i] <= y[j]:
                    continue
                delta_ndcg = abs((gains[i] - gains[j]) * (disc[i] - disc[j])) / idcg
                rho = 1.0 / (1.0 + np.exp(s[i] - s[j]))
                lam = rho * delta_ndcg
                grad[start + i] -= lam
                grad[start + j] += lam
                h = delta_ndcg * rho * (1.0 - rho)
                hess[start + i] += h
                hess[start + j] += h
    return grad, hess


def pairwise_logistic_cost(scores, labels, group_spans, frozen_weights=None):
    """Total lambdarank surrogate cost with NDCG weights frozen.

    Used as the finite-difference oracle for :func:`lambdarank_grad_hess`.
    ``frozen_weights`` maps (group_start, i, j) to the |delta NDCG| weight; when
    None, weights are computed once at the given scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if frozen_weights is None:
        frozen_weights = ndcg_pair_weights(scores, labels, group_spans)
    cost = 0.0
    for start, stop in group_spans:
        s = scores[start:stop]
        y = labels[start:stop]
        m = stop - start
        for i in range(m):
            for j in range(m):
                if y[i] <= y[j]:
                    continue
                w = frozen_weights[(start, i, j)]
                cost += w * np.log1p(np.exp(-(s[i] - s[j])))
    return cost


def ndcg_pair_weights(scores, labels, group_spans):
    """|delta NDCG| for every (i, j) pair with label_i > label_j."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    weights = {}
    for start, stop in group_spans:
        s = scores[start:stop]
        y = labels[start:stop]
        m = stop - start
        gains = 2.0 ** y - 1.0
        order = np.lexsort((np.arange(m), -s))
        ranks = np.empty(m)
        ranks[order] = np.arange(1, m + 1)
        ideal = np.sort(gains)[::-1]
        idcg = float(np.sum(ideal * _dcg_discounts(np.arange(1, m + 1))))
        disc = _dcg_discounts(ranks)
        for i in range(m):
            for j in range(m):
                if y[i] > y[j]:
                    if idcg == 0.0:
                        weights[(start, i, j)] = 0.0
                    else:
                        weights[(start, i, j)] = abs(
                            (gains[i] - gains[j]) * (disc[i] - disc[j])
                        ) / idcg
    return weights

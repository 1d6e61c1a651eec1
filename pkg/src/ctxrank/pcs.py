"""Product-context similarity (PCS).

PCS between two products is the average, over all catalog attributes, of a
per-attribute agreement term:

* single categorical: 1 if equal, else 0 (missing on either side scores 0);
* list categorical: |intersection| / max(|a|, |b|); both empty scores 1,
  exactly one empty scores 0;
* numeric: 1 - |a - b| after min-max normalization to [0, 1] (constant
  attributes normalize to 0.5).

The result always lies in [0, 1], is symmetric, and equals 1 for a product
compared with itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import ImpressionTable, ProductCatalog

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizedCatalog:
    """Catalog plus per-numeric-attribute min-max parameters.

    The parameters are fitted once and reused at inference so train and test
    numerics share one scale.
    """

    catalog: ProductCatalog
    ranges: dict[str, tuple[float, float]]

    def normalized_numeric(self, column: str) -> np.ndarray:
        lo, hi = self.ranges[column]
        x = self.catalog.df[column].to_numpy(dtype=np.float64)
        if hi == lo:
            return np.full(len(x), 0.5)
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def normalize_numerics(catalog: ProductCatalog) -> NormalizedCatalog:
    """Fit min-max normalization parameters for every numeric attribute."""
    ranges = {}
    for c in catalog.numerics:
        x = catalog.df[c].to_numpy(dtype=np.float64)
        finite = x[np.isfinite(x)]
        if len(finite) == 0:
            ranges[c] = (0.0, 0.0)
        else:
            ranges[c] = (float(finite.min()), float(finite.max()))
    return NormalizedCatalog(catalog, ranges)


class _PcsIndex:
    """Pre-extracted per-product attribute arrays for fast pairwise scoring."""

    def __init__(self, norm: NormalizedCatalog):
        cat = norm.catalog
        self.n_attributes = cat.n_attributes
        self.row_of = {pid: i for i, pid in enumerate(cat.df.index)}
        self.single = [cat.df[c].to_numpy() for c in cat.single_cats]
        self.lists = [
            [frozenset(t) for t in cat.df[c]] for c in cat.list_cats
        ]
        self.numeric = [norm.normalized_numeric(c) for c in cat.numerics]

    def score(self, i: int, j: int) -> float:
        total = 0.0
        for col in self.single:
            a, b = col[i], col[j]
            if a == b and a != "":
                total += 1.0
        for col in self.lists:
            a, b = col[i], col[j]
            if not a and not b:
                total += 1.0
            elif a and b:
                total += len(a & b) / max(len(a), len(b))
        for col in self.numeric:
            total += 1.0 - abs(col[i] - col[j])
        return total / self.n_attributes


def pcs(p_i: str, p_j: str, norm: NormalizedCatalog) -> float:
    """PCS score between two products by id."""
    idx = _PcsIndex(norm)
    for p in (p_i, p_j):
        if p not in idx.row_of:
            raise KeyError(f"unknown product id {p!r}")
    return idx.score(idx.row_of[p_i], idx.row_of[p_j])


def pcs_column(rows: ImpressionTable, norm: NormalizedCatalog) -> np.ndarray:
    """Per-row PCS of (candidate product, context product).

    Rows whose context or candidate product is missing from the catalog get
    NaN and are logged. Repeated (candidate, context) pairs are scored once.
    """
    idx = _PcsIndex(norm)
    cand = rows.df["product_id"].to_numpy()
    ctx = rows.df["context_product_id"].to_numpy()
    out = np.empty(len(cand))
    cache: dict[tuple[str, str], float] = {}
    n_missing = 0
    for r in range(len(cand)):
        key = (cand[r], ctx[r])
        v = cache.get(key)
        if v is None:
            i = idx.row_of.get(cand[r])
            j = idx.row_of.get(ctx[r])
            if i is None or j is None:
                v = np.nan
                n_missing += 1
            else:
                v = idx.score(i, j)
            cache[key] = v
        out[r] = v
    if n_missing:
        logger.warning("pcs_column: %d rows with products missing from catalog", n_missing)
    return out

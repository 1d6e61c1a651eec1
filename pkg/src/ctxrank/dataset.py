"""Impression-log and product-catalog loading, validation, encoding and splitting.

File formats (UTF-8, ``\\n`` line endings, comma-separated, header row):

* Impressions: ``query_id,user_id,session_id,context_product_id,product_id,
  is_click,observation_date,user_tier``. The ``is_click`` column may be absent
  (unlabeled sets). Dates are ISO ``YYYY-MM-DD``; internally they are stored as
  integer days since 2021-01-01.
* Catalog: ``product_id`` followed by attribute columns. Columns named
  ``list_*`` are list-valued categoricals with ``|``-joined tokens; columns
  named ``num_*`` plus ``product_price`` and ``start_online_date`` are numeric;
  every other column is a single-valued categorical.

Every impression (query) holds exactly 6 candidate rows; files violating this
are rejected at load time.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd

DATE_EPOCH = date(2021, 1, 1)
QUERY_SIZE = 6

IMPRESSION_COLUMNS = [
    "query_id",
    "user_id",
    "session_id",
    "context_product_id",
    "product_id",
    "is_click",
    "observation_date",
    "user_tier",
]

#: Numeric catalog attributes that do not carry the ``num_`` prefix.
KNOWN_NUMERIC_ATTRS = ("product_price", "start_online_date")


class SchemaError(ValueError):
    """A file does not conform to the documented column schema."""


def days_from_iso(s: str) -> int:
    return (date.fromisoformat(s) - DATE_EPOCH).days


def iso_from_days(d: int) -> str:
    return (DATE_EPOCH + timedelta(days=int(d))).isoformat()


@dataclass(frozen=True)
class ImpressionTable:
    """Impression rows, grouped contiguously by query_id.

    ``df`` columns match :data:`IMPRESSION_COLUMNS` (minus ``is_click`` for
    unlabeled tables); ``observation_date`` is integer days since the epoch.
    """

    df: pd.DataFrame

    @property
    def labeled(self) -> bool:
        return "is_click" in self.df.columns

    @property
    def n_rows(self) -> int:
        return len(self.df)

    def query_ids(self) -> list[str]:
        """Distinct query ids in first-appearance order."""
        return list(dict.fromkeys(self.df["query_id"]))

    def groups(self) -> list[tuple[str, int, int]]:
        """(query_id, start, stop) row spans, in table order."""
        out = []
        qids = self.df["query_id"].to_numpy()
        start = 0
        for i in range(1, len(qids) + 1):
            if i == len(qids) or qids[i] != qids[start]:
                out.append((qids[start], start, i))
                start = i
        return out

    def group_sizes(self) -> np.ndarray:
        return np.array([stop - start for _, start, stop in self.groups()])


@dataclass(frozen=True)
class ProductCatalog:
    """Per-product attributes, indexed by product_id.

    ``single_cats`` / ``list_cats`` / ``numerics`` name the attribute columns
    of each kind; their union is the full attribute set.
    """

    df: pd.DataFrame
    single_cats: tuple[str, ...]
    list_cats: tuple[str, ...]
    numerics: tuple[str, ...]

    @property
    def n_attributes(self) -> int:
        return len(self.single_cats) + len(self.list_cats) + len(self.numerics)

    def has_product(self, product_id: str) -> bool:
        return product_id in self.df.index


@dataclass(frozen=True)
class SplitSpec:
    n_val_queries: int
    seed: int = 0


def _classify_catalog_columns(columns) -> tuple[list[str], list[str], list[str]]:
    single, lists, nums = [], [], []
    for c in columns:
        if c == "product_id":
            continue
        if c.startswith("list_"):
            lists.append(c)
        elif c.startswith("num_") or c in KNOWN_NUMERIC_ATTRS:
            nums.append(c)
        else:
            single.append(c)
    return single, lists, nums


def load_impressions(path: str | os.PathLike) -> ImpressionTable:
    """Load an impression file, validating schema, dates, and query sizes.

    Rows are regrouped contiguously by query_id (first-appearance order) if the
    file interleaves queries. Queries with a row count other than 6 raise
    :class:`SchemaError` naming the offending query_id. Malformed dates are
    reported with their 1-based line number.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = [c for c in IMPRESSION_COLUMNS if c != "is_click"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")

    days = np.empty(len(df), dtype=np.int64)
    for i, s in enumerate(df["observation_date"]):
        try:
            days[i] = days_from_iso(s)
        except ValueError:
            raise SchemaError(
                f"{path}: line {i + 2}: unparsable date {s!r}"
            ) from None
    df["observation_date"] = days

    if "is_click" in df.columns:
        bad = ~df["is_click"].isin(["0", "1"])
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise SchemaError(f"{path}: line {line}: is_click must be 0 or 1")
        df["is_click"] = df["is_click"].astype(np.int8)

    counts = df["query_id"].value_counts()
    bad_queries = counts[counts != QUERY_SIZE]
    if len(bad_queries):
        qid = sorted(bad_queries.index)[0]
        raise SchemaError(
            f"{path}: query {qid!r} has {int(bad_queries[qid])} rows, expected {QUERY_SIZE}"
        )

    # Regroup contiguously in first-appearance order; no-op for sorted files.
    order = {q: i for i, q in enumerate(dict.fromkeys(df["query_id"]))}
    key = df["query_id"].map(order)
    if not key.is_monotonic_increasing:
        df = df.iloc[np.argsort(key.to_numpy(), kind="stable")]
    return ImpressionTable(df.reset_index(drop=True))


def write_impressions(table: ImpressionTable, path: str | os.PathLike) -> None:
    """Write an impression file that round-trips byte-identically through load."""
    df = table.df.copy()
    df["observation_date"] = df["observation_date"].map(iso_from_days)
    cols = [c for c in IMPRESSION_COLUMNS if c in df.columns]
    buf = io.StringIO()
    df[cols].to_csv(buf, index=False, lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def load_catalog(path: str | os.PathLike) -> ProductCatalog:
    """Load a product-attribute catalog; see module docstring for the schema."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if "product_id" not in df.columns:
        raise SchemaError(f"{path}: missing required column 'product_id'")
    single, lists, nums = _classify_catalog_columns(df.columns)
    for c in nums:
        try:
            df[c] = df[c].astype(np.float64)
        except ValueError:
            raise SchemaError(f"{path}: column {c!r} has non-numeric values") from None
    for c in lists:
        df[c] = df[c].map(lambda s: tuple(s.split("|")) if s else ())
    if df["product_id"].duplicated().any():
        dup = df.loc[df["product_id"].duplicated(), "product_id"].iloc[0]
        raise SchemaError(f"{path}: duplicate product_id {dup!r}")
    df = df.set_index("product_id")
    return ProductCatalog(df, tuple(single), tuple(lists), tuple(nums))


def write_catalog(catalog: ProductCatalog, path: str | os.PathLike) -> None:
    df = catalog.df.copy()
    for c in catalog.list_cats:
        df[c] = df[c].map("|".join)
    buf = io.StringIO()
    df.reset_index().to_csv(buf, index=False, lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def validate_references(table: ImpressionTable, catalog: ProductCatalog) -> list[str]:
    """Product ids referenced by the table that do not resolve in the catalog."""
    referenced = pd.unique(
        pd.concat([table.df["product_id"], table.df["context_product_id"]])
    )
    known = catalog.df.index
    return [p for p in referenced if p not in known]


@dataclass
class EncoderMap:
    """Per-column label encoders. Code 0 is reserved for values unseen at fit
    time; seen values get dense codes 1..#distinct in first-appearance order."""

    mappings: dict[str, dict[str, int]] = field(default_factory=dict)

    def transform_column(self, column: str, values) -> np.ndarray:
        m = self.mappings[column]
        return np.array([m.get(v, 0) for v in values], dtype=np.int64)

    def inverse(self, column: str) -> dict[int, str]:
        return {code: val for val, code in self.mappings[column].items()}


def fit_label_encoder(data: ImpressionTable | ProductCatalog | pd.DataFrame,
                      columns: list[str]) -> EncoderMap:
    """Fit label encoders on the named categorical columns.

    Codes are assigned in order of first appearance starting at 1; 0 stays
    reserved for unseen values. Numeric columns are rejected.
    """
    df = data.df if not isinstance(data, pd.DataFrame) else data
    enc = EncoderMap()
    for col in columns:
        if col not in df.columns:
            raise ValueError(f"column {col!r} not found")
        if pd.api.types.is_numeric_dtype(df[col]):
            raise ValueError(f"column {col!r} is numeric, not categorical")
        mapping: dict[str, int] = {}
        for v in df[col]:
            if v not in mapping:
                mapping[v] = len(mapping) + 1
        enc.mappings[col] = mapping
    return enc


def split_by_query(table: ImpressionTable, spec: SplitSpec) -> tuple[ImpressionTable, ImpressionTable]:
    """Split whole queries into (train, val) with ``n_val_queries`` validation
    queries sampled without replacement under ``spec.seed``."""
    qids = table.query_ids()
    if spec.n_val_queries >= len(qids):
        raise ValueError(
            f"n_val_queries={spec.n_val_queries} must be < total queries ({len(qids)})"
        )
    rng = np.random.default_rng(spec.seed)
    val_idx = rng.choice(len(qids), size=spec.n_val_queries, replace=False)
    val_set = {qids[i] for i in val_idx}
    in_val = table.df["query_id"].isin(val_set)
    train = ImpressionTable(table.df[~in_val].reset_index(drop=True))
    val = ImpressionTable(table.df[in_val].reset_index(drop=True))
    return train, val

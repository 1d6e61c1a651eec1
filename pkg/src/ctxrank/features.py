"""Feature engineering over impression logs.

Two kinds of columns are produced: click-out features (anything computed from
click labels) and non-click-out features. Click-out statistics come only from
``FeatureContext.reference_table`` (the training partition) and are joined
onto the rows being featurized, so featurizing a held-out set never touches
its own labels.

Missing values are encoded as NaN. The full column inventory, in matrix
order, is documented in the package README; the named high-importance columns
(``product_session_click_proportion``, ``n_unique_users_clicked``,
``last_clickout_product_price``, ``last_clickout_days_elapsed``,
``diff_prod_price_from_click_mean``, ``diff_prod_price_from_user_tier_mean``,
``days_elapsed``) keep those names.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataset import EncoderMap, ImpressionTable, ProductCatalog, fit_label_encoder

PRICE = "product_price"
SOD = "start_online_date"


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense numeric matrix aligned to impression rows.

    ``query_groups`` is a list of (query_id, start, stop) spans partitioning
    the rows; NaN marks missing values.
    """

    values: np.ndarray
    column_names: tuple[str, ...]
    query_groups: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        if len(set(self.column_names)) != len(self.column_names):
            raise ValueError("duplicate column names")
        if self.values.shape[1] != len(self.column_names):
            raise ValueError("column name count does not match matrix width")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def group_sizes(self) -> np.ndarray:
        return np.array([stop - start for _, start, stop in self.query_groups])


@dataclass
class FeatureContext:
    """Reference data for click-dependent and date-anchored statistics.

    ``reference_table`` must be labeled; ``reference_date`` (days since epoch)
    anchors days_elapsed and defaults to the latest reference date. Encoders
    are fitted on the reference table and catalog once so train and held-out
    matrices share one schema.
    """

    reference_table: ImpressionTable
    catalog: ProductCatalog
    reference_date: int | None = None
    encoders: EncoderMap = field(default=None)

    def __post_init__(self):
        if not self.reference_table.labeled:
            raise ValueError("FeatureContext requires a labeled reference table")
        if self.reference_date is None:
            self.reference_date = int(self.reference_table.df["observation_date"].max())
        if self.encoders is None:
            enc = fit_label_encoder(self.catalog, list(self.catalog.single_cats))
            enc.mappings.update(
                fit_label_encoder(self.reference_table, ["user_tier"]).mappings
            )
            self.encoders = enc


def _with_catalog(rows_df: pd.DataFrame, catalog: ProductCatalog) -> pd.DataFrame:
    cols = [c for c in catalog.numerics] + list(catalog.single_cats)
    return rows_df.join(catalog.df[cols], on="product_id")


def _ref_frame(ctx: FeatureContext) -> pd.DataFrame:
    return _with_catalog(ctx.reference_table.df, ctx.catalog)


def encoded_raw(rows: ImpressionTable, catalog: ProductCatalog,
                ctx: FeatureContext) -> pd.DataFrame:
    """Label-encoded candidate attributes, raw numerics, and days_elapsed."""
    work = _with_catalog(rows.df, catalog)
    out = pd.DataFrame(index=work.index)
    for c in catalog.single_cats:
        out[f"enc_{c}"] = ctx.encoders.transform_column(c, work[c]).astype(np.float64)
    out["enc_user_tier"] = ctx.encoders.transform_column(
        "user_tier", work["user_tier"]).astype(np.float64)
    for c in catalog.numerics:
        out[c] = work[c].astype(np.float64)
    out["days_elapsed"] = (ctx.reference_date - work["observation_date"]).astype(np.float64)
    return out


def session_click_proportion(rows: ImpressionTable, ctx: FeatureContext) -> pd.Series:
    """Clicks on this product in this session over all clicks in the session.

    Sessions with zero reference clicks (including sessions unseen in the
    reference table) yield 0.
    """
    ref = ctx.reference_table.df
    clicked = ref[ref["is_click"] == 1]
    per_pair = clicked.groupby(["session_id", "product_id"]).size()
    per_session = clicked.groupby("session_id").size()
    keys = pd.MultiIndex.from_frame(rows.df[["session_id", "product_id"]])
    num = per_pair.reindex(keys).fillna(0.0).to_numpy()
    den = per_session.reindex(rows.df["session_id"]).fillna(0.0).to_numpy()
    out = np.zeros(len(rows.df))
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return pd.Series(out, index=rows.df.index, name="product_session_click_proportion")


def session_features(rows: ImpressionTable, catalog: ProductCatalog,
                     ctx: FeatureContext) -> pd.DataFrame:
    """Session aggregates and frequencies plus the click-proportion feature."""
    work = _with_catalog(rows.df, catalog)
    g = work.groupby("session_id")
    out = pd.DataFrame(index=work.index)
    for col, tag in ((PRICE, "price"), (SOD, "sod")):
        for agg in ("mean", "max", "min"):
            out[f"session_{tag}_{agg}"] = g[col].transform(agg)
    out["session_product_freq"] = work.groupby(
        ["session_id", "product_id"])["product_id"].transform("size").astype(np.float64)
    out["product_session_click_proportion"] = session_click_proportion(rows, ctx)
    return out


def query_aggregates(rows: ImpressionTable, catalog: ProductCatalog) -> pd.DataFrame:
    """Mean/max/min price and start_online_date over each query's candidates."""
    work = _with_catalog(rows.df, catalog)
    g = work.groupby("query_id")
    out = pd.DataFrame(index=work.index)
    for col, tag in ((PRICE, "price"), (SOD, "sod")):
        for agg in ("mean", "max", "min"):
            out[f"query_{tag}_{agg}"] = g[col].transform(agg)
    return out


def global_static(rows: ImpressionTable, ctx: FeatureContext) -> pd.DataFrame:
    """Per-product interaction counts plus click-out recency features.

    Products never clicked in the reference data get NaN for the click-out
    columns.
    """
    ref = _ref_frame(ctx)
    out = pd.DataFrame(index=rows.df.index)
    pid = rows.df["product_id"]

    out["product_n_unique_users"] = ref.groupby("product_id")["user_id"].nunique() \
        .reindex(pid).fillna(0.0).to_numpy()
    out["product_n_impressions"] = ref.groupby("product_id").size() \
        .reindex(pid).fillna(0.0).to_numpy(dtype=np.float64)

    clicked = ref[ref["is_click"] == 1]
    out["n_unique_users_clicked"] = clicked.groupby("product_id")["user_id"].nunique() \
        .reindex(pid).to_numpy(dtype=np.float64)
    # Price and recency taken from the latest clicked row per product.
    last = clicked.sort_values("observation_date", kind="stable") \
        .groupby("product_id").tail(1).set_index("product_id")
    out["last_clickout_product_price"] = last[PRICE].reindex(pid).to_numpy()
    last_day = last["observation_date"].reindex(pid).to_numpy(dtype=np.float64)
    out["last_clickout_days_elapsed"] = ctx.reference_date - last_day
    return out


def popularity_rates(rows: ImpressionTable, catalog: ProductCatalog,
                     ctx: FeatureContext) -> pd.DataFrame:
    """Attribute popularity: impression share and click share per value of
    each single-valued categorical (brand, category, colour, ...)."""
    ref = _ref_frame(ctx)
    work = _with_catalog(rows.df, catalog)
    clicked = ref[ref["is_click"] == 1]
    out = pd.DataFrame(index=work.index)
    for c in catalog.single_cats:
        freq = ref[c].value_counts(normalize=True)
        out[f"{c}_impression_share"] = freq.reindex(work[c]).fillna(0.0).to_numpy()
        share = clicked[c].value_counts(normalize=True)
        out[f"{c}_click_share"] = share.reindex(work[c]).fillna(0.0).to_numpy()
    return out


def user_tier_aggregates(rows: ImpressionTable, ctx: FeatureContext) -> pd.DataFrame:
    """Per-tier price/start_online_date aggregates over all reference rows and
    over clicked reference rows only. Tiers with no clicks get NaN for the
    click-out variant."""
    ref = _ref_frame(ctx)
    clicked = ref[ref["is_click"] == 1]
    tier = rows.df["user_tier"]
    out = pd.DataFrame(index=rows.df.index)
    for frame, prefix in ((ref, "tier"), (clicked, "tier_clicked")):
        g = frame.groupby("user_tier")
        for col, tag in ((PRICE, "price"), (SOD, "sod")):
            agg = g[col].agg(["mean", "max", "min"])
            for a in ("mean", "max", "min"):
                out[f"{prefix}_{tag}_{a}"] = agg[a].reindex(tier).to_numpy()
    return out


def rank_within_impression(rows: ImpressionTable, catalog: ProductCatalog) -> pd.DataFrame:
    """Rank 1..6 of each candidate within its query by price and by
    start_online_date; ties break by ascending product_id."""
    work = _with_catalog(rows.df, catalog)
    out = pd.DataFrame(index=work.index)
    pid = work["product_id"].to_numpy()
    for col, tag in ((PRICE, "price"), (SOD, "sod")):
        vals = work[col].to_numpy()
        ranks = np.empty(len(work))
        for _, start, stop in rows.groups():
            order = np.lexsort((pid[start:stop], vals[start:stop]))
            r = np.empty(stop - start)
            r[order] = np.arange(1, stop - start + 1)
            ranks[start:stop] = r
        out[f"{tag}_rank_in_query"] = ranks
    return out


def difference_features(rows: ImpressionTable, catalog: ProductCatalog,
                        ctx: FeatureContext) -> pd.DataFrame:
    """Row value minus session/query/clicked/tier aggregates."""
    ref = _ref_frame(ctx)
    clicked = ref[ref["is_click"] == 1]
    work = _with_catalog(rows.df, catalog)
    price = work[PRICE].to_numpy()
    sod = work[SOD].to_numpy()
    out = pd.DataFrame(index=work.index)
    out["diff_price_from_session_mean"] = price - work.groupby(
        "session_id")[PRICE].transform("mean").to_numpy()
    out["diff_price_from_query_mean"] = price - work.groupby(
        "query_id")[PRICE].transform("mean").to_numpy()
    click_price_mean = clicked[PRICE].mean() if len(clicked) else np.nan
    click_sod_mean = clicked[SOD].mean() if len(clicked) else np.nan
    out["diff_prod_price_from_click_mean"] = price - click_price_mean
    out["diff_sod_from_click_mean"] = sod - click_sod_mean
    tier_mean = ref.groupby("user_tier")[PRICE].mean().reindex(
        work["user_tier"]).to_numpy()
    out["diff_prod_price_from_user_tier_mean"] = price - tier_mean
    return out


def weekly_features(rows: ImpressionTable, ctx: FeatureContext) -> pd.DataFrame:
    """Weekly click statistics joined by the row's week index.

    Weeks with no reference clicks get NaN for the clicked aggregates; the
    per-product weekly click count falls back to 0.
    """
    ref = _ref_frame(ctx)
    clicked = ref[ref["is_click"] == 1]
    clicked_week = clicked["observation_date"] // 7
    week = rows.df["observation_date"] // 7

    out = pd.DataFrame(index=rows.df.index)
    g = clicked.groupby(clicked_week)
    for col, tag in ((PRICE, "price"), (SOD, "sod")):
        agg = g[col].agg(["mean", "max", "min"])
        for a in ("mean", "max", "min"):
            out[f"week_clicked_{tag}_{a}"] = agg[a].reindex(week).to_numpy()
    counts = clicked.groupby([clicked_week, clicked["product_id"]]).size()
    keys = pd.MultiIndex.from_arrays([week, rows.df["product_id"]])
    out["product_week_click_count"] = counts.reindex(keys).fillna(0.0).to_numpy()
    return out


def build_feature_matrix(rows: ImpressionTable, catalog: ProductCatalog,
                         ctx: FeatureContext,
                         pcs_column: np.ndarray | None = None) -> FeatureMatrix:
    """Assemble the full feature matrix in the documented column order.

    ``pcs_column``, when given, must align with ``rows`` and is appended as
    the final column named ``pcs``.
    """
    parts = [
        encoded_raw(rows, catalog, ctx),
        session_features(rows, catalog, ctx),
        query_aggregates(rows, catalog),
        global_static(rows, ctx),
        popularity_rates(rows, catalog, ctx),
        user_tier_aggregates(rows, ctx),
        rank_within_impression(rows, catalog),
        difference_features(rows, catalog, ctx),
        weekly_features(rows, ctx),
    ]
    full = pd.concat(parts, axis=1)
    if pcs_column is not None:
        if len(pcs_column) != len(full):
            raise ValueError(
                f"pcs column length {len(pcs_column)} != row count {len(full)}"
            )
        full["pcs"] = np.asarray(pcs_column, dtype=np.float64)
    values = np.ascontiguousarray(full.to_numpy(dtype=np.float64))
    return FeatureMatrix(values, tuple(full.columns), tuple(rows.groups()))


def write_matrix(matrix: FeatureMatrix, path: str) -> None:
    """Dump the matrix as columnar text; NaN serialized as an empty cell."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(matrix.column_names) + "\n")
        for row in matrix.values:
            f.write(",".join("" if np.isnan(v) else f"{v:.9g}" for v in row) + "\n")

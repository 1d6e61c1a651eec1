import numpy as np
import pandas as pd
import pytest

from ctxrank.dataset import ImpressionTable, ProductCatalog
from ctxrank.synthgen import SynthConfig, generate


def make_impressions(queries, labeled=True):
    """Build an ImpressionTable from a list of per-query dicts.

    Each dict may set: user, session, context, products (6 ids),
    clicked (index or None), date (int days), tier.
    """
    rows = []
    for qi, q in enumerate(queries):
        products = q.get("products", [f"p{qi}_{i}" for i in range(6)])
        assert len(products) == 6
        clicked = q.get("clicked", 0)
        for i, pid in enumerate(products):
            row = {
                "query_id": q.get("query_id", f"q{qi:04d}"),
                "user_id": q.get("user", "u0"),
                "session_id": q.get("session", "s0"),
                "context_product_id": q.get("context", products[0]),
                "product_id": pid,
                "observation_date": q.get("date", 0),
                "user_tier": q.get("tier", "tier1"),
            }
            if labeled:
                row["is_click"] = 1 if i == clicked else 0
            rows.append(row)
    df = pd.DataFrame(rows)
    if labeled:
        df["is_click"] = df["is_click"].astype(np.int8)
    df["observation_date"] = df["observation_date"].astype(np.int64)
    return ImpressionTable(df)


def make_catalog(products):
    """Build a ProductCatalog from {product_id: dict} with keys matching the
    synthetic schema: brand_id, category_id, list_1 (tuple), product_price,
    start_online_date."""
    recs = []
    for pid, attrs in products.items():
        recs.append({
            "product_id": pid,
            "brand_id": attrs.get("brand", "b0"),
            "category_id": attrs.get("category", "g0"),
            "list_1": tuple(attrs.get("list", ())),
            "product_price": float(attrs.get("price", 10.0)),
            "start_online_date": float(attrs.get("sod", -100.0)),
        })
    df = pd.DataFrame(recs).set_index("product_id")
    return ProductCatalog(df, ("brand_id", "category_id"), ("list_1",),
                          ("product_price", "start_online_date"))


@pytest.fixture(scope="session")
def small_synth():
    """A small but realistic generated dataset shared across tests."""
    return generate(SynthConfig(n_queries=300, n_users=60, n_sessions=120,
                                n_products=80, seed=5))

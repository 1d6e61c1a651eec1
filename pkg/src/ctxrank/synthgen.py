"""Synthetic impression-log and catalog generator.

Generates desk-scale click data with planted, tunable signals so the full
pipeline can be exercised end to end. Each query shows 6 candidate products
next to a context product; exactly one click is sampled per query from a
softmax over

    signal_weights . [-normalized_price, PCS(candidate, context), popularity]

at temperature ``click_noise``. Catalog attributes are drawn with realistic
skew (a few popular brands and colours dominate), and candidates are sampled
proportionally to a latent product popularity so products recur across
sessions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataset import (
    QUERY_SIZE,
    ImpressionTable,
    ProductCatalog,
    write_catalog,
    write_impressions,
)
from .pcs import _PcsIndex, normalize_numerics


@dataclass
class SynthConfig:
    n_queries: int = 1000
    n_users: int = 200
    n_sessions: int = 400
    n_products: int = 300
    k1: int = 3          # single-valued categorical attributes
    k2: int = 2          # numeric attributes (product_price, start_online_date, ...)
    k3: int = 1          # list-valued categorical attributes
    #: (price sensitivity, context-similarity sensitivity beta, popularity sensitivity)
    signal_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    click_noise: float = 0.3
    weeks: int = 8
    seed: int = 0

    def validate(self) -> None:
        counts = {
            "n_queries": self.n_queries,
            "n_users": self.n_users,
            "n_sessions": self.n_sessions,
            "n_products": self.n_products,
            "weeks": self.weeks,
        }
        for name, v in counts.items():
            if v <= 0:
                raise ValueError(f"{name} must be > 0, got {v}")
        if self.click_noise <= 0:
            raise ValueError(f"click_noise must be > 0, got {self.click_noise}")
        if self.k1 + self.k2 + self.k3 < 3:
            raise ValueError("k1 + k2 + k3 must be >= 3")
        if self.k2 < 2:
            raise ValueError("k2 must be >= 2 (product_price, start_online_date)")
        if len(self.signal_weights) != 3:
            raise ValueError("signal_weights must have 3 entries")


@dataclass
class PlantedTruth:
    """Latent click probabilities behind the generated labels.

    ``df`` has one row per impression row: query_id, product_id, latent_p;
    the 6 probabilities of each query sum to 1. ``beta`` is the generator's
    context-similarity weight.
    """

    df: pd.DataFrame
    beta: float = field(default=0.0)


def _skewed_choice(rng: np.random.Generator, vocab: list[str], size: int) -> np.ndarray:
    """Draw with Zipf-like weights so a few values dominate."""
    w = 1.0 / np.arange(1, len(vocab) + 1)
    return rng.choice(vocab, size=size, p=w / w.sum())


def _make_catalog(cfg: SynthConfig, rng: np.random.Generator) -> ProductCatalog:
    n = cfg.n_products
    pids = [f"p{i:05d}" for i in range(n)]
    df = pd.DataFrame(index=pd.Index(pids, name="product_id"))

    n_brands = max(5, n // 20)
    base_single = {
        "brand_id": [f"b{i:03d}" for i in range(n_brands)],
        "category_id": [f"g{i:02d}" for i in range(12)],
        "main_colour": ["black", "white", "red", "blue", "green", "beige",
                        "brown", "grey", "pink", "yellow"],
    }
    single = []
    for i in range(cfg.k1):
        if i < len(base_single):
            name, vocab = list(base_single.items())[i]
        else:
            name, vocab = f"cat_{i + 1}", [f"v{i}_{j}" for j in range(6)]
        df[name] = _skewed_choice(rng, vocab, n)
        single.append(name)

    lists = []
    material_vocab = ["cotton", "wool", "silk", "leather", "linen",
                      "polyester", "denim", "cashmere", "suede", "velvet"]
    for i in range(cfg.k3):
        name = f"list_{i + 1}"
        sizes = rng.integers(1, 4, size=n)
        w = 1.0 / np.arange(1, len(material_vocab) + 1)
        col = []
        for s in sizes:
            toks = rng.choice(material_vocab, size=s, replace=False, p=w / w.sum())
            col.append(tuple(sorted(toks)))
        df[name] = col
        lists.append(name)

    nums = ["product_price", "start_online_date"]
    df["product_price"] = np.round(np.exp(rng.normal(4.5, 0.8, size=n)), 2)
    df["start_online_date"] = rng.integers(-400, 0, size=n).astype(np.float64)
    for i in range(2, cfg.k2):
        name = f"num_{i + 1}"
        df[name] = np.round(rng.normal(0.0, 1.0, size=n), 4)
        nums.append(name)

    return ProductCatalog(df, tuple(single), tuple(lists), tuple(nums))


def generate(cfg: SynthConfig) -> tuple[ImpressionTable, ProductCatalog, PlantedTruth]:
    """Generate (impressions, catalog, planted truth) deterministically from
    ``cfg.seed``. Exactly one row per query carries is_click=1."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    catalog = _make_catalog(cfg, rng)
    n = cfg.n_products
    pids = np.asarray(catalog.df.index)

    popularity = rng.beta(1.2, 4.0, size=n)
    sample_w = popularity + 0.05
    sample_p = sample_w / sample_w.sum()

    prices = catalog.df["product_price"].to_numpy()
    lo, hi = prices.min(), prices.max()
    norm_price = (prices - lo) / (hi - lo) if hi > lo else np.full(n, 0.5)

    pcs_index = _PcsIndex(normalize_numerics(catalog))
    categories = catalog.df[catalog.single_cats[min(1, cfg.k1 - 1)]].to_numpy()
    by_category: dict[str, np.ndarray] = {}
    for c in np.unique(categories):
        by_category[c] = np.flatnonzero(categories == c)

    session_user = rng.integers(0, cfg.n_users, size=cfg.n_sessions)
    tier_of_user = rng.choice(
        ["tier1", "tier2", "tier3", "tier4"], size=cfg.n_users, p=[0.5, 0.3, 0.15, 0.05]
    )

    w_price, beta, w_pop = (float(w) for w in cfg.signal_weights)
    rows = []
    truth_rows = []
    for q in range(cfg.n_queries):
        qid = f"q{q:06d}"
        session = int(rng.integers(0, cfg.n_sessions))
        user = int(session_user[session])
        day = int(rng.integers(0, cfg.weeks * 7))
        context = int(rng.choice(n, p=sample_p))

        cand = rng.choice(n, size=QUERY_SIZE, replace=False, p=sample_p)
        same_cat = by_category[categories[context]]
        if not np.any(np.isin(cand, same_cat)):
            cand[0] = int(rng.choice(same_cat))

        sim = np.array([pcs_index.score(c, context) for c in cand])
        utility = w_price * (-norm_price[cand]) + beta * sim + w_pop * popularity[cand]
        z = utility / cfg.click_noise
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        clicked = int(rng.choice(QUERY_SIZE, p=p))

        iso_day = day
        for slot, c in enumerate(cand):
            rows.append((
                qid,
                f"u{user:05d}",
                f"s{session:05d}",
                pids[context],
                pids[c],
                1 if slot == clicked else 0,
                iso_day,
                tier_of_user[user],
            ))
            truth_rows.append((qid, pids[c], p[slot]))

    df = pd.DataFrame(rows, columns=[
        "query_id", "user_id", "session_id", "context_product_id",
        "product_id", "is_click", "observation_date", "user_tier",
    ])
    df["is_click"] = df["is_click"].astype(np.int8)
    df["observation_date"] = df["observation_date"].astype(np.int64)
    truth = pd.DataFrame(truth_rows, columns=["query_id", "product_id", "latent_p"])
    return ImpressionTable(df), catalog, PlantedTruth(truth, beta=beta)


def write_truth(truth: PlantedTruth, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("query_id,product_id,latent_p\n")
        for qid, pid, p in truth.df.itertuples(index=False):
            f.write(f"{qid},{pid},{p:.9g}\n")


def write_dataset(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, str]:
    """Generate and write impressions.csv, catalog.csv and truth.csv."""
    os.makedirs(out_dir, exist_ok=True)
    table, catalog, truth = generate(cfg)
    paths = {
        "impressions": os.path.join(out_dir, "impressions.csv"),
        "catalog": os.path.join(out_dir, "catalog.csv"),
        "truth": os.path.join(out_dir, "truth.csv"),
    }
    write_impressions(table, paths["impressions"])
    write_catalog(catalog, paths["catalog"])
    write_truth(truth, paths["truth"])
    return paths

"""Ranking, similarity-threshold post-processing, and MRR evaluation.

The post-processing rule: if the maximum candidate-context similarity within
an impression is at least the threshold, the impression is re-ranked by the
similarity values alone; otherwise the model-score order stands. MRR averages
1/rank of the first clicked product over impressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import QUERY_SIZE


@dataclass(frozen=True)
class RankedImpression:
    query_id: str
    product_ids: tuple[str, ...]       # rank 1 first
    scores: tuple[float, ...]          # aligned with product_ids
    pcs_values: tuple[float, ...]
    filter_applied: bool


@dataclass(frozen=True)
class ThresholdCurve:
    """(threshold, MRR) pairs over a strictly increasing grid."""

    points: tuple[tuple[float, float], ...]

    @property
    def best(self) -> tuple[float, float]:
        """(threshold, MRR) of the argmax; lower threshold wins ties."""
        return max(self.points, key=lambda p: (p[1], -p[0]))


def rank_impression(query_id: str, product_ids, scores, pcs_values,
                    threshold: float) -> RankedImpression:
    """Order one impression's candidates.

    Missing similarity values count as 0. Ranks by similarity descending when
    max similarity >= threshold, else by model score descending; ties break by
    score descending then product_id ascending.
    """
    if not (len(product_ids) == len(scores) == len(pcs_values) == QUERY_SIZE):
        raise ValueError(f"expected {QUERY_SIZE} candidates")
    scores = np.asarray(scores, dtype=np.float64)
    sim = np.nan_to_num(np.asarray(pcs_values, dtype=np.float64), nan=0.0)
    pids = list(product_ids)
    apply_filter = bool(sim.max() >= threshold)
    if apply_filter:
        order = sorted(range(QUERY_SIZE),
                       key=lambda i: (-sim[i], -scores[i], pids[i]))
    else:
        order = sorted(range(QUERY_SIZE), key=lambda i: (-scores[i], pids[i]))
    return RankedImpression(
        query_id=query_id,
        product_ids=tuple(pids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
        pcs_values=tuple(float(sim[i]) for i in order),
        filter_applied=apply_filter,
    )


def rank_all(table_groups, product_ids, scores, pcs_values, threshold: float
             ) -> list[RankedImpression]:
    """Rank every impression; ``table_groups`` is (query_id, start, stop)."""
    scores = np.asarray(scores, dtype=np.float64)
    pcs_values = np.asarray(pcs_values, dtype=np.float64)
    out = []
    for qid, start, stop in table_groups:
        out.append(rank_impression(
            qid, product_ids[start:stop], scores[start:stop],
            pcs_values[start:stop], threshold,
        ))
    return out


def mrr(rankings: list[RankedImpression], labels: dict[str, set[str]]) -> float:
    """Mean reciprocal rank of the first clicked product.

    ``labels`` maps query_id to the set of clicked product_ids. Queries with
    no clicked product contribute 0 but stay in the denominator. A ranked
    query absent from ``labels`` is an error.
    """
    if not rankings:
        raise ValueError("no rankings to evaluate")
    total = 0.0
    for r in rankings:
        if r.query_id not in labels:
            raise ValueError(f"query {r.query_id!r} has no labels")
        clicked = labels[r.query_id]
        for pos, pid in enumerate(r.product_ids, start=1):
            if pid in clicked:
                total += 1.0 / pos
                break
    return total / len(rankings)


def labels_from_table(table) -> dict[str, set[str]]:
    """Clicked product sets per query from a labeled ImpressionTable."""
    df = table.df
    clicked = df[df["is_click"] == 1]
    out: dict[str, set[str]] = {q: set() for q in df["query_id"]}
    for q, p in zip(clicked["query_id"], clicked["product_id"]):
        out[q].add(p)
    return out


def mrr_from_scores(scores, labels, group_spans) -> float:
    """MRR of the score-descending order (no similarity filter), computed
    directly from aligned arrays. Ties break by row index."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    n = 0
    for start, stop in group_spans:
        m = stop - start
        order = np.lexsort((np.arange(m), -scores[start:stop]))
        y = labels[start:stop][order]
        hits = np.flatnonzero(y == 1)
        if len(hits):
            total += 1.0 / (hits[0] + 1)
        n += 1
    return total / n if n else 0.0


def threshold_sweep(table_groups, product_ids, scores, pcs_values,
                    labels: dict[str, set[str]], grid) -> ThresholdCurve:
    """MRR at every threshold of ``grid`` (strictly increasing, within
    [0, 1 + eps])."""
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("empty threshold grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    points = []
    for t in grid:
        rankings = rank_all(table_groups, product_ids, scores, pcs_values, t)
        points.append((t, mrr(rankings, labels)))
    return ThresholdCurve(tuple(points))


def parse_grid(spec: str) -> list[float]:
    """Parse ``start:stop:step`` into an inclusive grid (e.g. 0.30:0.60:0.03
    gives 11 points)."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"bad grid spec {spec!r}; expected start:stop:step") from None
    if step <= 0:
        raise ValueError("grid step must be > 0")
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n) if start + i * step <= stop + 1e-9]


DEFAULT_GRID = parse_grid("0.30:0.60:0.03")


def write_predictions(rankings: list[RankedImpression], path: str) -> None:
    """`query_id,product_id,rank,score,pcs,filter_applied` columnar text."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("query_id,product_id,rank,score,pcs,filter_applied\n")
        for r in rankings:
            for pos, (pid, s, v) in enumerate(
                    zip(r.product_ids, r.scores, r.pcs_values), start=1):
                flag = 1 if r.filter_applied else 0
                f.write(f"{r.query_id},{pid},{pos},{s:.9g},{v:.9g},{flag}\n")


def write_sweep(curve: ThresholdCurve, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("threshold,mrr\n")
        for t, m in curve.points:
            f.write(f"{t:.9g},{m:.9g}\n")

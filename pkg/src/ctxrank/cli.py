"""Command-line orchestration of the full pipeline.

Commands: synth, featurize, train, predict, evaluate, sweep, tune. A flat
key=value config file can supply any flag (flags override the file). Exit
codes: 0 success, 1 validation error, 2 I/O error.

Scores in artifact files are serialized at 9 significant digits; internal
ranking uses the same rounded values so file round trips are lossless.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
import pandas as pd

from . import dataset, features, rank_eval, synthgen, tune as tune_mod
from .dataset import EncoderMap, ImpressionTable, SplitSpec
from .features import FeatureContext, build_feature_matrix
from .gbdt import BoostParams, PRESETS, load_model, save_model, train as train_model
from .gbdt.model import feature_importance, preset
from .pcs import NormalizedCatalog, normalize_numerics, pcs_column

DEFAULT_THRESHOLD = 0.51
NO_FILTER_THRESHOLD = 2.0      # above max possible similarity


def _round9(x: np.ndarray) -> np.ndarray:
    return np.array([float(f"{v:.9g}") for v in x])


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _merge_config(args: argparse.Namespace, keys: list[str]) -> None:
    """Fill unset args from the config file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    cfg = read_config(args.config)
    for key in keys:
        if getattr(args, key, None) is None and key in cfg:
            setattr(args, key, cfg[key])


def _boost_params(args) -> BoostParams:
    n_est = int(args.n_estimators) if args.n_estimators is not None else None
    seed = int(args.seed or 0)
    if args.preset:
        return preset(args.preset, n_estimators=n_est, seed=seed)
    kwargs = dict(seed=seed)
    if n_est is not None:
        kwargs["n_estimators"] = n_est
    for name in ("learning_rate", "max_leaves", "max_depth", "subsample",
                 "colsample_bytree", "colsample_bylevel", "reg_alpha",
                 "reg_lambda", "scale_pos_weight", "min_child_weight",
                 "min_split_gain", "bagging_freq", "histogram_bins"):
        v = getattr(args, name, None)
        if v is not None:
            fld = BoostParams.__dataclass_fields__[name]
            kwargs[name] = int(v) if "int" in str(fld.type) else float(v)
    return BoostParams(**kwargs)


def _featurize(rows: ImpressionTable, catalog, ctx: FeatureContext,
               norm: NormalizedCatalog, include_pcs: bool):
    sim = pcs_column(rows, norm)
    matrix = build_feature_matrix(rows, catalog, ctx,
                                  pcs_column=sim if include_pcs else None)
    return matrix, sim


def _context_from_model(model, ref_table, catalog) -> tuple[FeatureContext, NormalizedCatalog]:
    enc = EncoderMap(dict(model.encoders or {}))
    ctx = FeatureContext(ref_table, catalog, encoders=enc)
    norm = NormalizedCatalog(catalog, dict(model.numeric_ranges or {}))
    return ctx, norm


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    weights = tuple(float(w) for w in (args.weights or "1.0,1.0,1.0").split(","))
    cfg = synthgen.SynthConfig(
        n_queries=int(args.queries),
        n_users=int(args.users) if args.users else max(50, int(args.queries) // 10),
        n_sessions=int(args.sessions) if args.sessions else max(80, int(args.queries) // 5),
        n_products=int(args.products) if args.products else 300,
        signal_weights=weights,
        click_noise=float(args.noise or 0.3),
        weeks=int(args.weeks or 8),
        seed=int(args.seed or 0),
    )
    paths = synthgen.write_dataset(cfg, args.out or ".")
    print(f"queries={cfg.n_queries} rows={cfg.n_queries * dataset.QUERY_SIZE} "
          f"impressions={paths['impressions']}")
    return 0


def cmd_featurize(args) -> int:
    _merge_config(args, ["impressions", "catalog", "ref"])
    table = dataset.load_impressions(args.impressions)
    catalog = dataset.load_catalog(args.catalog)
    ref = dataset.load_impressions(args.ref) if args.ref else table
    ctx = FeatureContext(ref, catalog)
    norm = normalize_numerics(catalog)
    matrix, _ = _featurize(table, catalog, ctx, norm, not args.no_pcs_feature)
    out = args.out or "matrix.csv"
    features.write_matrix(matrix, out)
    print(f"rows={matrix.n_rows} columns={len(matrix.column_names)} out={out}")
    return 0


def cmd_train(args) -> int:
    _merge_config(args, ["impressions", "catalog", "objective", "preset",
                         "n_estimators", "val_queries", "seed", "out",
                         "threshold", "no_pcs_feature"])
    objective = {"classify": "classification", "rank": "lambdarank"}.get(
        args.objective or "classify")
    if objective is None:
        raise ValueError(f"unknown objective {args.objective!r}")
    params = _boost_params(args)
    table = dataset.load_impressions(args.impressions)
    catalog = dataset.load_catalog(args.catalog)
    n_val = int(args.val_queries or max(1, len(table.query_ids()) // 10))
    train_tbl, val_tbl = dataset.split_by_query(
        table, SplitSpec(n_val, int(args.seed or 0)))

    ctx = FeatureContext(train_tbl, catalog)
    norm = normalize_numerics(catalog)
    include_pcs = not args.no_pcs_feature
    train_mx, _ = _featurize(train_tbl, catalog, ctx, norm, include_pcs)
    val_mx, val_sim = _featurize(val_tbl, catalog, ctx, norm, include_pcs)

    model = train_model(
        train_mx, train_tbl.df["is_click"].to_numpy(), train_mx.query_groups,
        params, objective,
        eval_set=(val_mx, val_tbl.df["is_click"].to_numpy(), val_mx.query_groups),
    )
    model.encoders = ctx.encoders.mappings
    model.numeric_ranges = norm.ranges

    import os
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.txt")
    save_model(model, model_path)
    with open(os.path.join(out_dir, "training_log.csv"), "w",
              encoding="utf-8", newline="") as f:
        f.write("round,train_loss,val_mrr\n")
        for rnd, loss, m in model.train_log:
            f.write(f"{rnd},{loss:.9g},{m:.9g}\n")
    with open(os.path.join(out_dir, "importance.csv"), "w",
              encoding="utf-8", newline="") as f:
        f.write("feature,percent\n")
        for name, pct in feature_importance(model):
            f.write(f"{name},{pct:.9g}\n")

    theta = float(args.threshold or DEFAULT_THRESHOLD)
    scores = _round9(model.predict(val_mx))
    sim = _round9(np.nan_to_num(val_sim, nan=0.0))
    labels = rank_eval.labels_from_table(val_tbl)
    pids = val_tbl.df["product_id"].to_numpy()
    plain = rank_eval.mrr(rank_eval.rank_all(
        val_mx.query_groups, pids, scores, sim, NO_FILTER_THRESHOLD), labels)
    filtered = rank_eval.mrr(rank_eval.rank_all(
        val_mx.query_groups, pids, scores, sim, theta), labels)
    print(f"mrr={plain:.4f} filtered={filtered:.4f} model={model_path}")
    return 0


def _load_prediction_inputs(args):
    """Shared by predict: model + featurized target rows + similarities."""
    model = load_model(args.model)
    table = dataset.load_impressions(args.impressions)
    catalog = dataset.load_catalog(args.catalog)
    ref = dataset.load_impressions(args.ref)
    ctx, norm = _context_from_model(model, ref, catalog)
    include_pcs = "pcs" in model.feature_names
    matrix, sim = _featurize(table, catalog, ctx, norm, include_pcs)
    scores = _round9(model.predict(matrix))
    sim = _round9(np.nan_to_num(sim, nan=0.0))
    return model, table, matrix, scores, sim


def cmd_predict(args) -> int:
    _merge_config(args, ["model", "impressions", "catalog", "ref",
                         "threshold", "out"])
    _, table, matrix, scores, sim = _load_prediction_inputs(args)
    theta = float(args.threshold or DEFAULT_THRESHOLD)
    rankings = rank_eval.rank_all(
        matrix.query_groups, table.df["product_id"].to_numpy(), scores, sim, theta)
    out = args.out or "predictions.csv"
    rank_eval.write_predictions(rankings, out)
    n_filtered = sum(r.filter_applied for r in rankings)
    print(f"queries={len(rankings)} filtered={n_filtered} out={out}")
    return 0


def _read_predictions(path: str):
    df = pd.read_csv(path, dtype={"query_id": str, "product_id": str})
    groups = []
    qids = df["query_id"].to_numpy()
    start = 0
    for i in range(1, len(qids) + 1):
        if i == len(qids) or qids[i] != qids[start]:
            groups.append((qids[start], start, i))
            start = i
    return df, groups


def cmd_evaluate(args) -> int:
    _merge_config(args, ["predictions", "impressions", "threshold"])
    df, groups = _read_predictions(args.predictions)
    labeled = dataset.load_impressions(args.impressions)
    labels = rank_eval.labels_from_table(labeled)
    theta = float(args.threshold or DEFAULT_THRESHOLD)
    pids = df["product_id"].to_numpy()
    scores = df["score"].to_numpy()
    sim = df["pcs"].to_numpy()
    plain = rank_eval.mrr(rank_eval.rank_all(
        groups, pids, scores, sim, NO_FILTER_THRESHOLD), labels)
    filtered = rank_eval.mrr(rank_eval.rank_all(groups, pids, scores, sim, theta), labels)
    print(f"mrr={plain:.4f} filtered={filtered:.4f}")
    return 0


def cmd_sweep(args) -> int:
    _merge_config(args, ["predictions", "impressions", "grid", "out"])
    df, groups = _read_predictions(args.predictions)
    labeled = dataset.load_impressions(args.impressions)
    labels = rank_eval.labels_from_table(labeled)
    grid = rank_eval.parse_grid(args.grid) if args.grid else rank_eval.DEFAULT_GRID
    curve = rank_eval.threshold_sweep(
        groups, df["product_id"].to_numpy(), df["score"].to_numpy(),
        df["pcs"].to_numpy(), labels, grid)
    out = args.out or "sweep.csv"
    rank_eval.write_sweep(curve, out)
    theta, best = curve.best
    print(f"best_threshold={theta:.4g} mrr={best:.4f} out={out}")
    return 0


def cmd_tune(args) -> int:
    _merge_config(args, ["impressions", "catalog", "budget", "seed", "out",
                         "objective", "n_estimators", "val_queries"])
    objective = {"classify": "classification", "rank": "lambdarank"}.get(
        args.objective or "classify")
    table = dataset.load_impressions(args.impressions)
    catalog = dataset.load_catalog(args.catalog)
    n_val = int(args.val_queries or max(1, len(table.query_ids()) // 10))
    seed = int(args.seed or 0)
    train_tbl, val_tbl = dataset.split_by_query(table, SplitSpec(n_val, seed))
    ctx = FeatureContext(train_tbl, catalog)
    norm = normalize_numerics(catalog)
    train_mx, _ = _featurize(train_tbl, catalog, ctx, norm, True)
    val_mx, _ = _featurize(val_tbl, catalog, ctx, norm, True)
    y_train = train_tbl.df["is_click"].to_numpy()
    y_val = val_tbl.df["is_click"].to_numpy()
    n_est = int(args.n_estimators or 50)

    def objective_fn(params: dict) -> float:
        bp = BoostParams(n_estimators=n_est, seed=seed, **params)
        model = train_model(train_mx, y_train, train_mx.query_groups, bp, objective)
        scores = model.predict(val_mx)
        return rank_eval.mrr_from_scores(
            scores, y_val, [(s, e) for _, s, e in val_mx.query_groups])

    best, history = tune_mod.tune(
        objective_fn, tune_mod.default_space(), int(args.budget or 25),
        seed=seed, history_path=args.out or "tune_history.txt",
        resume=args.resume, random_only=args.random_only)
    print(f"trials={len(history)} best_mrr={history.incumbent.mrr:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxrank",
                                description="Context-aware product ranking pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", help="random seed")
        sp.add_argument("--out", help="output file or directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker count; results are independent of it")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(sp)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--users")
    sp.add_argument("--sessions")
    sp.add_argument("--products")
    sp.add_argument("--weeks")
    sp.add_argument("--weights", help="price,context,popularity weights")
    sp.add_argument("--noise", help="click softmax temperature")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("featurize", help="dump the feature matrix")
    add_common(sp)
    sp.add_argument("--impressions")
    sp.add_argument("--catalog")
    sp.add_argument("--ref", help="labeled reference impressions for click stats")
    sp.add_argument("--no-pcs-feature", action="store_true", dest="no_pcs_feature")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train a boosted model")
    add_common(sp)
    sp.add_argument("--impressions")
    sp.add_argument("--catalog")
    sp.add_argument("--objective", choices=["classify", "rank"])
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--n-estimators", dest="n_estimators")
    sp.add_argument("--val-queries", dest="val_queries")
    sp.add_argument("--threshold")
    sp.add_argument("--no-pcs-feature", action="store_true", dest="no_pcs_feature")
    for name in ("learning_rate", "max_leaves", "max_depth", "subsample",
                 "colsample_bytree", "colsample_bylevel", "reg_alpha",
                 "reg_lambda", "scale_pos_weight", "min_child_weight",
                 "min_split_gain", "bagging_freq", "histogram_bins"):
        sp.add_argument(f"--{name.replace('_', '-')}", dest=name)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="rank impressions with a saved model")
    add_common(sp)
    sp.add_argument("--model")
    sp.add_argument("--impressions")
    sp.add_argument("--catalog")
    sp.add_argument("--ref")
    sp.add_argument("--threshold")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="MRR of a predictions file")
    add_common(sp)
    sp.add_argument("--predictions")
    sp.add_argument("--impressions", help="labeled impressions")
    sp.add_argument("--threshold")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="threshold ablation sweep")
    add_common(sp)
    sp.add_argument("--predictions")
    sp.add_argument("--impressions")
    sp.add_argument("--grid", help="start:stop:step")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("tune", help="Bayesian hyperparameter search")
    add_common(sp)
    sp.add_argument("--impressions")
    sp.add_argument("--catalog")
    sp.add_argument("--budget")
    sp.add_argument("--objective", choices=["classify", "rank"])
    sp.add_argument("--n-estimators", dest="n_estimators")
    sp.add_argument("--val-queries", dest="val_queries")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--random-only", action="store_true", dest="random_only")
    sp.set_defaults(func=cmd_tune)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

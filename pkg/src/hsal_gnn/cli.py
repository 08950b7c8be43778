"""Command-line entry point: generate, ingest, train, eval, sweep, dump-subgraph.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .data import (MODES, DataConfigError, Dataset, SyntheticConfig, generate_synthetic, infer_series_by_title,
                   leave_one_out, load_interactions, load_series, write_interactions, write_series)
from .encoding import KINDS, EncodingConfigError
from .evaluation import DEFAULT_KS, EvalConfig, RankingReport, evaluate
from .graph import CatalogError, IngestionError, NodeLookupError, build_graph
from .model import FUSIONS, ModelConfigError
from .sampling import SamplingConfig, SamplingError, sample_subgraph
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("hsal_gnn")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

PUBLISHED = "published setting"
REPO = "repo decision"

SWEEP_AXES = ("layers", "n_sequences", "seq_length", "fusion", "positional")


class ConfigError(ValueError):
    pass


def _default(value, source: str) -> str:
    return f"[default {value}; {source}]"


# ---------------------------------------------------------------------------
# argument groups


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="directory holding interactions.csv and series.csv")
    g.add_argument("--interactions", type=Path, help="interaction file (overrides --data)")
    g.add_argument("--series", type=Path, help="series catalog file (overrides --data)")
    g.add_argument("--format", choices=("csv", "movielens"), default="csv",
                   help="interaction file layout " + _default("csv", REPO))
    g.add_argument("--tolerance", type=float, default=0.0,
                   help="allowed fraction of malformed rows " + _default(0.0, REPO))
    g.add_argument("--sample-users", type=int, default=None,
                   help="keep only the N most active users " + _default("all users", REPO))


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and optimizer")
    g.add_argument("--d", type=int, default=50, help="embedding size " + _default(50, PUBLISHED))
    g.add_argument("--layers", type=int, default=3,
                   help="propagation layers (tuned per dataset) " + _default(3, REPO))
    g.add_argument("--m", type=int, default=4, help="sub-graph expansion rounds " + _default(4, PUBLISHED))
    g.add_argument("--recent-n", type=int, default=50,
                   help="maximum sequence length " + _default(50, PUBLISHED))
    g.add_argument("--lr", type=float, default=0.01, help="Adam learning rate " + _default(0.01, PUBLISHED))
    g.add_argument("--batch-size", type=int, default=50, help=_default(50, PUBLISHED))
    g.add_argument("--weight-decay", type=float, default=1e-4,
                   help="L2 coefficient " + _default(1e-4, PUBLISHED))
    g.add_argument("--epochs", type=int, default=50, help="maximum epochs " + _default(50, REPO))
    g.add_argument("--patience", type=int, default=5,
                   help="early-stopping patience on validation Hit@10 " + _default(5, REPO))
    g.add_argument("--epochs-exact", action="store_true", help="disable early stopping")
    g.add_argument("--fusion", choices=FUSIONS, default="sum", help=_default("sum", REPO))
    g.add_argument("--positional", choices=KINDS, default="sinusoidal", help=_default("sinusoidal", REPO))
    g.add_argument("--gcn-baseline", action="store_true",
                   help="replace attention propagation with mean aggregation")
    g.add_argument("--no-sequels", action="store_true", help="drop the series catalog (ablation)")
    g.add_argument("--init-std", type=float, default=0.01, help="N(0, s^2) initialization " + _default(0.01, REPO))


def _add_seed_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="run a single seed")
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated seeds; mean and per-seed values are reported "
                        + _default("0,1,2,3,4 (five runs)", PUBLISHED))


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", default=",".join(map(str, DEFAULT_KS)), help="cutoffs " + _default("5,10,20", PUBLISHED))
    p.add_argument("--no-exclude-seen", action="store_true",
                   help="keep the user's train/validation items among the candidates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsal-gnn",
        description="Sequel-aware graph recommender: data generation, training and evaluation.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Every command accepts --config FILE with flat 'key = value' lines named after the long "
               "flags (dashes or underscores); flags given on the command line win.\n"
               "Defaults are tagged '" + PUBLISHED + "' or '" + REPO + "'.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--mode", choices=MODES, default="mixed", help=_default("mixed", REPO))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-users", type=int, default=10_000, help=_default("10000", PUBLISHED))
    p.add_argument("--n-items", type=int, default=500, help=_default(500, PUBLISHED))
    p.add_argument("--n-sequential-items", type=int, default=250, help=_default(250, PUBLISHED))
    p.add_argument("--n-series", default="20,30", help="min,max number of series " + _default("20,30", PUBLISHED))
    p.add_argument("--items-per-user", default="10,15", help="min,max " + _default("10,15", PUBLISHED))
    p.add_argument("--popularity-exponent", type=float, default=1.5, help=_default(1.5, REPO))
    p.add_argument("--continuation-prob", type=float, default=0.8, help=_default(0.8, REPO))
    p.add_argument("--even-series", action="store_true", help="split sequel items into equal-length series")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ingest", help="normalize an interaction log and series catalog")
    _add_data_args(p)
    p.add_argument("--titles", type=Path, help="item_id,title CSV used to infer series by title")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model per seed")
    _add_data_args(p)
    _add_model_args(p)
    _add_seed_args(p)
    _add_eval_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    _add_data_args(p)
    _add_eval_args(p)
    p.add_argument("--checkpoint", type=Path, nargs="+", required=True)
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--dump-ranks", type=Path, help="per-user CSV of ranks and metrics")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("sweep", help="train and evaluate across a grid of one setting")
    _add_data_args(p)
    _add_model_args(p)
    _add_seed_args(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--grid", required=True, help="comma-separated axis values")
    p.add_argument("--mode", choices=MODES, default="mixed",
                   help="synthetic mode used when the n_sequences axis regenerates data")
    p.add_argument("--n-users", type=int, default=10_000)
    p.add_argument("--n-items", type=int, default=500)
    p.add_argument("--n-sequential-items", type=int, default=250)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("dump-subgraph", help="print the sampled sub-graph of one user as JSON")
    _add_data_args(p)
    p.add_argument("--user", required=True, help="user id as it appears in the interaction file")
    p.add_argument("--t", type=float, default=math.inf, help="snapshot time (edges strictly before)")
    p.add_argument("--m", type=int, default=4, help=_default(4, PUBLISHED))
    p.add_argument("--recent-n", type=int, default=50, help=_default(50, PUBLISHED))

    for action in sub.choices.values():
        action.add_argument("--config", type=Path, help="flat key = value config file")
    return parser


# ---------------------------------------------------------------------------
# config file


def read_config_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _explicit_dests(sub: argparse.ArgumentParser, argv: list[str]) -> set[str]:
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    return {a.dest for a in sub._actions if any(o in given for o in a.option_strings)}


def apply_config(args: argparse.Namespace, sub: argparse.ArgumentParser, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    values = read_config_file(args.config)
    actions = {a.dest: a for a in sub._actions}
    explicit = _explicit_dests(sub, argv)
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise ConfigError(f"{args.config}: unknown key {key!r}")
        if key in explicit:
            continue
        if isinstance(act, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{args.config}: {key} expects true/false, got {raw!r}")
            value = raw.lower() in ("true", "1", "yes")
        else:
            try:
                value = act.type(raw) if act.type else raw
            except ValueError as exc:
                raise ConfigError(f"{args.config}: bad value for {key}: {exc}") from None
            if act.choices and value not in act.choices:
                raise ConfigError(f"{args.config}: {key} must be one of {list(act.choices)}")
        setattr(args, key, value)


# ---------------------------------------------------------------------------
# helpers


def _int_list(text: str, what: str) -> list[int]:
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{what}: empty list")
    return vals


def _pair(text: str, what: str) -> tuple[int, int]:
    vals = _int_list(text, what)
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) != 2:
        raise ConfigError(f"{what}: expected 'min,max'")
    return vals[0], vals[1]


def seeds_of(args) -> list[int]:
    return [args.seed] if args.seed is not None else _int_list(args.seeds, "--seeds")


def load_dataset(args) -> Dataset:
    inter = args.interactions or (args.data / "interactions.csv" if args.data else None)
    if inter is None:
        raise ConfigError("pass --data DIR or --interactions FILE")
    series = args.series or (args.data / "series.csv" if args.data else None)
    ds = load_interactions(inter, fmt=args.format, tolerance=args.tolerance, sample_users=args.sample_users)
    if ds.malformed_rows:
        side = Path(str(inter) + ".malformed.txt")
        side.write_text("".join(f"{n}\n" for n in ds.malformed_rows))
        log.warning("%d malformed row(s) skipped; line numbers in %s", len(ds.malformed_rows), side)
    if series is not None and Path(series).exists():
        names = list(ds.item_names)
        catalog = load_series(series, names)  # items absent from the log are appended to names
        ds = Dataset(ds.interactions, catalog, ds.n_users, len(names), ds.user_names, names, ds.malformed_rows)
    elif args.series is not None:
        raise FileNotFoundError(f"series file {series} not found")
    return ds


def train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        d=args.d, n_layers=args.layers, m=args.m, recent_n=args.recent_n, lr=args.lr,
        batch_size=args.batch_size, weight_decay=args.weight_decay, epochs=args.epochs,
        patience=args.patience, epochs_exact=args.epochs_exact, fusion=args.fusion,
        positional=args.positional, propagation="gcn" if args.gcn_baseline else "hsal",
        use_sequels=not args.no_sequels, init_std=args.init_std, seed=seed,
    )


def _check_train_config(cfg: TrainConfig) -> None:
    for name in ("d", "n_layers", "recent_n", "batch_size", "epochs", "patience"):
        if getattr(cfg, name) < (0 if name == "n_layers" else 1):
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.lr <= 0 or cfg.weight_decay < 0:
        raise ConfigError("lr must be > 0 and weight_decay >= 0")


def _mean_report(reports: list[RankingReport]) -> dict:
    ks = sorted(reports[0].hit)
    return {
        "hit": {f"@{k}": float(np.mean([r.hit[k] for r in reports])) for k in ks},
        "ndcg": {f"@{k}": float(np.mean([r.ndcg[k] for r in reports])) for k in ks},
    }


def _print_multi(seeds: list[int], reports: list[RankingReport]) -> None:
    ks = sorted(reports[0].hit)
    cols = [f"Hit@{k}" for k in ks] + [f"NDCG@{k}" for k in ks]
    print(f"{'seed':<8}" + "".join(f"{c:>10}" for c in cols))
    for s, r in zip(seeds, reports):
        print(f"{s:<8}" + "".join(f"{v:>10.4f}" for v in [r.hit[k] for k in ks] + [r.ndcg[k] for k in ks]))
    if len(reports) > 1:
        m = _mean_report(reports)
        vals = [m["hit"][f"@{k}"] for k in ks] + [m["ndcg"][f"@{k}"] for k in ks]
        print(f"{'mean':<8}" + "".join(f"{v:>10.4f}" for v in vals))


def _write_report(report: RankingReport, stem: Path) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(str(stem) + ".json").write_text(report.to_json() + "\n")
    Path(str(stem) + ".txt").write_text(report.table() + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        n_users=args.n_users, n_items=args.n_items, n_sequential_items=args.n_sequential_items,
        n_series_range=_pair(args.n_series, "--n-series"),
        items_per_user_range=_pair(args.items_per_user, "--items-per-user"),
        max_interactions_per_user=max(15, _pair(args.items_per_user, "--items-per-user")[1]),
        mode=args.mode, popularity_exponent=args.popularity_exponent,
        continuation_prob=args.continuation_prob, even_series=args.even_series, seed=args.seed,
    )
    ds = generate_synthetic(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_interactions(ds, args.out / "interactions.csv")
    write_series(ds.series_catalog, args.out / "series.csv", ds.item_names)
    echo = asdict(cfg)
    echo["n_interactions"] = len(ds.interactions)
    echo["sequel_fraction"] = round(ds.sequel_fraction(), 6)
    (args.out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    print(f"{ds.n_users} users, {ds.n_items} items, {len(ds.interactions)} interactions, "
          f"{len(ds.series_catalog)} series -> {args.out}")
    return 0


def cmd_ingest(args) -> int:
    ds = load_dataset(args)
    catalog = ds.series_catalog
    if args.titles:
        titles = {}
        index = {name: k for k, name in enumerate(ds.item_names)}
        with open(args.titles, newline="") as fh:
            for row in csv.reader(fh):
                if len(row) >= 2 and row[0].strip() in index:
                    titles[index[row[0].strip()]] = ",".join(row[1:]).strip()
        inferred = infer_series_by_title(titles)
        log.info("inferred %d series from titles", len(inferred))
        catalog = list(catalog) + inferred
    build_graph(ds.interactions, catalog, n_users=ds.n_users, n_items=ds.n_items)
    args.out.mkdir(parents=True, exist_ok=True)
    write_interactions(ds, args.out / "interactions.csv")
    write_series(catalog, args.out / "series.csv", ds.item_names)
    (args.out / "malformed_rows.txt").write_text("".join(f"{n}\n" for n in ds.malformed_rows))
    print(f"{ds.n_users} users, {ds.n_items} items, {len(ds.interactions)} interactions, "
          f"{len(catalog)} series, {len(ds.malformed_rows)} malformed rows -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args)
    split = leave_one_out(ds)
    ks = tuple(_int_list(args.k, "--k"))
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = seeds_of(args)
    reports, status = [], 0
    for seed in seeds:
        cfg = train_config(args, seed)
        _check_train_config(cfg)
        log_path = args.out / f"train_seed{seed}.jsonl"
        log_path.write_text("")

        def append(entry, path=log_path):
            with open(path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

        result = train(ds, cfg, split, on_epoch=append)
        save_checkpoint(args.out / f"model_seed{seed}.ckpt", result.params, cfg)
        if result.diverged:
            log.error("seed %d diverged; kept the last good parameters in %s", seed,
                      args.out / f"model_seed{seed}.ckpt")
            status = EXIT_NUMERIC
            continue
        sampling = cfg.sampling_config()
        data = ds if cfg.use_sequels else ds.without_series()
        report = evaluate(result.params, split, data, sampling,
                          EvalConfig(ks=ks, exclude_seen=not args.no_exclude_seen))
        report.metadata.update(seed=seed, best_epoch=result.best_epoch, stopped_early=result.stopped_early)
        _write_report(report, args.out / f"report_seed{seed}")
        reports.append(report)
    if reports:
        _print_multi([s for s in seeds][: len(reports)], reports)
        summary = {"seeds": seeds, "mean": _mean_report(reports),
                   "per_seed": [{"seed": r.metadata["seed"], "hit": {f"@{k}": r.hit[k] for k in ks},
                                 "ndcg": {f"@{k}": r.ndcg[k] for k in ks}} for r in reports]}
        (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return status


def cmd_eval(args) -> int:
    ds = load_dataset(args)
    split = leave_one_out(ds)
    ks = tuple(_int_list(args.k, "--k"))
    reports, names = [], []
    for path in args.checkpoint:
        params, tcfg = load_checkpoint(path)
        sampling = tcfg.sampling_config() if tcfg else SamplingConfig(recent_n=params.cfg.max_order)
        data = ds if (tcfg is None or tcfg.use_sequels) else ds.without_series()
        if (params.cfg.n_users, params.cfg.n_items) != (ds.n_users, ds.n_items):
            raise DataConfigError(f"{path}: checkpoint expects {params.cfg.n_users} users / "
                                  f"{params.cfg.n_items} items, data has {ds.n_users} / {ds.n_items}")
        report = evaluate(params, split, data, sampling,
                          EvalConfig(ks=ks, exclude_seen=not args.no_exclude_seen), on=args.split)
        report.metadata["checkpoint"] = str(path)
        reports.append(report)
        names.append(Path(path).stem)
        if args.out:
            _write_report(report, args.out / f"report_{Path(path).stem}")
    if len(reports) == 1:
        print(reports[0].table())
    else:
        print(f"{'run':<8}" + "".join(f"{c:>10}" for c in [f"Hit@{k}" for k in ks] + [f"NDCG@{k}" for k in ks]))
        for name, r in zip(names, reports):
            print(f"{name[:8]:<8}" + "".join(f"{v:>10.4f}" for v in [r.hit[k] for k in ks] + [r.ndcg[k] for k in ks]))
        m = _mean_report(reports)
        print(f"{'mean':<8}" + "".join(f"{v:>10.4f}" for v in
                                      [m["hit"][f"@{k}"] for k in ks] + [m["ndcg"][f"@{k}"] for k in ks]))
    if args.dump_ranks:
        with open(args.dump_ranks, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "user", "rank"] + [f"hit@{k}" for k in ks] + [f"ndcg@{k}" for k in ks])
            for name, r in zip(names, reports):
                for u in sorted(r.ranks):
                    rank = r.ranks[u]
                    w.writerow([name, ds.user_names[u], rank]
                               + [int(rank <= k) for k in ks]
                               + [repr(1.0 / math.log2(rank + 1) if rank <= k else 0.0) for k in ks])
    return 0


def _sweep_point(task):
    axis, value, seed, base, ds_or_synth = task
    cfg = base
    if axis == "layers":
        cfg = replace(base, n_layers=int(value))
    elif axis == "seq_length":
        cfg = replace(base, recent_n=int(value))
    elif axis == "fusion":
        cfg = replace(base, fusion=value)
    elif axis == "positional":
        cfg = replace(base, positional=value)
    cfg = replace(cfg, seed=seed)
    if axis == "n_sequences":
        ds = generate_synthetic(replace(ds_or_synth, n_series_range=(int(value), int(value))))
    else:
        ds = ds_or_synth
    split = leave_one_out(ds)
    result = train(ds, cfg, split)
    if result.diverged:
        raise tc.NumericError("training diverged")
    data = ds if cfg.use_sequels else ds.without_series()
    rep = evaluate(result.params, split, data, cfg.sampling_config(), EvalConfig(ks=(10,)))
    return rep.hit[10], rep.ndcg[10]


def cmd_sweep(args) -> int:
    grid = [g.strip() for g in args.grid.split(",") if g.strip()]
    if not grid:
        raise ConfigError("--grid is empty")
    valid = {"fusion": FUSIONS, "positional": KINDS}.get(args.axis)
    for g in grid:
        if valid is not None and g not in valid:
            raise ConfigError(f"--grid value {g!r} invalid for axis {args.axis}; choose from {list(valid)}")
        if valid is None and not g.lstrip("-").isdigit():
            raise ConfigError(f"--grid value {g!r} must be an integer for axis {args.axis}")
    seeds = seeds_of(args)
    base = train_config(args, 0)
    _check_train_config(base)
    if args.axis == "n_sequences":
        source = SyntheticConfig(n_users=args.n_users, n_items=args.n_items,
                                 n_sequential_items=args.n_sequential_items, mode=args.mode)
    else:
        source = load_dataset(args)
    tasks = [(args.axis, g, s, base, source) for g in grid for s in seeds]
    args.out.mkdir(parents=True, exist_ok=True)
    failures = []
    rows = []

    def record(task, outcome):
        _, value, seed, _, _ = task
        if isinstance(outcome, Exception):
            failures.append(f"{args.axis}={value} seed={seed}: {type(outcome).__name__}: {outcome}")
            rows.append([value, seed, "nan", "nan"])
        else:
            rows.append([value, seed, repr(outcome[0]), repr(outcome[1])])

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_sweep_point, t) for t in tasks]
            for t, f in zip(tasks, futures):
                try:
                    record(t, f.result())
                except Exception as exc:  # per-point failures do not stop the sweep
                    record(t, exc)
    else:
        for t in tasks:
            try:
                record(t, _sweep_point(t))
            except Exception as exc:
                record(t, exc)
    with open(args.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.axis, "seed", "hit@10", "ndcg@10"])
        w.writerows(rows)
    (args.out / "sweep_failures.txt").write_text("".join(f + "\n" for f in failures))
    for r in rows:
        print(",".join(map(str, r)))
    if failures:
        log.warning("%d sweep point(s) failed; see %s", len(failures), args.out / "sweep_failures.txt")
    return 0


def cmd_dump_subgraph(args) -> int:
    ds = load_dataset(args)
    graph = build_graph(ds.interactions, ds.series_catalog, n_users=ds.n_users, n_items=ds.n_items)
    try:
        u = ds.user_names.index(args.user)
    except ValueError:
        raise NodeLookupError(f"unknown user {args.user!r}") from None
    sg = sample_subgraph(graph.snapshot(args.t), u, None, SamplingConfig(m=args.m, recent_n=args.recent_n))
    out = {
        "user": args.user,
        "t": None if math.isinf(args.t) else args.t,
        "rounds": sg.rounds,
        "users": [ds.user_names[v] for v in sg.users],
        "items": [ds.item_names[i] for i in sg.items],
        "history": [ds.item_names[i] for i in sg.history],
        "user_item_edges": [[ds.user_names[a], ds.item_names[b], t] for a, b, t in sg.user_item_edges(graph)],
        "sequel_edges": [[ds.item_names[e.from_item], ds.item_names[e.to_item], str(e.series), e.position]
                         for e in sg.sequel_edges],
    }
    print(json.dumps(out, indent=2))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "dump-subgraph": cmd_dump_subgraph,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        apply_config(args, sub, argv)
        return COMMANDS[args.command](args)
    except (ConfigError, DataConfigError, ModelConfigError, EncodingConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, CatalogError, NodeLookupError, SamplingError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except tc.NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

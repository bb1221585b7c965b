"""Command line: ``survlime {synth,fit,explain,bench}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import run_bench, write_bench
from .core import SurvivalDataError, build_time_grid, concordance_index, nelson_aalen
from .cox import CoxFitError, CoxModel, fit_cox
from .explainer import ExplainConfig, ExplanationError, explain
from .forest import ForestConfig, fit_forest
from .io import dump_json, load_model, load_schema, read_csv, save_model, write_csv
from .synth import ClusterSpec, default_specs, generate_dataset

DEFAULT_SEED = 20200101
EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

log = logging.getLogger("survlime")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_specs(args) -> list[ClusterSpec]:
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read cluster spec file: {exc}") from None
        specs = []
        for i, entry in enumerate(raw if isinstance(raw, list) else raw.get("clusters", [])):
            try:
                specs.append(ClusterSpec(
                    center=entry["center"], radius=entry["radius"], count=entry["count"],
                    lam=entry["lambda"], shape=entry["v"], b_true=entry["b_true"],
                    event_prob=entry.get("event_prob", 0.9),
                    clip_time=entry.get("clip_time", 2000.0)))
            except KeyError as exc:
                raise UsageError(f"cluster {i}: missing field {exc.args[0]}") from None
            except (TypeError, ValueError) as exc:
                raise UsageError(f"cluster {i}: {exc}") from None
        if not specs:
            raise UsageError("spec file defines no clusters")
        return specs
    specs = default_specs(args.count)
    try:
        chosen = [int(c) for c in args.clusters.split(",")]
    except ValueError:
        raise UsageError(f"--clusters: expected comma-separated indices, got {args.clusters!r}")
    if any(c not in (0, 1) for c in chosen):
        raise UsageError("--clusters: default clusters are 0 and 1")
    return [specs[c] for c in chosen]


def cmd_synth(args) -> int:
    specs = _load_specs(args)
    data = generate_dataset(specs, args.seed)
    out = Path(args.out)
    write_csv(data.dataset, out)
    dump_json(data.sidecar(), out.with_suffix(".truth.json"))
    ds = data.dataset
    print(f"n={ds.n} d={ds.d} event_rate={ds.event.mean():.4f} -> {out}")
    return 0


def _split(n, train_size, test_fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    if train_size is not None:
        if not 0 < train_size < n:
            raise UsageError(f"--train-size must lie in (0, {n})")
        k = train_size
    else:
        k = n - max(1, int(round(test_fraction * n)))
    return perm[:k], perm[k:]


def cmd_fit(args) -> int:
    ds = read_csv(args.dataset, load_schema(args.schema))
    train_idx, test_idx = _split(ds.n, args.train_size, args.test_fraction, args.seed)
    train, test = ds.subset(train_idx), ds.subset(test_idx)
    grid = build_time_grid(train)
    if args.model == "cox":
        model = fit_cox(train, grid=grid, standardize=args.standardize)
        risk = test.X @ model.coefficients
    else:
        cfg = ForestConfig(n_trees=args.trees, mtry=args.mtry,
                           min_leaf_events=args.min_leaf_events,
                           max_depth=args.max_depth, seed=args.seed, n_jobs=args.jobs)
        model = fit_forest(train, cfg, grid)
        risk = model.predict_risk(test.X)
    save_model(model, args.out, ds.feature_names)
    try:
        c = concordance_index(risk, test)
        print(f"model={args.model} n_train={train.n} n_test={test.n} c_index={c:.4f}")
    except SurvivalDataError:
        print(f"model={args.model} n_train={train.n} n_test={test.n} c_index=nan")
    return 0


def _query_point(args, ds):
    if args.x is not None:
        try:
            return np.array([float(v) for v in args.x.split(",")])
        except ValueError:
            raise UsageError(f"--x: expected comma-separated numbers, got {args.x!r}")
    if not 0 <= args.point < ds.n:
        raise UsageError(f"--point must lie in [0, {ds.n})")
    return ds.X[args.point]


def cmd_explain(args) -> int:
    model, names = load_model(args.model)
    ds = read_csv(args.dataset, load_schema(args.schema))
    d = model.d if isinstance(model, CoxModel) else model.n_features
    if ds.d != d:
        raise SurvivalDataError(f"dataset has {ds.d} features, model expects d={d}")
    missing = np.setdiff1d(model.grid.event_times, ds.time[ds.event == 1])
    if missing.size:
        raise SurvivalDataError(
            f"model time grid is not built from this dataset ({missing.size} unknown times)")
    x = _query_point(args, ds)
    if x.shape[0] != d:
        raise UsageError(f"query point has {x.shape[0]} values, expected d={d}")
    if isinstance(model, CoxModel) and args.baseline == "model":
        baseline = model.baseline_chf
    else:
        na = nelson_aalen(ds, model.grid)
        baseline = type(na)(model.grid, np.maximum(na.values, model.epsilon))
    cfg = ExplainConfig(n_points=args.n_points, radius=args.radius, seed=args.seed)
    e = explain(model, x, baseline, model.grid, cfg, names or ds.feature_names)
    out = Path(args.out)
    dump_json(e.to_dict(), out)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "blackbox_survival", "surrogate_survival"])
        for row in e.curve_rows():
            w.writerow([repr(v) for v in row])
    for n, b in zip(e.to_dict()["feature_names"], e.coefficients):
        print(f"{n}\t{b:.10g}")
    return 0


def cmd_bench(args) -> int:
    reports = run_bench(args.experiment, args.seed, args.trees, args.n_points, args.jobs)
    written = write_bench(args.experiment, reports, args.out)
    for path in written:
        if path.name.endswith("_table.csv"):
            print(f"# {path.name}")
            print(path.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survlime", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate clustered Weibull survival data")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--clusters", default="0,1")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--spec", help="JSON list of cluster specs")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a Cox or random survival forest black box")
    f.add_argument("--dataset", required=True)
    f.add_argument("--schema")
    f.add_argument("--model", choices=("cox", "rsf"), default="cox")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=DEFAULT_SEED)
    f.add_argument("--train-size", type=int)
    f.add_argument("--test-fraction", type=float, default=0.1)
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--trees", type=int, default=250)
    f.add_argument("--mtry", type=int)
    f.add_argument("--min-leaf-events", type=int, default=3)
    f.add_argument("--max-depth", type=int)
    f.add_argument("--jobs", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("explain", help="explain one prediction with a local Cox surrogate")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--schema")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--point", type=int)
    g.add_argument("--x", help="comma-separated covariate vector")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=DEFAULT_SEED)
    e.add_argument("--n-points", type=int, default=1000)
    e.add_argument("--radius", type=float, default=0.5)
    e.add_argument("--baseline", choices=("model", "nelson-aalen"), default="model",
                   help="surrogate baseline for Cox models (forests always use nelson-aalen)")
    e.set_defaults(func=cmd_explain)

    b = sub.add_parser("bench", help="reproduce a synthetic experiment")
    b.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--out", required=True)
    b.add_argument("--trees", type=int, default=250)
    b.add_argument("--n-points", type=int, default=1000)
    b.add_argument("--jobs", type=int, default=1, help="threads for per-point explanations")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, SurvivalDataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CoxFitError, ExplanationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

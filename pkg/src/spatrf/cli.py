"""Command-line interface: fit, predict, cv, simulate, bench.

Exit codes: 0 success, 1 usage error, 2 runtime error. All randomized
commands are reproducible from --seed; SPATRF_THREADS caps tree-fitting
workers (0 = all cores, unset = serial).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .bench import bench_split_scan
from .data import load_csv, write_predictions
from .harness import METHODS, cross_validate, make_fitter
from .persist import load_model, save_model
from .simulation import run_experiment


def _parse_float_list(raw: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in raw.split(",") if v.strip() != ""])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}")


def _parse_int_list(raw: str) -> list[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="training CSV path")
    p.add_argument("--coords", default="x,y", help="comma-separated coordinate columns")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--id-col", default=None, help="id column (default: 'id' if present)")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--trees", type=int, default=200, help="trees per forest")
    p.add_argument("--mtry", type=int, default=None, help="covariates sampled per split")
    p.add_argument("--min-node", type=int, default=5, help="minimum terminal node size")
    p.add_argument("--knots", type=int, default=None, help="spatial basis knot count")
    p.add_argument("--delta-grid", type=_parse_float_list, default=None,
                   help="comma-separated delta grid, e.g. 0,0.2,0.4")
    p.add_argument("--lambda-grid", type=_parse_float_list, default=None,
                   help="comma-separated smoother penalty grid")
    p.add_argument("--seed", type=int, default=0)


def _fitter_from_args(args):
    return make_fitter(
        args.method, n_trees=args.trees, mtry=args.mtry,
        min_node_size=args.min_node, n_knots=args.knots,
        delta_grid=args.delta_grid, lambda_grid=args.lambda_grid,
    )


def _cmd_fit(args) -> int:
    data = load_csv(args.data, args.coords.split(","), args.response, args.id_col)
    model = _fitter_from_args(args)(data, args.seed)
    save_model(model, args.out, covariate_names=data.covariate_names,
               coord_names=data.coord_names, response_name=data.response_name,
               seed=args.seed)
    print(f"saved {args.method} model to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    model, meta = load_model(args.model)
    cols = meta["column_names"]
    coord_cols = args.coords.split(",") if args.coords else cols["coords"]
    # response column is optional at prediction time; reuse it only if present
    with open(args.data, newline="") as fh:
        header = next(csv.reader(fh))
    response = cols["response"] if cols["response"] in header else None
    data = load_csv(args.data, coord_cols, response, args.id_col)
    missing = [c for c in cols["covariates"] if c not in data.covariate_names]
    if missing:
        raise ValueError(f"prediction data lacks covariate column(s): {missing}")
    idx = [data.covariate_names.index(c) for c in cols["covariates"]]
    preds = model.predict(data.X[:, idx], data.coords)
    write_predictions(args.out, data.ids, preds)
    print(f"wrote {len(data.ids)} predictions to {args.out}")
    return 0


def _cmd_cv(args) -> int:
    data = load_csv(args.data, args.coords.split(","), args.response, args.id_col)
    scores, mean = cross_validate(data, _fitter_from_args(args),
                                  k_folds=args.folds, n_repeats=args.repeats,
                                  seed=args.seed)
    for i, s in enumerate(scores):
        print(f"repeat {i}: r2 = {s:.6f}")
    print(f"mean r2 = {mean:.6f}")
    return 0


def _cmd_simulate(args) -> int:
    scenarios = ["strong", "weak"] if args.scenario == "both" else [args.scenario]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    os.makedirs(args.out, exist_ok=True)
    all_cells = []
    summary = {}
    for sc in scenarios:
        res = run_experiment(
            n_surfaces=args.surfaces, n_replicates=args.replicates,
            methods=methods, seed=args.seed, scenario=sc,
            n_train=args.train, n_validate=args.validate,
            n_trees=args.trees,
            delta_grid=args.delta_grid,
        )
        all_cells.extend(res.cells)
        summary.update(res.summary)
    from .simulation import ExperimentResult

    combined = ExperimentResult(cells=all_cells, summary=summary)
    combined.write_results_csv(os.path.join(args.out, "results.csv"))
    combined.write_summary_csv(os.path.join(args.out, "summary.csv"))
    for (method, sc), mean in sorted(summary.items()):
        print(f"{sc:8s} {method:10s} mean r2 = {mean:.4f}")
    print(f"wrote {args.out}/results.csv and {args.out}/summary.csv")
    return 0


def _cmd_bench(args) -> int:
    rows = bench_split_scan(args.sizes, seed=args.seed, repeats=args.repeats)
    header = ["n", "incremental_sweep_s", "naive_sweep_s",
              "incremental_per_candidate_s", "naive_per_candidate_s"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in rows:
                writer.writerow([r[h] for h in header])
    for r in rows:
        print(f"n={r['n']:6d}  incremental={r['incremental_sweep_s']:.6f}s  "
              f"naive={r['naive_sweep_s']:.6f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatrf",
        description="Random spatial forests: spatial prediction with "
                    "correlation-adjusted tree ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model and save it")
    _add_fit_options(p_fit)
    p_fit.add_argument("--out", required=True, help="output model file (JSON)")
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="predict from a saved model")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--coords", default=None,
                        help="coordinate columns (default: from the model)")
    p_pred.add_argument("--id-col", default=None)
    p_pred.add_argument("--out", required=True, help="output CSV (id,prediction)")
    p_pred.set_defaults(func=_cmd_predict)

    p_cv = sub.add_parser("cv", help="repeated k-fold cross-validation")
    _add_fit_options(p_cv)
    p_cv.add_argument("--folds", type=int, default=10)
    p_cv.add_argument("--repeats", type=int, default=10)
    p_cv.set_defaults(func=_cmd_cv)

    p_sim = sub.add_parser("simulate", help="synthetic method comparison")
    p_sim.add_argument("--surfaces", type=int, default=20)
    p_sim.add_argument("--replicates", type=int, default=5)
    p_sim.add_argument("--scenario", choices=["strong", "weak", "both"],
                       default="both")
    p_sim.add_argument("--methods",
                       default="rf,smoother,rf-smooth,smooth-rf,sprf-np")
    p_sim.add_argument("--trees", type=int, default=200)
    p_sim.add_argument("--train", type=int, default=150)
    p_sim.add_argument("--validate", type=int, default=200)
    p_sim.add_argument("--delta-grid", type=_parse_float_list, default=None)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_bench = sub.add_parser("bench", help="split-scan timing vs size")
    p_bench.add_argument("--sizes", type=_parse_int_list, default=[250, 500, 1000, 2000])
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, help="optional timing CSV path")
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

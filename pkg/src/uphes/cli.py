"""Command-line entry point.

Every subcommand is a thin composition of library calls.  Exit codes are 0 on
success, 1 for invalid input, 2 for file-system errors and 3 for numerical
failures; diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approx import approx_error_report, build_sos2_grid, fit_global, write_error_report
from .baselines import (SolverShim, build_miqp_gl, build_miqp_pw, default_dp_grid, dp_schedule,
                        export_model, mip_schedule, solve_mip)
from .data import kmedoids, load_prices, load_scenarios, save_prices, save_scenarios, synthetic_prices
from .errors import SolverError
from .penalty_net import (FeatureNorm, build_features, init_params, load_checkpoint,
                          predict_weights, save_checkpoint)
from .plant import (PlantConfig, load_config, load_model, load_samples, save_model,
                    save_samples, synth_upc_dataset, upc_fit)
from .qp import recursive_refine
from .simulator import evaluate_schedule
from .training import (VARIANTS, TrainConfig, baseline_schedules, error_points, evaluate,
                       make_samples, noise_curve, summarize, train, write_records, write_report)

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
SCHEMA_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _config(path) -> PlantConfig:
    return load_config(path) if path else PlantConfig()


def _model(path, config):
    if path:
        return load_model(path)
    from .plant import default_model
    return default_model(config)


def _scenario(path, index: int):
    scs = load_scenarios(path)
    if not 0 <= index < len(scs):
        raise ValueError(f"scenario index {index} outside [0, {len(scs)})")
    return scs[index]


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_gen_data(a) -> int:
    config = _config(a.config)
    samples = synth_upc_dataset(config, n_p=a.n_p, n_h=a.n_h, noise=a.noise, seed=a.seed)
    save_samples(samples, a.out)
    print(f"wrote {len(samples)} samples to {a.out}")
    return EXIT_OK


def cmd_fit_upc(a) -> int:
    model = upc_fit(load_samples(a.samples), a.degree)
    save_model(model, a.out)
    for m, r2 in sorted(model.r2.items()):
        print(f"R2 {m.name.lower()} {r2:.6f}")
    return EXIT_OK


def cmd_gen_prices(a) -> int:
    hist = synthetic_prices(a.year, a.seed)
    save_prices(hist, a.out, a.format)
    print(f"wrote {len(hist.dates)} days to {a.out}")
    return EXIT_OK


def cmd_cluster(a) -> int:
    scs, res = kmedoids(load_prices(a.prices, a.format), a.k, a.seed)
    save_scenarios(scs, a.out)
    print(f"wrote {len(scs)} scenarios to {a.out} (cost {res.cost:.6g})")
    return EXIT_OK


def cmd_error_report(a) -> int:
    config = _config(a.config)
    model = _model(a.model, config)
    pts = error_points(load_scenarios(a.scenarios), model, config, a.points, a.seed)
    rows = []
    for method, approx in (("global", fit_global(model, config)),
                           ("piecewise", build_sos2_grid(model, config, a.n_h, a.n_p))):
        rep = approx_error_report(model, config, approx, pts)
        rows += [(fn, method, rep[fn]) for fn in ("f_upc", "f_vol")]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_error_report(rows, a.out)
    for fn, method, met in rows:
        print(f"{fn} {method} mape {met['mape_pct']:.4f}% r2 {met['r2']:.6f}")
    return EXIT_OK


def cmd_schedule(a) -> int:
    config = _config(a.config)
    model = _model(a.model, config)
    sc = _scenario(a.prices, a.index)
    prices = np.asarray(sc.prices, dtype=float)
    extra = {}
    if a.method == "dp":
        traj, value, _ = dp_schedule(prices, default_dp_grid(config, a.knots, a.levels), model,
                                     config, hard_terminal=not a.soft_terminal)
        sched = traj.p
        extra["dp_value"] = value
    elif a.method in ("gl-mps", "pw-mps"):
        if a.method == "gl-mps":
            m = build_miqp_gl(prices, fit_global(model, config), config)
        else:
            m = build_miqp_pw(prices, build_sos2_grid(model, config, a.n_h, a.n_p), config)
        sol = solve_mip(m, SolverShim(a.solver, time_limit=a.time_limit, gap=a.gap))
        if not sol.ok:
            raise SolverError(f"MIQP solve ended with status {sol.status}")
        sched = mip_schedule(m, sol.x)
        extra.update(model_objective=sol.objective, solver=sol.source)
    else:
        if not a.checkpoint:
            raise ValueError("--method dfl needs --checkpoint")
        theta = load_checkpoint(a.checkpoint)
        base = baseline_schedules([sc], model, config)
        warm = make_samples([sc], base, [a.noise], model, config, seed=a.seed)[0].warm
        pw = predict_weights(theta, build_features(prices, warm, theta.norm), a.gamma, a.K)
        x_K, tape = recursive_refine(prices, warm, pw, model, config, fit_global(model, config),
                                     K=a.K, gamma=a.gamma)
        sched = x_K.p
        extra.update(flagged=tape.flagged, noise=a.noise)
    out = evaluate_schedule(sched, prices, model, config)
    rec = out.to_record()
    rec.update(schema=SCHEMA_VERSION, method=a.method, scenario=sc.id, **extra)
    _write_json(rec, a.out)
    print(f"profit {out.profit:.6f} (revenue {out.revenue:.6f}, op_cost {out.op_cost:.6f}, "
          f"si {out.si:.6f}, vol {out.vol:.6f})")
    return EXIT_OK


def _samples_for(scs, model, config, noise, n_variants, seed):
    base = baseline_schedules(scs, model, config)
    return make_samples(scs, base, noise, model, config, n_variants=n_variants, seed=seed)


def cmd_train(a) -> int:
    config = _config(a.config)
    model = _model(a.model, config)
    scs = load_scenarios(a.scenarios)
    noise = a.noise if a.noise == "random" else float(a.noise)
    samples = _samples_for(scs, model, config, noise, a.variants, a.seed)
    theta0 = init_params(a.hidden, a.seed, FeatureNorm.from_plant(model, config))
    cfg = TrainConfig(epochs=a.epochs, lr=a.lr, seed=a.seed, K=a.K, gamma=a.gamma,
                      batch=a.batch)
    theta, log = train(samples, theta0, cfg, model, config, fit_global(model, config))
    save_checkpoint(theta, a.out, {"best_epoch": log.best_epoch, "seed": a.seed})
    log_path = a.log or str(Path(a.out).with_suffix("")) + "_log.csv"
    log.write_csv(log_path)
    best = log.rows[log.best_epoch - 1]["val_profit"] if log.best_epoch else float("nan")
    print(f"trained {len(log.rows)} epochs, best epoch {log.best_epoch} "
          f"(val profit {best:.6f}); log {log_path}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    config = _config(a.config)
    model = _model(a.model, config)
    scs = load_scenarios(a.scenarios)
    methods = [m.strip() for m in a.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in VARIANTS]
    if bad:
        raise ValueError(f"unknown methods {bad}; choose from {list(VARIANTS)}")
    theta = load_checkpoint(a.checkpoint) if a.checkpoint else None
    levels = [float(x) for x in a.noise_levels.split(",")]
    samples = _samples_for(scs, model, config, levels, 1, a.seed)
    glob = fit_global(model, config)
    records = []
    for m in methods:
        records += evaluate(m, samples, model, config, glob, theta=theta, K=a.K, gamma=a.gamma)
    write_report(summarize(records), a.out)
    stem = str(Path(a.out).with_suffix(""))
    write_records(records, stem + "_records.csv")
    with open(stem + "_noise.csv", "w", encoding="utf-8") as fh:
        fh.write("method,noise,profit_mean\n")
        for r in noise_curve(records):
            fh.write(f"{r['method']},{r['noise']},{r['profit_mean']!r}\n")
    for r in summarize(records):
        print(f"{r['method']:8s} {r['profit_mean']:12.4f} +- {r['profit_std']:10.4f}"
              f"  {r['time_s']:.4f} s")
    return EXIT_OK


def cmd_export_mip(a) -> int:
    config = _config(a.config)
    model = _model(a.model, config)
    prices = np.asarray(_scenario(a.prices, a.index).prices, dtype=float)
    if a.hours:
        prices = prices[:a.hours]
    if a.formulation == "gl":
        m = build_miqp_gl(prices, fit_global(model, config), config)
    else:
        m = build_miqp_pw(prices, build_sos2_grid(model, config, a.n_h, a.n_p), config)
    export_model(m, a.out)
    print(f"wrote {m.n} variables, {len(m.rows)} rows to {a.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="uphes", description="Pumped-storage scheduling with decision-focused "
                                            "trust-region refinement.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def plant_args(p, model=True):
        p.add_argument("--config", help="plant configuration file (key = value)")
        if model:
            p.add_argument("--model", help="UPC model JSON (default: fit on synthetic data)")

    p = sub.add_parser("gen-data", help="synthetic UPC dataset")
    plant_args(p, model=False)
    p.add_argument("--n-p", type=int, default=25)
    p.add_argument("--n-h", type=int, default=25)
    p.add_argument("--noise", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit-upc", help="fit the unit performance curve")
    p.add_argument("--samples", required=True)
    p.add_argument("--degree", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_upc)

    p = sub.add_parser("gen-prices", help="synthetic year of hourly prices")
    p.add_argument("--year", type=int, default=2024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("wide", "long"), default="wide")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_prices)

    p = sub.add_parser("cluster", help="k-medoids representative days")
    p.add_argument("--prices", required=True)
    p.add_argument("--format", choices=("auto", "wide", "long"), default="auto")
    p.add_argument("--k", type=int, default=19)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("error-report", help="approximation error table")
    plant_args(p)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--points", type=int, default=480)
    p.add_argument("--n-h", type=int, default=20)
    p.add_argument("--n-p", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_error_report)

    p = sub.add_parser("schedule", help="schedule one price day")
    plant_args(p)
    p.add_argument("--prices", required=True, help="scenario or price file")
    p.add_argument("--index", type=int, default=0, help="scenario index in the file")
    p.add_argument("--method", choices=("dp", "gl-mps", "pw-mps", "dfl"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--knots", type=int, default=41)
    p.add_argument("--levels", type=int, default=7)
    p.add_argument("--soft-terminal", action="store_true",
                   help="DP prices the terminal volume instead of bounding it by the target")
    p.add_argument("--n-h", type=int, default=6)
    p.add_argument("--n-p", type=int, default=6)
    p.add_argument("--solver", help="solver executable (default: $UPHES_SOLVER)")
    p.add_argument("--time-limit", type=float, default=3600.0)
    p.add_argument("--gap", type=float, default=0.01)
    p.add_argument("--noise", default="0.3", help="warm-start noise for dfl")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train", help="decision-focused training")
    plant_args(p)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--noise", default="random")
    p.add_argument("--variants", type=int, default=8)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--batch", choices=("sample", "mean"), default="sample")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="method comparison report")
    plant_args(p)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--methods", default=",".join(VARIANTS))
    p.add_argument("--checkpoint")
    p.add_argument("--noise-levels", default="0.1,0.3,0.5,0.8")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-mip", help="write a GL or PW MIQP as MPS")
    plant_args(p)
    p.add_argument("--formulation", choices=("gl", "pw"), required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--hours", type=int, default=0, help="truncate the horizon")
    p.add_argument("--n-h", type=int, default=6)
    p.add_argument("--n-p", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_mip)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "noise", None) not in (None, "random") and args.command in ("schedule",):
            args.noise = float(args.noise)
        return args.func(args)
    except OSError as exc:
        print(f"uphes: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"uphes: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"uphes: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

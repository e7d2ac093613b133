"""Command-line entry point.

Subcommands: simulate, fit, evaluate, mc, shap, tune.  Exit codes: 0 on
success, 2 on configuration errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from . import dataio, harness, metrics, shapley
from .errors import CalibrationError, ConfigError, NumericalError, TrainingDivergenceError
from .sampling import draw_case_cohort
from .simulate import TrueModel, g_true, gen_cohort
from .train import center_fit, fit, fit_ltm, grid_search_cv


def _support_for(cfg: dataio.RunConfig, records, cache_path=None) -> tuple[float, float]:
    if getattr(cfg, "sim", None) is not None and cfg.sim.tau is not None:
        return (0.0, cfg.sim.tau)
    if cfg.support_mode == "observed":
        return harness._observation_window(records)
    cache = dataio.load_tau_cache(cache_path if cache_path is not None else cfg.tau_cache)
    tau = harness.scenario_tau(cfg, cache)
    dataio.save_tau_cache(cache_path if cache_path is not None else cfg.tau_cache, cache)
    return (0.0, tau)


def cmd_simulate(args) -> int:
    cfg = dataio.load_run_config(args.config)
    cache = dataio.load_tau_cache(cfg.tau_cache)
    tau = harness.scenario_tau(cfg, cache)
    dataio.save_tau_cache(cfg.tau_cache, cache)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, args.rep]))
    cohort = gen_cohort(replace(cfg.sim, tau=tau), rng)
    if cfg.design != "none":
        sample = draw_case_cohort(cohort, cfg.p_s, cfg.p_c, rng)
        records = sample.records
    else:
        records = cohort
    dataio.write_records_csv(args.out, records)
    print(f"wrote {len(records)} records to {args.out} (tau={tau:.6g})")
    return 0


def cmd_fit(args) -> int:
    cfg = dataio.load_run_config(args.config)
    if cfg.design == "none":
        records = dataio.read_records_csv(args.data)
    else:
        records = dataio.read_records_csv(args.data, cfg.p_s, cfg.p_c)
    support = _support_for(cfg, records)
    rng = np.random.default_rng(cfg.base_seed)
    fitter = fit_ltm if args.linear else fit
    result = fitter(records, cfg.sim.spec, cfg.hp, rng, support, monitor=cfg.monitor, val_frac=cfg.val_frac)
    observed_Z = np.vstack([rec.z for rec in records if rec.observed == 1])
    result = center_fit(result, observed_Z)
    dataio.save_model_json(args.out, result)
    print(f"fit complete: {result.epochs_run} epochs, final loss {result.train_curve[-1]:.6f}; model -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = dataio.load_model_json(args.model)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"re", "mspe", "ibs"}
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    cfg = dataio.load_run_config(args.config) if args.config else None
    records = dataio.read_records_csv(
        args.data, cfg.p_s if cfg and cfg.design != "none" else 1.0, cfg.p_c if cfg and cfg.design != "none" else 1.0
    )
    observed = [rec for rec in records if rec.observed == 1]
    Z = np.vstack([rec.z for rec in observed])
    out = {}
    if "ibs" in wanted:
        grid = metrics.EvalGrid(model.hazard.c, model.hazard.u, 512)
        out["ibs"] = metrics.ibs(model, observed, grid)
    if "re" in wanted or "mspe" in wanted:
        if cfg is None:
            raise ConfigError("re/mspe need --config with a [sim] table describing the truth")
        truth = TrueModel.from_config(cfg.sim)
        if "re" in wanted:
            out["re"] = metrics.relative_error(np.atleast_1d(model.predict_g(Z)), g_true(cfg.sim.g_case, Z))
        if "mspe" in wanted:
            window = harness._observation_window(observed)
            out["mspe"] = metrics.mspe(model, truth, Z, metrics.EvalGrid(window[0], window[1], 512))
    print(json.dumps(out, indent=1))
    return 0


def cmd_mc(args) -> int:
    cfg = dataio.load_run_config(args.config)
    if args.reps is not None:
        cfg = replace(cfg, reps=args.reps)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    result = harness.run_mc(cfg)
    harness.write_aggregate_csv(args.out, result["aggregate"])
    for row in result["aggregate"]:
        print(
            f"{row['method']:>4} {row['metric']:>5}: mean={row['mean']:.4f} sd={row['sd']:.4f} "
            f"(case {row['case']}, p_e={row['p_e']}, n={row['n']})"
        )
    print(f"aggregate table -> {args.out}")
    return 0


def cmd_shap(args) -> int:
    model = dataio.load_model_json(args.model)
    records = dataio.read_records_csv(args.data)
    observed = [rec for rec in records if rec.observed == 1]
    rng = np.random.default_rng(args.seed)
    background = shapley.draw_background(observed, args.background_size, rng)
    Z = np.vstack([rec.z for rec in observed])
    result = shapley.attribute(model.net, Z, background)
    names = result.feature_names

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prediction", "base"] + [f"phi_{name}" for name in names])
        preds = np.atleast_1d(model.predict_g(Z)) + model.center  # raw network output
        for i in range(len(observed)):
            writer.writerow([repr(preds[i]), repr(result.base)] + [repr(v) for v in result.values[i]])

    stem = args.out.rsplit(".", 1)[0]
    with open(f"{stem}_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "mean_abs_phi"])
        writer.writerows(shapley.shap_summary(result))
    with open(f"{stem}_dependence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "value", "phi", "partner", "partner_value"])
        for j, name in enumerate(names):
            partner, rows = shapley.shap_dependence(result, Z, j)
            pname = names[partner] if partner is not None else ""
            for row in rows:
                writer.writerow([name, repr(row[0]), repr(row[1]), pname, repr(row[3])])
    print(f"attributions for {len(observed)} samples -> {args.out}")
    return 0


def cmd_tune(args) -> int:
    cfg = dataio.load_run_config(args.config)
    grid = dataio.load_grid(args.grid)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.base_seed, 777]))
    if args.data:
        records = dataio.read_records_csv(args.data, cfg.p_s, cfg.p_c)
    else:
        # No dataset supplied: generate a fresh one of the configured size.
        cache = dataio.load_tau_cache(cfg.tau_cache)
        tau = harness.scenario_tau(cfg, cache)
        dataio.save_tau_cache(cfg.tau_cache, cache)
        cohort = gen_cohort(replace(cfg.sim, tau=tau), rng)
        if cfg.design != "none":
            records = draw_case_cohort(cohort, cfg.p_s, cfg.p_c, rng).records
        else:
            records = cohort
    support = _support_for(cfg, records)
    best = grid_search_cv(
        records, grid, folds=args.folds, rng=rng, spec_default=cfg.sim.spec, support=support
    )
    lines = [f"{key} = {getattr(best, key)}" for key in (
        "batch_size", "hidden_layers", "hidden_width", "dropout_rate",
        "lr_hazard", "lr_net", "max_epochs", "patience", "m",
    )]
    if best.r is not None:
        lines.append(f"r = {best.r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sievenet")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset (with design sampling applied)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rep", type=int, default=0, help="replication index feeding the seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the estimator to a record CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--linear", action="store_true", help="fit the linear transformation model")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="ibs")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mc", help="Monte Carlo replications with aggregation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("shap", help="Shapley attribution export for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--background-size", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("tune", help="grid-search cross-validation")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (NumericalError, TrainingDivergenceError, CalibrationError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

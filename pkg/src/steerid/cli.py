"""Command-line interface tying the toolkit into reproducible experiments.

Commands:
    generate   roll out a synthetic ground-truth dataset
    identify   run parameter identification against a dataset
    gains      print placed feedback gains and closed-loop eigenvalues
    evaluate   closed-loop lane-keeping run with an error-profile report

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 early-stopped without improvement.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import figures, report
from .config import ConfigError, ExperimentConfig
from .dynamics import DivergenceError, VehicleParams
from .fwddiff import check_gradient, value_of
from .lateral import PlacementError, closed_loop_eigs
from .optim import GradientError
from .pipeline import (EvaluationDivergence, derive_gains,
                       evaluate_controller, generate_ground_truth, identify,
                       lateral_model_from_params)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_NO_IMPROVEMENT = 4


def _load_config(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)


def _out_dir(cfg: ExperimentConfig, args) -> str:
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    spec = cfg.generation_spec()
    if args.count is not None:
        spec = type(spec)(**{**spec.__dict__, "count": args.count})
    seed = args.seed if args.seed is not None else cfg.seeds_cfg["base"]
    data = generate_ground_truth(cfg.vehicle(), spec, cfg.rollout(), seed)
    manifest = report.save_dataset(out, data)
    print(f"wrote {len(data.runs)} trajectories + manifest to {out}")
    if not args.no_figures:
        fig = figures.dataset_overview(os.path.join(out, "fig_dataset.png"), data)
        print(f"wrote {fig}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    if not os.path.isdir(args.dataset):
        raise ConfigError(f"dataset path does not exist: {args.dataset}")
    data = report.load_dataset(args.dataset)
    problem = cfg.problem()
    settings = cfg.optimizer_settings(kind=args.optimizer)
    if args.epochs is not None:
        settings = type(settings)(**{**settings.__dict__, "epochs": args.epochs})
    if args.batch is not None:
        settings = type(settings)(**{**settings.__dict__, "batch": args.batch})
    seeds = args.seeds if args.seeds is not None else cfg.seeds_cfg["count"]
    base_seed = args.seed if args.seed is not None else cfg.seeds_cfg["base"]
    loss_cfg = cfg.loss_config(problem.mode, data.cfg.steps)

    reports = identify(problem, data, settings, seeds=seeds,
                       base_seed=base_seed, loss_cfg=loss_cfg,
                       loss_stride=cfg.loss_stride(),
                       config_snapshot=cfg.to_dict())

    names = list(problem.decision)
    for rep in reports:
        tag = f"seed{rep.seed}"
        report.write_json(os.path.join(out, f"report_{tag}.json"), rep.to_dict())
        report.write_loss_curve_csv(os.path.join(out, f"loss_curve_{tag}.csv"),
                                    rep.records)
        report.write_param_curve_csv(os.path.join(out, f"param_curve_{tag}.csv"),
                                     rep.records, names)
        final = {k: round(v, 6) for k, v in rep.final_params.items()}
        print(f"{tag}: stop={rep.stop_reason} best_val={rep.best_val:.6g} "
              f"evals={rep.total_evals} final={final}")
    report.write_averaged_curve_csv(os.path.join(out, "loss_curve_mean.csv"),
                                    reports)

    if not args.no_figures:
        mean = report.averaged_loss_curve(reports)
        truth = None
        if data.true_params is not None:
            tp = data.true_params
            truth = {"mass": value_of(tp.mass), "lf": value_of(tp.lf),
                     "lr": value_of(tp.lr), "C_Sf": value_of(tp.C_Sf),
                     "C_Sr": value_of(tp.C_Sr)}
        figures.loss_curves(os.path.join(out, "fig_loss.png"), reports, mean)
        figures.param_curves(os.path.join(out, "fig_params.png"), reports,
                             names, truth)

    stalled = [rep for rep in reports
               if rep.stop_reason == "early_stop" and not rep.improved]
    if stalled:
        print(f"{len(stalled)} run(s) early-stopped without improvement")
        return EXIT_NO_IMPROVEMENT
    return EXIT_OK


def cmd_gains(args) -> int:
    cfg = _load_config(args.config)
    if cfg.poles is None:
        raise ConfigError("gains command requires a poles section")
    vehicle = cfg.vehicle()
    vx = float(cfg.problem_cfg["target_speed"])
    gains = derive_gains(vehicle, vx, cfg.poles)
    model = lateral_model_from_params(vehicle, vx)
    eigs = closed_loop_eigs(model, gains)

    print("gains:")
    for name, val in zip(("k1", "k2", "k3", "k4"), gains.values()):
        print(f"  {name} = {val:.4f}")
    print("closed-loop eigenvalues vs requested poles:")
    req = sorted(cfg.poles, key=lambda p: (p.real, p.imag))
    for e, p in zip(eigs, req):
        print(f"  {e.real:+.6f}{e.imag:+.6f}j   (requested {p.real:+g}{p.imag:+g}j)")

    payload = {"gains": list(gains.values()),
               "eigenvalues": [[e.real, e.imag] for e in eigs],
               "poles": [[p.real, p.imag] for p in cfg.poles],
               "config": cfg.to_dict()}

    if args.check_grad:
        decision = [n for n in cfg.problem_cfg["decision"]
                    if n in ("mass", "lf", "lr", "C_Sf", "C_Sr")]
        if not decision:
            decision = ["mass", "C_Sf"]
        at = [cfg.vehicle_cfg[n] for n in decision]
        grad_reports = {}
        print(f"gain gradients w.r.t. {decision} (analytic vs central diff):")
        for gi in range(4):
            def gain_fn(p, gi=gi):
                overrides = dict(zip(decision, p))
                params = VehicleParams(**{**cfg.vehicle_cfg, **overrides})
                return derive_gains(params, vx, cfg.poles).as_tuple()[gi]
            rep = check_gradient(gain_fn, at, h=1e-6, names=decision)
            grad_reports[f"k{gi + 1}"] = rep.to_dict()
            print(f"  k{gi + 1}: max_rel_err = {rep.max_rel_err:.3e}")
        payload["gradient_checks"] = grad_reports

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "gains.json")
        report.write_json(path, payload)
        print(f"wrote {path}")
    return EXIT_OK


def _gains_params(cfg: ExperimentConfig, args) -> VehicleParams:
    """Vehicle parameter set whose placed gains will drive the plant."""
    if args.gains_from == "true":
        return cfg.vehicle()
    if args.gains_from == "identified":
        if not args.report:
            raise ConfigError("--gains-from identified requires --report")
        if not os.path.exists(args.report):
            raise ConfigError(f"report file does not exist: {args.report}")
        with open(args.report) as fh:
            rep = json.load(fh)
        final = rep.get("final_params", {})
        allowed = {k: v for k, v in final.items()
                   if k in ("mass", "lf", "lr", "C_Sf", "C_Sr")}
        if not allowed:
            raise ConfigError(
                f"report {args.report} has no vehicle-parameter decisions "
                f"(found {sorted(final)})")
        return VehicleParams(**{**cfg.vehicle_cfg, **allowed})
    raise ConfigError(f"unknown --gains-from {args.gains_from!r}")


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    if cfg.poles is None:
        raise ConfigError("evaluate command requires a poles section")
    plant = cfg.vehicle()
    ref = cfg.reference()
    vx = float(cfg.problem_cfg["target_speed"])
    alpha = float(cfg.problem_cfg["ema_alpha"])
    scale = bool(cfg.problem_cfg["scale_derivative_by_dt"])
    params_for_gains = _gains_params(cfg, args)

    result = evaluate_controller(params_for_gains, plant, cfg.poles, ref,
                                 cfg.rollout(), vx, alpha=alpha,
                                 scale_derivative_by_dt=scale)

    report.write_errors_csv(os.path.join(out, "errors.csv"),
                            result.times, result.errors)
    summary = result.summary()
    summary["gains_from"] = args.gains_from
    summary["config"] = cfg.to_dict()
    report.write_json(os.path.join(out, "summary.json"), summary)
    print(f"steady-state |e1| = {result.steady_state_e1:.5f} m, "
          f"|e2| = {result.steady_state_e2:.5f} rad")
    if not args.no_figures:
        figures.error_profiles(os.path.join(out, "fig_errors.png"),
                               result.times, result.errors)
        figures.trajectory_plot(os.path.join(out, "fig_trajectory.png"),
                                result, ref)
    print(f"wrote errors.csv and summary.json to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steerid",
        description="Differentiable single-track vehicle simulation, "
                    "system identification, and lane-keeping control.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("generate", help="write a synthetic ground-truth dataset")
    common(p)
    p.add_argument("--count", type=int, help="number of trajectories")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("identify", help="run parameter identification")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--optimizer", choices=("adam", "cmaes"))
    p.add_argument("--seeds", type=int, help="number of training rounds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("gains", help="print placed gains and eigenvalues")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="also write gains.json here")
    p.add_argument("--check-grad", action="store_true",
                   help="verify gain gradients against central differences")
    p.set_defaults(func=cmd_gains)

    p = sub.add_parser("evaluate", help="closed-loop lane-keeping evaluation")
    common(p)
    p.add_argument("--gains-from", choices=("true", "identified"),
                   default="true")
    p.add_argument("--report", help="identification report JSON "
                                    "(for --gains-from identified)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError, EvaluationDivergence, GradientError) as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, FileNotFoundError, PlacementError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

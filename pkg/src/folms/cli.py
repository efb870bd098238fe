"""Command-line front end: ``folms {predict,optimize,simulate,sweep} CONFIG``.

Exit status is 0 on success, 2 for configuration errors, 3 when every
replica diverged and 4 when no stable step-size triple exists.  Output
files are written atomically, so a failed run never leaves a partial CSV.
"""
from __future__ import annotations

import argparse
import math
import sys

from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentFailed,
    SweepResult,
    SweepRow,
    STEP_AXES,
    load_config,
    resolve_steps,
    run_monte_carlo,
    seed_from_env,
    sweep_step_sizes,
    sweep_system_params,
    write_csv,
)
from .theory import InfeasibleError, predict_emse_complete, solve_optimal_step_sizes, to_db

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="folms", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, simulate: bool):
        sp.add_argument("config", help="TOML experiment configuration")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides FOLMS_SEED and the config)")
        sp.add_argument("-o", "--output", default=None, help="CSV output path (default: config value or stdout)")
        if simulate:
            sp.add_argument("--replicas", type=int, default=None)
            sp.add_argument("--iterations", type=int, default=None)
            sp.add_argument("--full-scale", action="store_true", help="measure over 10^6 iterations")
            sp.add_argument("--workers", type=int, default=None, help="parallel worker processes")

    common(sub.add_parser("predict", help="closed-form EMSE at the configured step sizes"), False)
    common(sub.add_parser("optimize", help="solve for the EMSE-minimising step sizes"), False)
    common(sub.add_parser("simulate", help="Monte Carlo EMSE for one configuration"), True)
    common(sub.add_parser("sweep", help="Monte Carlo EMSE over the configured grid"), True)
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes = {"seed": args.seed if args.seed is not None else seed_from_env(cfg.seed)}
    for name in ("replicas", "iterations", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "full_scale", False):
        changes["iterations"] = 1_000_000
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc


def _emit(result: SweepResult, args, cfg: ExperimentConfig) -> None:
    out = args.output or cfg.output
    if out:
        write_csv(result, out)
        print(f"wrote {len(result.rows)} row(s) to {out}", file=sys.stderr)
    else:
        sys.stdout.write(result.to_csv())


def _report(pairs) -> None:
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        print(f"{k:<{width}} = {v}")


def _watts(x: float) -> str:
    return f"{x:.5g} W ({to_db(x):.1f} dB)" if math.isfinite(x) else "inf"


def _cmd_predict(cfg: ExperimentConfig, args) -> int:
    if cfg.steps is None:
        raise ConfigError(f"{args.config}: predict needs step sizes in [estimator]")
    pred = predict_emse_complete(cfg.params, cfg.steps)
    _report([
        ("mu_w", f"{cfg.steps.mu_w:.6g}"),
        ("mu_eps", f"{cfg.steps.mu_eps:.6g}"),
        ("mu_eta", f"{cfg.steps.mu_eta:.6g}"),
        ("zeta_w", _watts(pred.zeta_w)),
        ("zeta_eps", _watts(pred.zeta_eps)),
        ("zeta_eta", _watts(pred.zeta_eta)),
        ("zeta_total", _watts(pred.total)),
        ("gamma", f"{pred.gamma:.6g}"),
        ("valid", str(pred.valid).lower()),
    ])
    if args.output or cfg.output:
        row = SweepRow((), cfg.steps, pred.total, math.nan, math.nan, 0, pred.gamma, 0.0)
        _emit(SweepResult((), (row,)), args, cfg)
    return EXIT_OK


def _cmd_optimize(cfg: ExperimentConfig, args) -> int:
    res = solve_optimal_step_sizes(cfg.params, fixed=cfg.pinned)
    pred = res.prediction
    _report([
        ("mu_w", f"{res.steps.mu_w:.6g}"),
        ("mu_eps", f"{res.steps.mu_eps:.6g}"),
        ("mu_eta", f"{res.steps.mu_eta:.6g}"),
        ("zeta_total", _watts(pred.total)),
        ("gamma", f"{pred.gamma:.6g}"),
        ("converged", str(res.converged).lower()),
        ("cycles", str(res.cycles)),
        ("bound_active", ",".join(res.bound_active) or "none"),
    ])
    if args.output or cfg.output:
        row = SweepRow((), res.steps, pred.total, math.nan, math.nan, 0, pred.gamma, 0.0)
        _emit(SweepResult((), (row,)), args, cfg)
    return EXIT_OK


def _cmd_simulate(cfg: ExperimentConfig, args) -> int:
    steps, _ = resolve_steps(cfg)
    mc = run_monte_carlo(cfg, steps=steps)
    pred = predict_emse_complete(cfg.params, steps)
    row = SweepRow((), mc.steps, pred.total, mc.mean, mc.stderr_db, mc.diverged, pred.gamma, mc.runtime)
    print(
        f"simulated {to_db(mc.mean):.2f} dB +/- {mc.stderr_db:.2f} dB, predicted {to_db(pred.total):.2f} dB, "
        f"{mc.diverged}/{cfg.replicas} diverged",
        file=sys.stderr,
    )
    _emit(SweepResult((), (row,)), args, cfg)
    return EXIT_OK


def _cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if not cfg.sweep:
        raise ConfigError(f"{args.config}: [[sweep.axis]] tables are required for sweep")
    names = [a.name for a in cfg.sweep]
    if all(n in STEP_AXES for n in names):
        result = sweep_step_sizes(cfg)
    elif not any(n in STEP_AXES for n in names):
        result = sweep_system_params(cfg)
    else:
        raise ConfigError(f"{args.config}: cannot mix step-size and system axes in one sweep")
    if result.optimum is not None:
        s = result.optimum.steps
        print(
            f"theoretical optimum: mu_w={s.mu_w:.4g} mu_eps={s.mu_eps:.4g} mu_eta={s.mu_eta:.4g} "
            f"({result.optimum.prediction.total_db:.2f} dB)",
            file=sys.stderr,
        )
    if all(r.diverged >= cfg.replicas for r in result.rows):
        print("error: every replica diverged at every grid point", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(result, args, cfg)
    return EXIT_OK


_COMMANDS = {
    "predict": _cmd_predict,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line entry point.

Subcommands map one-to-one onto the library: kappa and constants print
formula-level results, valleys inspects one sampled environment, the
simulate-* and verify-* commands drive the Monte Carlo harness, and
report regenerates outputs from a manifest.

Exit codes: 0 success, 2 configuration error, 3 regime error (the law has
no kappa in (0,1)), 1 anything else.  Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import math
import sys

from .constants import (
    feller_from_estimate,
    iglehart_constant,
    kesten_constant_beta,
    kesten_tail_estimate,
    limit_scale,
)
from .env import EnvironmentLaw, RegimeError, kappa_solve, moment_rho_log, sample_environment
from .experiments import (
    ExperimentConfig,
    parse_config_text,
    report_csv_text,
    run_from_manifest,
    run_position_experiment,
    run_tau_experiment,
    run_valley_census,
    verify_crossing_bound,
    verify_reduction,
)
from .potential import build_potential, detect_deep_valleys, detect_star_valleys
from .rng import stream_key
from .stable import StableSpec, sample_positive_stable

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwre",
        description="Simulation and verification toolkit for transient "
                    "zero-speed walks in random environments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def law_arg(p, required=True):
        p.add_argument("--law", required=required,
                       help="environment law, e.g. beta:1.5,1.0 or "
                            "discrete:0.8@0.25;0.6@0.75")

    p = sub.add_parser("kappa", help="root of E[rho^t] = 1 in (0,1)")
    law_arg(p)
    p.add_argument("--method", choices=("closed_form", "bisection_quadrature",
                                        "bisection_mc"), default=None)
    p.add_argument("--tol", type=float, default=1e-12)

    p = sub.add_parser("constants", help="limit-law constants table")
    law_arg(p)
    p.add_argument("--excursions", type=int, default=200_000)
    p.add_argument("--series", type=int, default=0,
                   help="renewal series for the tail-constant estimate; "
                        "0 skips it for Beta laws (closed form available)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("valleys", help="deep valleys of one environment")
    law_arg(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stable-sample", help="positive stable draws")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    for name, help_text in (
            ("simulate-tau", "annealed hitting-time experiment"),
            ("simulate-x", "position experiment"),
            ("census", "valley census over environments"),
            ("verify-reduction", "single-valley reduction bracket"),
            ("verify-crossing", "crossing-time growth bound")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        law_arg(p, required=False)
        p.add_argument("--n-values", help="comma-separated target levels")
        p.add_argument("--replicas", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--lambda-grid", help="comma-separated lambda values")
        p.add_argument("--master-seed", type=int)
        p.add_argument("--output-dir")
        p.add_argument("--step-cap", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--svg", action="store_true")
        if name == "verify-reduction":
            p.add_argument("--environments", type=int, default=200)

    p = sub.add_parser("report", help="regenerate outputs from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    parts = []
    if args.config:
        with open(args.config) as f:
            parts.append(f.read())
    overrides = {
        "law": args.law,
        "n_values": args.n_values,
        "replicas": args.replicas,
        "epsilon": args.epsilon,
        "lambda_grid": args.lambda_grid,
        "master_seed": args.master_seed,
        "output_dir": args.output_dir,
        "step_cap": args.step_cap,
    }
    for key, value in overrides.items():
        if value is not None:
            parts.append(f"{key} = {value}")
    return parse_config_text("\n".join(parts))


def _print_table(rows: list[tuple[str, str, str, str]]) -> None:
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())


def _cmd_kappa(args) -> int:
    law = EnvironmentLaw.parse(args.law)
    result = kappa_solve(law, tol=args.tol, method=args.method)
    print(f"{result.kappa:.12g}")
    return 0


def _cmd_constants(args) -> int:
    law = EnvironmentLaw.parse(args.law)
    kappa = kappa_solve(law).kappa
    moment = moment_rho_log(law, kappa)
    ig = iglehart_constant(law, kappa, n_excursions=args.excursions,
                           seed=args.seed)
    c_f, c_f_se = feller_from_estimate(ig, kappa, moment)
    n = ig.n_excursions
    rows = [("quantity", "value", "stderr", "route"),
            ("kappa", f"{kappa:.12g}", "-", "closed_form" if law.kind == "beta" else "bisection"),
            ("E[rho^k log rho]", f"{moment:.12g}", "-", "formula"),
            ("C_I", f"{ig.c_i:.6g}", f"{ig.stderr:.2g}", "excursion_mc"),
            ("E[e^(k V(e1))]", f"{ig.e_kv:.6g}",
             f"{math.sqrt(ig.cov[0, 0] / n):.2g}", "excursion_mc"),
            ("E[e1]", f"{ig.e_len:.6g}",
             f"{math.sqrt(ig.cov[1, 1] / n):.2g}", "excursion_mc"),
            ("C_F", f"{c_f:.6g}", f"{c_f_se:.2g}", "formula")]
    if law.kind == "beta":
        c_k = kesten_constant_beta(law.alpha, law.beta)
        rows.append(("C_K", f"{c_k:.12g}", "-", "closed_form"))
    series = args.series if args.series else (0 if law.kind == "beta" else 10 ** 6)
    if series:
        est = kesten_tail_estimate(law, kappa, n_series=series,
                                   seed=stream_key(args.seed, "ck"))
        rows.append(("C_K", f"{est.constant_hat:.6g}", f"{est.stderr:.2g}",
                     "series_mc"))
        if law.kind != "beta":
            c_k = est.constant_hat
    params = limit_scale(kappa, c_k, moment)
    rows += [("Lambda", f"{params.lambda_scale:.10g}", "-", "formula"),
             ("tau_prefactor", f"{params.tau_prefactor:.10g}", "-", "formula"),
             ("x_scale", f"{params.x_scale:.10g}", "-", "formula")]
    _print_table(rows)
    return 0


def _cmd_valleys(args) -> int:
    law = EnvironmentLaw.parse(args.law)
    kappa = kappa_solve(law).kappa
    n = args.n
    window = 4 * n + 1000
    env = sample_environment(law, (-2000, window), seed=args.seed)
    path = build_potential(env)
    deep = detect_deep_valleys(path, n, args.epsilon, kappa)
    star = detect_star_valleys(path, n, args.epsilon, kappa)
    print(f"# deep valleys: {len(deep)}  star valleys: {len(star)}")
    print("a  b  c  d  height")
    for v in deep:
        print(f"{v.a}  {v.b}  {v.c}  {v.d}  {v.height:.3f}")
    matches = {(v.b, v.d_bar) for v in deep} & {(v.b, v.d_bar) for v in star}
    print(f"# coinciding (b, d_bar) pairs: {len(matches)}")
    return 0


def _cmd_stable(args) -> int:
    spec = StableSpec(kappa=args.kappa, scale=args.scale)
    draws = sample_positive_stable(spec, args.count, seed=args.seed)
    for value in draws:
        print(repr(float(value)))
    return 0


def _cmd_experiment(args) -> int:
    config = _config_from_args(args)
    runner = {
        "simulate-tau": run_tau_experiment,
        "simulate-x": run_position_experiment,
        "census": run_valley_census,
        "verify-reduction": verify_reduction,
        "verify-crossing": verify_crossing_bound,
    }[args.command]
    kwargs = {"workers": args.workers, "svg": args.svg}
    if args.command == "verify-reduction":
        kwargs["environments"] = args.environments
    report = runner(config, **kwargs)
    if config.output_dir is None:
        sys.stdout.write(report_csv_text(report))
    else:
        print(f"wrote {config.output_dir}/{report.experiment}.csv")
    return 0


def _cmd_report(args) -> int:
    report = run_from_manifest(args.manifest, workers=args.workers,
                               output_dir=args.output_dir)
    if report.config.output_dir is None:
        sys.stdout.write(report_csv_text(report))
    else:
        print(f"wrote {report.config.output_dir}/{report.experiment}.csv")
    return 0


_COMMANDS = {
    "kappa": _cmd_kappa,
    "constants": _cmd_constants,
    "valleys": _cmd_valleys,
    "stable-sample": _cmd_stable,
    "simulate-tau": _cmd_experiment,
    "simulate-x": _cmd_experiment,
    "census": _cmd_experiment,
    "verify-reduction": _cmd_experiment,
    "verify-crossing": _cmd_experiment,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except RegimeError as err:
        print(f"regime error: {err}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: run, sweep, verify, and report.

Exit codes are a stable scripting contract: 0 success, 1 usage or
configuration error, 2 budget exhaustion.  Every flag has a config-file
equivalent (flat ``key = value`` lines, ``#`` comments); explicit flags
win over the file, and the effective configuration is echoed to stdout
as ``# key = value`` header lines before any work starts.  Workers
default to the SADDLEKIT_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments, report, theory
from .optimizer import AdaptConfig, adapt_run, run_fixed
from .oracles import ORACLE_KINDS, OracleSpec
from .problems import get_problem

DEFAULT_SEED = 20240 * 97    # fixed so bare invocations are reproducible


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this contract reserves 2
    for budget exhaustion, so remap usage errors to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_problem_flags(p, with_b=True):
    p.add_argument("--problem", default="f1", help="problem name: f1, f2, or f3")
    p.add_argument("--m", type=int, default=10, help="min-side dimension")
    p.add_argument("--n", type=int, default=10, help="max-side dimension")
    if with_b:
        p.add_argument("--b", type=float, default=None,
                       help="coupling strength (f1/f2; leave unset for f3)")


def _add_oracle_flags(p):
    p.add_argument("--oracle", default="es", choices=ORACLE_KINDS,
                   help="minimization oracle kind")
    p.add_argument("--tau", type=int, default=5,
                   help="oracle effort (success count for es, max steps for gd)")
    p.add_argument("--gd-step", type=float, default=1.0,
                   help="initial line-search step for the gd oracle")
    p.add_argument("--sigma0", type=float, default=2.0,
                   help="initial mutation scale for the es oracle")
    p.add_argument("--sigma-max", type=float, default=2.0,
                   help="mutation scale cap for the es oracle")


def _add_run_control_flags(p):
    p.add_argument("--target", type=float, default=1e-5, help="stopping threshold")
    p.add_argument("--budget", type=int, default=500_000,
                   help="f-call budget per trial")
    p.add_argument("--metric", default="auto", choices=("auto", "G", "G_tilde", "F"),
                   help="stopping metric (auto: G on f1, G_tilde otherwise)")
    p.add_argument("--a-eta", type=float, default=1.0,
                   help="adaptive policy: reciprocal term of the round length")
    p.add_argument("--b-eta", type=int, default=5,
                   help="adaptive policy: base round length / early-break window")
    p.add_argument("--c-eta", type=float, default=1.1,
                   help="adaptive policy: step-size ladder factor")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="RNG seed")


def build_parser():
    parser = _Parser(prog="saddlekit",
                     description="Min-max saddle-point runs with approximate "
                                 "minimization oracles.")
    subs = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p_run = subs.add_parser("run", parents=[], help="execute a single trial",
                            description="Run one trial at a fixed step size or "
                                        "with the adaptive policy.")
    _add_problem_flags(p_run)
    _add_oracle_flags(p_run)
    _add_run_control_flags(p_run)
    p_run.add_argument("--eta", type=float, default=None,
                       help="fixed step size in (0,1]")
    p_run.add_argument("--adapt", action="store_true",
                       help="use the adaptive step-size policy")
    p_run.add_argument("--x0", default=None,
                       help="comma-separated initial x (default: standard normal)")
    p_run.add_argument("--y0", default=None,
                       help="comma-separated initial y (default: standard normal)")
    p_run.add_argument("--trace", default=None,
                       help="write the JSON-lines run trace to this path")
    p_run.add_argument("--config", default=None, help="flat key=value config file")
    p_run.set_defaults(func=cmd_run)
    subparsers["run"] = p_run

    p_sweep = subs.add_parser("sweep", help="run a multi-trial study",
                              description="Run one of the canned studies "
                                          "(ex1/ex2/ex3) or a custom sweep.")
    p_sweep.add_argument("--experiment", default="custom",
                         choices=("ex1", "ex2", "ex3", "custom"))
    p_sweep.add_argument("--scale", default="desk", choices=("desk", "paper"))
    _add_problem_flags(p_sweep)
    _add_oracle_flags(p_sweep)
    _add_run_control_flags(p_sweep)
    p_sweep.add_argument("--eta", type=float, default=None,
                         help="custom sweep: fixed step size instead of the grid")
    p_sweep.add_argument("--adapt", action="store_true",
                         help="custom sweep: adaptive policy only")
    p_sweep.add_argument("--ks", default=None,
                         help="grid indices, e.g. '0-15' or '0,3,7'")
    p_sweep.add_argument("--no-grid-adapt", action="store_true",
                         help="leave the adaptive policy out of grid sweeps")
    p_sweep.add_argument("--trials", type=int, default=None,
                         help="trials per configuration (default: scale preset)")
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="parallel trial processes "
                              "(default: $SADDLEKIT_WORKERS or 1)")
    p_sweep.add_argument("--out", default="sweep_summary.csv",
                         help="summary CSV path")
    p_sweep.add_argument("--config", default=None, help="flat key=value config file")
    p_sweep.set_defaults(func=cmd_sweep)
    subparsers["sweep"] = p_sweep

    p_verify = subs.add_parser("verify", help="print a problem's rate constants",
                               description="Print the saddle-Hessian rate "
                                           "constants for a problem.")
    _add_problem_flags(p_verify)
    p_verify.add_argument("--eps-bar", type=float, default=0.0,
                          help="oracle quality bound in [0,1)")
    p_verify.add_argument("--delta", type=float, default=0.0,
                          help="best-response deviation bound")
    p_verify.add_argument("--csv", default=None,
                          help="also write the table to this CSV path")
    p_verify.add_argument("--config", default=None, help="flat key=value config file")
    p_verify.set_defaults(func=cmd_verify)
    subparsers["verify"] = p_verify

    p_report = subs.add_parser("report", help="aggregate summaries and render figures",
                               description="Aggregate sweep summary CSVs into "
                                           "one table plus PNG figures.")
    p_report.add_argument("inputs", nargs="+",
                          help="summary CSV files or directories containing them")
    p_report.add_argument("--out", default="report",
                          help="output directory for aggregate.csv and figures")
    p_report.add_argument("--no-figures", action="store_true",
                          help="write only the aggregate CSV")
    p_report.add_argument("--config", default=None, help="flat key=value config file")
    p_report.set_defaults(func=cmd_report)
    subparsers["report"] = p_report

    return parser, subparsers


def load_config_file(path) -> dict:
    """Flat key=value lines; '#' comments; keys match flag names."""
    data = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config {path}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            data[key.strip().replace("-", "_")] = value.strip()
    return data


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _convert_config(data: dict, subparser) -> dict:
    actions = {a.dest: a for a in subparser._actions}
    out = {}
    for key, raw in data.items():
        action = actions.get(key)
        if action is None or key in ("config", "help", "func"):
            raise ValueError(f"config: unknown key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = raw.lower()
            if low not in _TRUE + _FALSE:
                raise ValueError(f"config: {key} must be a boolean, got {raw!r}")
            out[key] = low in _TRUE
        elif action.type is not None:
            try:
                out[key] = action.type(raw)
            except (TypeError, ValueError):
                raise ValueError(f"config: bad value for {key}: {raw!r}") from None
        else:
            out[key] = raw
    return out


def _echo_config(args, subparser):
    skip = {"func", "command", "config", "inputs"}
    for dest in sorted(a.dest for a in subparser._actions
                       if a.dest not in skip and a.dest != "help"):
        print(f"# {dest} = {getattr(args, dest)}")


def _parse_ks(text):
    if text is None:
        return experiments.DEFAULT_KS
    ks = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:   # "a-b" ranges, inclusive
            lo, _, hi = part.partition("-")
            ks.extend(range(int(lo), int(hi) + 1))
        else:
            ks.append(int(part))
    if not ks or any(k < 0 for k in ks):
        raise ValueError("ks must be nonnegative grid indices")
    return ks


def _resolve_metric(choice: str, problem_name: str) -> str:
    if choice != "auto":
        return choice
    return "G" if problem_name == "f1" else "G_tilde"


def _resolve_workers(value) -> int:
    if value is None:
        raw = os.environ.get("SADDLEKIT_WORKERS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"SADDLEKIT_WORKERS must be an integer, got {raw!r}")
    if value < 1:
        raise ValueError("workers must be at least 1")
    return value


def _parse_vector(text, length, name):
    values = [float(v) for v in text.split(",") if v.strip()]
    if len(values) != length:
        raise ValueError(f"{name} must have {length} comma-separated values")
    return np.array(values)


def cmd_run(args) -> int:
    if not args.adapt:
        if args.eta is None:
            raise ValueError("one of --eta or --adapt is required")
        if not 0.0 < args.eta <= 1.0:
            raise ValueError("eta must be in (0,1]")
    problem = get_problem(args.problem, m=args.m, n=args.n, b=args.b)
    oracle = OracleSpec(kind=args.oracle, tau=args.tau, gd_step=args.gd_step,
                        sigma0=args.sigma0, sigma_max=args.sigma_max)
    config = AdaptConfig(a_eta=args.a_eta, b_eta=args.b_eta, c_eta=args.c_eta,
                         max_f_calls=args.budget, target=args.target,
                         metric=_resolve_metric(args.metric, args.problem))
    init_ss, run_ss = np.random.SeedSequence(args.seed).spawn(2)
    init_rng = np.random.default_rng(init_ss)
    x0 = (_parse_vector(args.x0, problem.m, "x0") if args.x0 is not None
          else init_rng.standard_normal(problem.m))
    y0 = (_parse_vector(args.y0, problem.n, "y0") if args.y0 is not None
          else init_rng.standard_normal(problem.n))

    if args.adapt:
        trace, success, f_calls = adapt_run(problem, oracle, (x0, y0), config, run_ss)
    else:
        trace, success, f_calls = run_fixed(problem, oracle, args.eta, (x0, y0),
                                            config, run_ss)
    if args.trace is not None:
        trace.to_jsonl(args.trace)
        print(f"trace written to {args.trace}")
    final = trace.records[-1]
    print(f"success = {success}")
    print(f"f_calls = {f_calls}")
    print(f"steps = {final.t}")
    print(f"final_metric = {final.metric}")
    return 0 if success else 2


def cmd_sweep(args) -> int:
    workers = _resolve_workers(args.workers)
    ks = _parse_ks(args.ks)
    include_adapt = not args.no_grid_adapt
    common = dict(seed_base=args.seed, target=args.target,
                  max_f_calls=args.budget, workers=workers)
    if args.experiment == "ex1":
        summary = experiments.run_ex1(args.scale, oracle=args.oracle,
                                      trials=args.trials, ks=ks,
                                      include_adapt=include_adapt, **common)
    elif args.experiment == "ex2":
        summary = experiments.run_ex2(args.scale, trials=args.trials, ks=ks,
                                      include_adapt=include_adapt, **common)
    elif args.experiment == "ex3":
        summary = experiments.run_ex3(args.scale, **common)
    else:
        oracle = OracleSpec(kind=args.oracle, tau=args.tau, gd_step=args.gd_step,
                            sigma0=args.sigma0, sigma_max=args.sigma_max)
        metric = None if args.metric == "auto" else args.metric
        summary = experiments.run_custom(
            args.problem, args.m, args.n, args.b, oracle=oracle, eta=args.eta,
            adapt=args.adapt, ks=ks, include_adapt=include_adapt,
            trials=args.trials if args.trials is not None else 10,
            metric=metric, **common)
    experiments.write_summary_csv(summary.rows, args.out)
    for key, value in summary.notes.items():
        print(f"# note: {key} = {value}")
    wins = sum(r.success for r in summary.rows)
    print(f"trials = {len(summary.rows)}")
    print(f"successes = {wins}")
    print(f"summary written to {args.out}")
    return 0


def _eig_range(matrix) -> str:
    eig = np.linalg.eigvalsh(matrix)
    return f"[{eig.min():.6g}, {eig.max():.6g}]"


def cmd_verify(args) -> int:
    problem = get_problem(args.problem, m=args.m, n=args.n, b=args.b)
    consts = theory.constants_for(problem, eps_bar=args.eps_bar, delta=args.delta)
    rows = [
        ("sigma_bar", f"{consts.sigma_bar:.10g}"),
        ("eta_bar_local", f"{consts.eta_bar:.10g}"),
        ("eta_bar_global", "none (eps_bar + delta >= 1)"
         if consts.eta_bar_global is None else f"{consts.eta_bar_global:.10g}"),
        ("eta_star", f"{consts.eta_star:.10g}"),
        ("gamma_bar_star", f"{consts.gamma_bar_star:.10g}"),
        ("eps_bar", f"{consts.eps_bar:.10g}"),
        ("delta", f"{consts.delta:.10g}"),
        ("gxx_star_eig", _eig_range(consts.gxx_star)),
        ("gyy_star_eig", _eig_range(consts.gyy_star)),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    if args.csv is not None:
        with open(args.csv, "w") as fh:
            fh.write("quantity,value\n")
            for name, value in rows:
                fh.write(f"{name},{value}\n")
        print(f"table written to {args.csv}")
    return 0


def cmd_report(args) -> int:
    result = report.make_report(args.inputs, args.out,
                                figures=not args.no_figures)
    print(f"rows = {result['rows']}")
    print(f"aggregate written to {result['aggregate_csv']}")
    for path in result["figures"]:
        print(f"figure written to {path}")
    return 0


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            sub = subparsers[args.command]
            overrides = _convert_config(load_config_file(args.config), sub)
            sub.set_defaults(**overrides)
            args = parser.parse_args(argv)   # explicit flags win over the file
        _echo_config(args, subparsers[args.command])
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (ValueError, FileNotFoundError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

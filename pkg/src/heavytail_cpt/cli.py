"""Command-line interface: ``heavytail-cpt {simulate,test,critval,power,compare}``.

Exit status is 0 on success, 1 on usage or input errors and 2 when a
numerical step fails (singular matrix, non-convergent solver, exploding
simulation).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from heavytail_cpt.cpt_stat import (
    AllSplitsFailed,
    MonteCarloCritical,
    TestConfig,
    profile_path,
    resolve_critical,
    run_test,
)
from heavytail_cpt.cusum_baseline import normalize_variant, sq_statistic
from heavytail_cpt.el_profile import InnerSolveError, SplitFailure
from heavytail_cpt.harness import (
    ConfigError,
    ExperimentConfig,
    fmt,
    parse_float_list,
    read_config,
    run_power_study,
)
from heavytail_cpt.limit_mc import CriticalValueTable, simulate_limit
from heavytail_cpt.moments import MomentConfig, build_panel
from heavytail_cpt.series_gen import (
    ARChangeSpec,
    InnovationKind,
    SeriesFormatError,
    SimulationError,
    load_series,
    save_series,
    simulate,
)

NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError, SimulationError,
                    InnerSolveError, SplitFailure, AllSplitsFailed)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return parse_float_list(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _box(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2 or vals[0] > vals[1]:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' with lo <= hi, got {text!r}")
    return vals


def _add_test_options(sp):
    sp.add_argument("--input", required=True, help="one-column CSV of y values")
    sp.add_argument("--p", type=int, default=1, help="autoregressive order")
    sp.add_argument("--r1", type=float, default=0.1)
    sp.add_argument("--r2", type=float, default=0.9)
    sp.add_argument("--h", dest="h_kind", choices=["bridge", "flat"], default="bridge")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--tau", type=float, default=0.5, help="quantile level of the moments")
    sp.add_argument("--cutoff-q", type=float, default=0.95,
                    help="sample quantile defining the weight cutoff")
    sp.add_argument("--abs-cutoff", action="store_true",
                    help="take the weight cutoff from |y|")
    sp.add_argument("--method", choices=["auto", "exact", "exhaustive", "coordinate"],
                    default="auto")
    sp.add_argument("--beta-box", type=_box, default=None, metavar="LO,HI")
    crit = sp.add_mutually_exclusive_group()
    crit.add_argument("--critval", type=float, default=None, help="fixed critical value")
    crit.add_argument("--critmc", type=int, default=None, metavar="PATHS",
                      help="simulate the critical value with this many paths")
    crit.add_argument("--crit-table", default=None, help="CSV written by 'critval'")
    sp.add_argument("--grid", type=int, default=1000, help="grid points for --critmc")
    sp.add_argument("--seed", type=int, default=0, help="seed for --critmc")
    sp.add_argument("--out", default=None, help="result CSV (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heavytail-cpt",
                     description="Self-weighted EL test for a break in AR coefficients.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="simulate a two-regime AR(p) series")
    sp.add_argument("--p", type=int, default=None, help="order (checked against --theta1)")
    sp.add_argument("--theta1", type=_floats, required=True)
    sp.add_argument("--theta2", type=_floats, default=None)
    sp.add_argument("--r", type=float, default=None, help="break fraction")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--innov", default="normal", help="normal, t2, cauchy, student_t:DF ...")
    sp.add_argument("--burn-in", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--replicate", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("test", help="run the change-point test on a series")
    _add_test_options(sp)
    sp.add_argument("--profile-out", default=None, help="write k, h(k/n)P_k, P_k here")

    sp = sub.add_parser("critval", help="simulate critical values of the limit law")
    sp.add_argument("--m", type=int, default=1)
    sp.add_argument("--h", dest="h_kind", choices=["bridge", "flat"], default="bridge")
    sp.add_argument("--r1", type=float, default=0.1)
    sp.add_argument("--r2", type=float, default=0.9)
    sp.add_argument("--paths", type=int, default=100_000)
    sp.add_argument("--grid", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("power", help="rejection-rate study over a theta2 grid")
    sp.add_argument("--theta1", default=None)
    sp.add_argument("--theta2-grid", default=None, help="list or start:stop:step")
    sp.add_argument("--n-list", default=None)
    sp.add_argument("--r-list", default=None)
    sp.add_argument("--innovations", "--innov", dest="innovations", default=None)
    sp.add_argument("--replications", default=None)
    sp.add_argument("--alpha", default=None)
    sp.add_argument("--variants", default=None, help="subset of Tn,Ttilde,SQ")
    sp.add_argument("--seed", dest="master_seed", default=None)
    sp.add_argument("--out-dir", dest="output_dir", default=None)
    sp.add_argument("--r1", default=None)
    sp.add_argument("--r2", default=None)
    sp.add_argument("--critmc", dest="critmc_paths", default=None)
    sp.add_argument("--grid", dest="grid_points", default=None)
    sp.add_argument("--sq-variant", default=None)
    sp.add_argument("--sq-null-reps", default=None)
    sp.add_argument("--workers", default=None)

    sp = sub.add_parser("compare", help="ELR statistics and SQ on one series")
    _add_test_options(sp)
    sp.add_argument("--sq-variant", default="psi", help="psi or as-printed")
    sp.add_argument("--sq-critval", type=float, default=None)

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="file of 'key = value' defaults")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill in flags not given explicitly."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config and command:
        sub = parser._subparsers._group_actions[0].choices[command]
        _load_config_defaults(sub, known.config, command)
    return parser.parse_args(argv)


def _load_config_defaults(sub: argparse.ArgumentParser, path: str, command: str) -> None:
    lookup = {}
    for action in sub._actions:
        lookup[action.dest] = action
        for opt in action.option_strings:
            lookup[opt.lstrip("-").replace("-", "_")] = action
    try:
        values = read_config(path)
    except (OSError, ConfigError) as exc:
        sub.error(str(exc))
    defaults = {}
    for key, raw in values.items():
        action = lookup.get(key)
        if action is None or action.dest in ("help", "config"):
            sub.error(f"{path}: unknown setting {key!r} for '{command}'")
        if isinstance(action, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                val = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sub.error(f"{path}: bad value for {key}: {exc}")
        else:
            val = raw
        if action.choices is not None and val not in action.choices:
            sub.error(f"{path}: {key} must be one of {list(action.choices)}")
        defaults[action.dest] = val
    for action in sub._actions:
        if action.required and action.dest in defaults:
            action.required = False
    sub.set_defaults(**defaults)


def _moment_cfg(args) -> MomentConfig:
    return MomentConfig(tau=args.tau, weight_cutoff_q=args.cutoff_q, abs_cutoff=args.abs_cutoff)


def _critical_source(args):
    if args.critval is not None:
        return args.critval
    if args.crit_table is not None:
        return CriticalValueTable.from_csv(args.crit_table)
    return MonteCarloCritical(paths=args.critmc or MonteCarloCritical.paths,
                              grid_points=args.grid, seed=args.seed)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> None:
    if args.p is not None and args.p != len(args.theta1):
        raise UsageError(f"--p {args.p} does not match {len(args.theta1)} coefficients in --theta1")
    if (args.theta2 is None) != (args.r is None):
        raise UsageError("--theta2 and --r go together")
    spec = ARChangeSpec(args.theta1, args.n, args.theta2, args.r, args.burn_in, args.seed)
    series = simulate(spec, InnovationKind.parse(args.innov), args.replicate)
    save_series(series, args.out)


def cmd_test(args) -> None:
    series = load_series(args.input, args.p)
    test_cfg = TestConfig(args.r1, args.r2, args.h_kind, args.alpha)
    res = run_test(series, _moment_cfg(args), test_cfg, _critical_source(args),
                   method=args.method, beta_box=args.beta_box)
    text = "statistic,k_hat,critical_value,reject\n"
    text += f"{fmt(res.statistic)},{res.k_hat},{fmt(res.critical_value)},{str(res.reject).lower()}\n"
    _emit(text, args.out)
    if args.profile_out:
        rows = ["k,weighted_profile,profile"]
        rows += [f"{int(k)},{fmt(w)},{fmt(v)}" for k, w, v in res.per_k_profile]
        Path(args.profile_out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    if res.failed_splits:
        print(f"warning: {len(res.failed_splits)} splits failed and were skipped",
              file=sys.stderr)


def cmd_critval(args) -> None:
    table = simulate_limit(args.m, args.h_kind, args.r1, args.r2, None, args.paths, args.grid,
                           args.seed)
    _emit(table.to_csv(), args.out)


def cmd_power(args) -> None:
    keys = ("theta1", "theta2_grid", "n_list", "r_list", "innovations", "replications",
            "alpha", "variants", "master_seed", "output_dir", "r1", "r2", "critmc_paths",
            "grid_points", "sq_variant", "sq_null_reps", "workers")
    cfg = ExperimentConfig.from_mapping({k: getattr(args, k) for k in keys})
    out = run_power_study(cfg, progress=lambda name: print(f"wrote {name}", file=sys.stderr))
    print(out)


def cmd_compare(args) -> None:
    variant = normalize_variant(args.sq_variant)
    series = load_series(args.input, args.p)
    panel = build_panel(series, _moment_cfg(args))
    path = profile_path(series, None, args.r1, args.r2, method=args.method,
                        beta_box=args.beta_box, panel=panel)
    t_flat, _ = path.statistic("flat")
    t_bridge, i = path.statistic("bridge")
    cfg = TestConfig(args.r1, args.r2, "bridge", args.alpha)
    source = _critical_source(args)
    crit = resolve_critical(source, panel.m, cfg, panel, path.betas[i])[0]
    sq = sq_statistic(series, variant)
    sq_reject = "" if args.sq_critval is None else str(sq > args.sq_critval).lower()
    text = ("statistic_Tn,statistic_Ttilde,k_hat,critical_value_Ttilde,reject_Ttilde,"
            "statistic_SQ,sq_variant,reject_SQ\n")
    text += (f"{fmt(t_flat)},{fmt(t_bridge)},{int(path.ks[i])},{fmt(crit)},"
             f"{str(t_bridge > crit).lower()},{fmt(sq)},{variant},{sq_reject}\n")
    _emit(text, args.out)


COMMANDS = {"simulate": cmd_simulate, "test": cmd_test, "critval": cmd_critval,
            "power": cmd_power, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, SeriesFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

    flatwave run CONFIG [--output-dir DIR] [--override k=v ...] [--quiet]
    flatwave check-equilibrium CONFIG [--override k=v ...]
    flatwave verify [CONFIG] [--quiet]
    flatwave fit CSV [--column E_low]

Exit codes: 0 success, 1 configuration error, 2 blow-up / step rejection,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import DEFAULTS, parse_config, parse_config_dict
from .energy_monitor import CSV_COLUMNS, decay_fit
from .errors import ConfigurationError, SolverError
from .runner import run_scenario, verify_suite

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_SOLVER = 3


def _build_parser():
    p = argparse.ArgumentParser(prog="flatwave",
                                description="compressible free-surface layer simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("config")
    run_p.add_argument("--output-dir", default=None)
    run_p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")
    run_p.add_argument("--quiet", action="store_true")

    chk_p = sub.add_parser("check-equilibrium",
                           help="build and validate the hydrostatic background")
    chk_p.add_argument("config")
    chk_p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE")

    ver_p = sub.add_parser("verify", help="run the numerical property suites")
    ver_p.add_argument("config", nargs="?", default=None)
    ver_p.add_argument("--quiet", action="store_true")

    fit_p = sub.add_parser("fit", help="fit a decay model to a trajectory column")
    fit_p.add_argument("csv")
    fit_p.add_argument("--column", default="E_low", choices=CSV_COLUMNS[1:])
    return p


def _cmd_run(args):
    cfg = parse_config(args.config, overrides=args.override)
    code, summary = run_scenario(cfg, out_dir=args.output_dir,
                                 quiet=args.quiet)
    if not args.quiet and code != EXIT_OK:
        print(f"terminated: {summary.get('termination')}", file=sys.stderr)
        diag = summary.get("diagnostics", {})
        for key, val in diag.items():
            print(f"  {key}: {val}", file=sys.stderr)
    return code


def _cmd_check_equilibrium(args):
    cfg = parse_config(args.config, overrides=args.override)
    system = cfg.build_system()
    grid, eq, law = system.grid, system.eq, system.law
    res = grid.vderiv(law.P(eq.rho_bar)) + eq.rho_bar * law.g
    hyd = float(np.max(np.abs(res)))
    mono = bool(np.all(np.diff(eq.rho_bar) > 0))
    surf = abs(float(eq.rho_bar[0]) - law.rho_star)
    print(f"rho_star: {law.rho_star:.17g}")
    print(f"surface density error: {surf:.3e}")
    print(f"hydrostatic residual (max): {hyd:.3e}")
    print(f"strictly decreasing in depth coordinate: {mono}")
    ok = hyd <= 1e-8 and mono and surf <= 1e-12 * max(1.0, law.rho_star)
    print("equilibrium check:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CONFIG


def _cmd_verify(args):
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = parse_config_dict({})
    results = verify_suite(cfg, quiet=False)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CONFIG


def _cmd_fit(args):
    with open(args.csv, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if header != list(CSV_COLUMNS):
        print(f"unexpected columns in {args.csv}", file=sys.stderr)
        return EXIT_CONFIG
    col = header.index(args.column)
    t = np.array([float(r[0]) for r in rows])
    v = np.array([float(r[col]) for r in rows])
    try:
        fit = decay_fit(t, v)
    except ValueError as exc:
        print(f"cannot fit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({
        "column": args.column, "model": fit.model, "rate": fit.rate,
        "goodness": fit.goodness, "algebraic_rate": fit.algebraic_rate,
        "exponential_rate": fit.exponential_rate,
    }, indent=1))
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "check-equilibrium":
            return _cmd_check_equilibrium(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "fit":
            return _cmd_fit(args)
    except ConfigurationError as exc:
        print("configuration error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

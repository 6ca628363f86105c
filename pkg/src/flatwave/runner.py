"""Scenario execution and deterministic artifact writing.

A scenario is one configuration file: build the background and grid, run
the stepper with energy monitors, and write three artifacts into the output
directory:

    trajectory.csv        one row per monitor sample (fixed columns)
    summary.json          decay fits, residual maxima, termination record
    final_checkpoint.json resumable final state

Artifact bytes are a pure function of (config, seed): fixed key order,
fixed float formatting, no timestamps.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import config_to_dict
from .dynamics import initialize_state, run
from .energy_monitor import (
    EnergyMonitor,
    decay_fit,
    g_aggregate,
    write_csv,
)
from .errors import BlowupError, ConfigurationError, SolverError

__all__ = ["run_scenario", "write_report", "summary_document", "verify_suite"]

SUMMARY_SCHEMA_VERSION = 1


def _fit_doc(times, values):
    try:
        fit = decay_fit(times, values)
    except ValueError:
        return None
    return {
        "model": fit.model,
        "rate": fit.rate,
        "goodness": fit.goodness,
        "algebraic_rate": fit.algebraic_rate,
        "exponential_rate": fit.exponential_rate,
    }


def summary_document(cfg, traj):
    reports = traj.reports
    times = [r.t for r in reports]
    doc = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "generator": f"flatwave {__version__}",
        "termination": traj.termination,
        "scheme": traj.diagnostics.get("scheme"),
        "steps": traj.diagnostics.get("steps", 0),
        "t_final": times[-1] if times else None,
        "n_samples": len(reports),
        "decay_fit_E_low": _fit_doc(times, [r.E_low for r in reports]),
        "decay_fit_F": _fit_doc(times, [r.F_surf for r in reports]),
        "max_identity_residual": _nanmax([r.identity_residual for r in reports]),
        "final": {
            "E_high": reports[-1].E_high if reports else None,
            "D_high": reports[-1].D_high if reports else None,
            "F_surf": reports[-1].F_surf if reports else None,
            "E_low": reports[-1].E_low if reports else None,
            "D_low": reports[-1].D_low if reports else None,
        },
        "g_aggregate_final": float(g_aggregate(reports)[-1]) if reports else None,
        "min_J": min((r.min_J for r in reports), default=None),
        "min_rho": min((r.min_rho for r in reports), default=None),
        "diagnostics": {k: v for k, v in traj.diagnostics.items()
                        if k not in ("scheme", "steps")},
        "config": config_to_dict(cfg),
    }
    return doc


def _nanmax(values):
    vals = [v for v in values if not (isinstance(v, float) and math.isnan(v))]
    return max((abs(v) for v in vals), default=None)


def write_report(cfg, traj, out_dir):
    """Write trajectory.csv and summary.json; byte-deterministic."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "trajectory.csv")
    write_csv(traj.reports, csv_path)
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(summary_document(cfg, traj), indent=1) + "\n")
    return csv_path, summary_path


def run_scenario(cfg, out_dir=None, quiet=True):
    """Execute one configuration; returns (exit_code, summary_dict).

    Exit codes: 0 success, 2 blow-up or step rejection, 3 solver failure.
    Configuration errors are raised before this point (exit 1 in the CLI).
    """
    out_dir = out_dir or cfg.run["output_dir"]
    system = cfg.build_system()
    stepper = cfg.build_stepper()
    energy_cfg = cfg.build_energy()
    monitor = EnergyMonitor(system, energy_cfg)
    state = initialize_state(system.grid, cfg.initial["family"],
                             cfg.initial["amplitude"])
    try:
        traj = run(state, cfg.run["t_end"], stepper, system,
                   monitor=monitor, cadence=energy_cfg.cadence)
    except SolverError as exc:
        if not quiet:
            print(f"solver failure: {exc}")
        return 3, {"termination": "solver_error", "error": str(exc)}

    os.makedirs(out_dir, exist_ok=True)
    write_report(cfg, traj, out_dir)
    final = traj.windows[-1]
    save_checkpoint(
        os.path.join(out_dir, "final_checkpoint.json"),
        final.state,
        meta={"config": config_to_dict(cfg), "scheme": stepper.scheme},
        prev_state=final.prev if stepper.scheme == "imex_bdf2" else None,
    )
    summary = summary_document(cfg, traj)
    if not quiet:
        print(f"termination: {traj.termination} after "
              f"{summary['steps']} steps, samples: {summary['n_samples']}")
    return (0 if traj.termination == "completed" else 2), summary


# -- built-in verification suite ------------------------------------------------


def verify_suite(cfg, quiet=True):
    """Fast numerical property checks; returns [(name, passed, detail)]."""
    from .discretization import make_grid
    from .equilibrium import enthalpy, enthalpy_inverse, solve_equilibrium
    from .geometry import build_geometry
    from .nonlinear_terms import full_residuals, split_residuals
    from .state import State, StateRates
    from .dynamics import StepperConfig, initialize_state as init_state, run as run_dyn

    results = []
    rng = np.random.default_rng(cfg.run["seed"])
    law = cfg.build_law()
    system = cfg.build_system()
    grid, eq = system.grid, system.eq

    # hydrostatic balance
    res = grid.vderiv(law.P(eq.rho_bar)) + eq.rho_bar * law.g
    val = float(np.max(np.abs(res)))
    results.append(("hydrostatic_residual", val <= 1e-8, f"max {val:.3e}"))

    # enthalpy round trip
    z = rng.uniform(0.5, 5.0, size=100)
    back = enthalpy_inverse(law, enthalpy(law, z))
    val = float(np.max(np.abs(back - z) / z))
    results.append(("enthalpy_round_trip", val <= 1e-10, f"max rel {val:.3e}"))

    # Piola identity on a random surface
    eta = grid.random_smooth_field(rng, 1e-2, surface=True)
    geom = build_geometry(eta, grid)
    worst = 0.0
    for row in range(grid.d):
        vec = np.stack([geom.J * geom.A[row, i] for i in range(grid.d)])
        div = sum(grid.hderiv(vec[i], i) for i in range(grid.d - 1)) \
            + grid.vderiv(vec[-1])
        worst = max(worst, float(np.max(np.abs(div))))
    results.append(("piola_identity", worst <= 1e-8, f"max {worst:.3e}"))

    # split-vs-full equivalence on random smooth states
    worst = 0.0
    for _ in range(3):
        st = State(
            q=grid.random_smooth_field(rng, 1e-2, kmax=2),
            u=np.stack([grid.random_smooth_field(rng, 1e-2, kmax=2,
                                                 bottom_zero=True)
                        for _ in range(grid.d)]),
            eta=grid.random_smooth_field(rng, 1e-2, kmax=2, surface=True))
        rates = StateRates(
            dq=grid.random_smooth_field(rng, 1e-2, kmax=2),
            du=np.stack([grid.random_smooth_field(rng, 1e-2, kmax=2)
                         for _ in range(grid.d)]),
            deta=grid.random_smooth_field(rng, 1e-2, kmax=2, surface=True))
        gm = build_geometry(st.eta, grid)
        S = split_residuals(st, rates, gm, eq, law, system.mu, system.mu_prime)
        F = full_residuals(st, rates, gm, eq, law, system.mu, system.mu_prime)
        for key in ("mass", "momentum", "kinematic"):
            scale = max(float(np.max(np.abs(F[key]))), 1e-30)
            worst = max(worst, float(np.max(np.abs(S[key] - F[key]))) / scale)
    results.append(("split_vs_full", worst <= 1e-8, f"max rel {worst:.3e}"))

    # interpolation homogeneity under mode dilation
    worst = 0.0
    for lam in (2, 4):
        kmax = max(1, (grid.n_h // 2 - 1) // lam)
        for _ in range(5):
            f = grid.random_smooth_field(rng, 1.0, kmax=kmax, surface=True)
            f = f - f.mean()
            fl = grid.dilate_modes(f, lam, surface=True)
            q_, s_ = 1, 1
            theta = s_ / (q_ + s_)
            def ratio(field):
                lhs = grid.sobolev_surface_sq(
                    grid.horizontal_power(field, q_, surface=True), 0)
                rhs = (grid.sobolev_surface_sq(field, 0) ** theta
                       * grid.sobolev_surface_sq(
                           grid.horizontal_power(field, q_ + s_, surface=True),
                           0) ** (1 - theta))
                return lhs / rhs
            worst = max(worst, abs(ratio(fl) / ratio(f) - 1.0))
    results.append(("interpolation_homogeneity", worst <= 1e-8,
                    f"max ratio deviation {worst:.3e}"))

    # equilibrium fixed point over 100 steps
    st0 = init_state(grid, "single_mode_eta", 0.0)
    traj = run_dyn(st0, 100 * cfg.stepper["dt"], cfg.build_stepper(), system,
                   cadence=50)
    drift = max(float(np.max(np.abs(w.state.q)) + np.max(np.abs(w.state.u))
                      + np.max(np.abs(w.state.eta))) for w in traj.windows)
    results.append(("equilibrium_fixed_point", drift <= 1e-12,
                    f"drift {drift:.3e}"))

    if not quiet:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return results

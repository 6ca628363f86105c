"""Run configuration: JSON schema, exhaustive validation, overrides.

The configuration file is a JSON object with the sections below; every key
has a default, unknown keys are rejected, and validation reports *all*
violations with their dotted paths rather than stopping at the first.

    grid:      {d, L, n_h, n_v, b}
    law:       {kind, K, gamma, p_atm, g}
    viscosity: {mu, mu_prime}
    initial:   {family, amplitude}
    stepper:   {dt, scheme, cfl_safety, freeze_nonlinear}
    energy:    {K_high, K_low, cadence, low_min_count}
    run:       {t_end, output_dir, seed}
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

from .discretization import make_grid
from .dynamics import SCHEMES, StepperConfig, System
from .energy_monitor import EnergyConfig
from .equilibrium import admissible_depth_bound, make_law, solve_equilibrium
from .errors import ConfigurationError

__all__ = ["RunConfig", "DEFAULTS", "parse_config", "parse_config_dict",
           "apply_overrides", "config_to_dict"]

DEFAULTS = {
    "grid": {"d": 2, "L": 2.0 * math.pi, "n_h": 16, "n_v": 17, "b": 1.0},
    "law": {"kind": "isothermal", "K": 1.0, "gamma": 1.4, "p_atm": 1.0,
            "g": 1.0},
    "viscosity": {"mu": 1.0, "mu_prime": 1.0},
    "initial": {"family": "single_mode_eta", "amplitude": 1e-3},
    "stepper": {"dt": 1e-2, "scheme": "imex_euler", "cfl_safety": 0.9,
                "freeze_nonlinear": False},
    "energy": {"K_high": 2, "K_low": 1, "cadence": 10, "low_min_count": 1},
    "run": {"t_end": 1.0, "output_dir": "out", "seed": 12345},
}

_FAMILIES = ("single_mode_eta", "q_bump", "shear")


@dataclass
class RunConfig:
    """Validated configuration; sections mirror the file schema."""

    grid: dict
    law: dict
    viscosity: dict
    initial: dict
    stepper: dict
    energy: dict
    run: dict

    def build_grid(self):
        g = self.grid
        return make_grid(g["d"], g["L"], g["n_h"], g["n_v"], g["b"])

    def build_law(self):
        l = self.law
        return make_law(l["kind"], K=l["K"], gamma=l["gamma"],
                        p_atm=l["p_atm"], g=l["g"])

    def build_system(self):
        grid = self.build_grid()
        law = self.build_law()
        eq = solve_equilibrium(law, self.grid["b"], grid.nodes)
        return System(grid=grid, eq=eq, law=law, mu=self.viscosity["mu"],
                      mu_prime=self.viscosity["mu_prime"])

    def build_stepper(self):
        s = self.stepper
        return StepperConfig(dt=s["dt"], scheme=s["scheme"],
                             cfl_safety=s["cfl_safety"],
                             freeze_nonlinear=s["freeze_nonlinear"])

    def build_energy(self):
        e = self.energy
        return EnergyConfig(K_high=e["K_high"], K_low=e["K_low"],
                            cadence=e["cadence"],
                            low_min_count=e["low_min_count"])


def config_to_dict(cfg):
    return {sec: copy.deepcopy(getattr(cfg, sec)) for sec in DEFAULTS}


def apply_overrides(raw, overrides):
    """Apply ``section.key=value`` strings onto the raw dict; values are
    parsed as JSON scalars with a string fallback."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        path, _, text = item.partition("=")
        keys = path.strip().split(".")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override path {path!r} not a section")
        node[keys[-1]] = value
    return out


def _check(cond, violations, msg):
    if not cond:
        violations.append(msg)
    return cond


def parse_config_dict(raw):
    """Validate a raw dict against the schema, filling defaults."""
    violations = []
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration must be a JSON object",
                                 ["top level is not an object"])
    merged = copy.deepcopy(DEFAULTS)
    for sec, val in raw.items():
        if sec not in DEFAULTS:
            violations.append(f"unknown section {sec!r}")
            continue
        if not isinstance(val, dict):
            violations.append(f"{sec}: must be an object")
            continue
        for key, v in val.items():
            if key not in DEFAULTS[sec]:
                violations.append(f"{sec}.{key}: unknown key")
            else:
                merged[sec][key] = v

    g = merged["grid"]
    _check(g["d"] in (2, 3), violations, f"grid.d: must be 2 or 3, got {g['d']}")
    _check(_num(g["L"]) and g["L"] > 0, violations, "grid.L: must be positive")
    _check(isinstance(g["n_h"], int) and g["n_h"] >= 8
           and g["n_h"] & (g["n_h"] - 1) == 0, violations,
           f"grid.n_h: must be a power of two >= 8, got {g['n_h']}")
    _check(isinstance(g["n_v"], int) and g["n_v"] >= 9, violations,
           f"grid.n_v: must be an integer >= 9, got {g['n_v']}")
    _check(_num(g["b"]) and g["b"] > 0, violations, "grid.b: must be positive")
    if g["d"] == 3 and isinstance(g["n_h"], int):
        _check(g["n_h"] <= 16, violations,
               "grid.n_h: 3D runs are supported at n_h <= 16 only")

    l = merged["law"]
    _check(l["kind"] in ("isothermal", "gamma_law"), violations,
           f"law.kind: must be isothermal or gamma_law, got {l['kind']!r}")
    for key in ("K", "p_atm", "g"):
        _check(_num(l[key]) and l[key] > 0, violations,
               f"law.{key}: must be positive")
    if l["kind"] == "gamma_law":
        _check(_num(l["gamma"]) and l["gamma"] > 1, violations,
               "law.gamma: must exceed 1")

    v = merged["viscosity"]
    _check(_num(v["mu"]) and v["mu"] > 0, violations,
           "viscosity.mu: shear viscosity must be positive")
    if g["d"] == 2:
        _check(_num(v["mu_prime"]) and v["mu_prime"] > 0, violations,
               "viscosity.mu_prime: must be positive in 2D "
               "(admissibility of the viscous dissipation)")
    else:
        _check(_num(v["mu_prime"]) and v["mu_prime"] >= 0, violations,
               "viscosity.mu_prime: must be nonnegative in 3D")

    ini = merged["initial"]
    _check(ini["family"] in _FAMILIES, violations,
           f"initial.family: must be one of {_FAMILIES}")
    _check(_num(ini["amplitude"]) and ini["amplitude"] >= 0, violations,
           "initial.amplitude: must be nonnegative")

    s = merged["stepper"]
    _check(_num(s["dt"]) and s["dt"] > 0, violations,
           "stepper.dt: must be positive")
    _check(s["scheme"] in SCHEMES, violations,
           f"stepper.scheme: must be one of {SCHEMES}")
    _check(_num(s["cfl_safety"]) and 0 < s["cfl_safety"] <= 1, violations,
           "stepper.cfl_safety: must lie in (0, 1]")
    _check(isinstance(s["freeze_nonlinear"], bool), violations,
           "stepper.freeze_nonlinear: must be a boolean")

    e = merged["energy"]
    ok_counts = (isinstance(e["K_high"], int) and isinstance(e["K_low"], int)
                 and 1 <= e["K_low"] < e["K_high"] <= 4)
    _check(ok_counts, violations,
           "energy.K_high/K_low: require integers 1 <= K_low < K_high <= 4")
    _check(isinstance(e["cadence"], int) and e["cadence"] >= 1, violations,
           "energy.cadence: must be a positive integer")
    _check(e["low_min_count"] in (1, 2), violations,
           "energy.low_min_count: must be 1 or 2")

    r = merged["run"]
    _check(_num(r["t_end"]) and r["t_end"] >= 0, violations,
           "run.t_end: must be nonnegative")
    _check(isinstance(r["output_dir"], str) and r["output_dir"], violations,
           "run.output_dir: must be a nonempty string")
    _check(isinstance(r["seed"], int) and r["seed"] >= 0, violations,
           "run.seed: must be a nonnegative integer")

    # depth admissibility for the configured law
    law_ok = not any(msg.startswith("law.") for msg in violations)
    if law_ok and _num(g["b"]) and g["b"] > 0:
        law = make_law(l["kind"], K=l["K"], gamma=l["gamma"],
                       p_atm=l["p_atm"], g=l["g"])
        bound = admissible_depth_bound(law)
        _check(g["b"] < bound, violations,
               f"grid.b: depth {g['b']} exceeds the admissible bound "
               f"{bound} of the hydrostatic balance")

    if violations:
        raise ConfigurationError(
            "invalid configuration:\n  " + "\n  ".join(violations), violations)
    return RunConfig(**merged)


def parse_config(path, overrides=()):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return parse_config_dict(raw)


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)

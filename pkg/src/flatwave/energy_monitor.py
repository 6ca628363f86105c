"""Energy, dissipation, and surface functionals along trajectories.

The analytic theory tracks families of space-time Sobolev norms whose
derivative counts (up to 4N with N >= 4) are far beyond what a desk-scale
grid can represent.  The monitors here keep the *structure* of those
functionals -- the anisotropic split between horizontal and vertical
velocity orders, the minimal-derivative-count-one convention for the
low-order family, the fractional surface orders, the time-derivative
stacks -- at configurable small counts: ``K_high`` stands in for the
high-order count (base order ``2*K_high``) and ``K_low`` for the low-order
count.  Time derivatives are obtained by finite differences of neighbouring
sampled states, never from the equations, so the energy-identity residual
is a genuine cross-check on the stepper.

The identity monitored is the basic quadratic balance

    d/dt E0 + D0 = RHS,
    E0 = 1/2 [ int J (q^2/h'(rho) + rho |u|^2) + int_S rho_star g eta^2 ],
    D0 = int J ( mu/2 |D0_A u|^2 + mu' (div_A u)^2 ),

with RHS the cubic remainder (the transported 1/h'(rho) weight in the bulk
plus the surface transport terms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import build_geometry, dev_sym_grad_A, div_A, grad_A, lift_surface
from .nonlinear_terms import (
    density_from_q,
    remainder_h_inverse,
    remainder_P_h_inverse,
)
from .state import StateRates

__all__ = [
    "EnergyConfig",
    "EnergyReport",
    "EnergyMonitor",
    "window_rates",
    "energy_high",
    "dissipation_high",
    "surface_F",
    "energy_low",
    "dissipation_low",
    "quadratic_energy",
    "quadratic_dissipation",
    "identity_residual",
    "decay_fit",
    "DecayFit",
    "g_aggregate",
    "write_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("t", "E_high", "D_high", "F_surf", "E_low", "D_low",
               "identity_residual", "minJ", "min_rho")
_CSV_ATTRS = ("t", "E_high", "D_high", "F_surf", "E_low", "D_low",
              "identity_residual", "min_J", "min_rho")


@dataclass
class EnergyConfig:
    """Derivative counts for the two norm families and monitor cadence."""

    K_high: int = 2
    K_low: int = 1
    cadence: int = 10
    low_min_count: int = 1    # 2 selects the stricter low-order variant

    def __post_init__(self):
        if not 1 <= self.K_low < self.K_high <= 4:
            raise ValueError("require 1 <= K_low < K_high <= 4")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.low_min_count not in (1, 2):
            raise ValueError("low_min_count must be 1 or 2")


@dataclass
class EnergyReport:
    t: float
    E_high: float
    D_high: float
    F_surf: float
    E_low: float
    D_low: float
    identity_residual: float
    min_J: float
    min_rho: float


# -- time differencing of sampled windows -------------------------------------


def window_rates(window):
    """Finite-difference rates from a sample window (centered when both
    neighbours exist, one-sided otherwise, None for a lone snapshot)."""
    s, p, n = window.state, window.prev, window.next
    if p is None and n is None:
        return None
    if p is not None and n is not None:
        dt2 = n.t - p.t
        return StateRates(dq=(n.q - p.q) / dt2, du=(n.u - p.u) / dt2,
                          deta=(n.eta - p.eta) / dt2)
    a, b = (s, n) if p is None else (p, s)
    dt = b.t - a.t
    return StateRates(dq=(b.q - a.q) / dt, du=(b.u - a.u) / dt,
                      deta=(b.eta - a.eta) / dt)


# -- norm helpers ---------------------------------------------------------------


def _deriv_any(grid, f, alpha):
    """Mixed derivative allowing vertical orders above the grid's cached
    powers by composing passes of order <= 4."""
    out = f
    for direction in range(grid.d - 1):
        if alpha[direction]:
            out = grid.hderiv(out, direction, alpha[direction])
    rem = alpha[-1]
    while rem > 0:
        take = min(rem, 4)
        out = grid.vderiv(out, take)
        rem -= take
    return out


def _sobolev_sq_any(grid, f, k):
    """H^k squared norm for any k >= 0 (vertical orders composed)."""
    if k <= 4:
        return grid.sobolev_volume_sq(f, k)
    total = 0.0
    from .discretization import _multi_indices
    for alpha in _multi_indices(grid.d, k):
        total += grid.l2_volume_sq(_deriv_any(grid, f, alpha))
    return total


def _vec_sobolev_sq(grid, u, k):
    return sum(_sobolev_sq_any(grid, u[i], k) for i in range(u.shape[0]))


def _hpow_sobolev_sq(grid, f, p, k):
    """|D|^p applied horizontally, then the H^k squared norm."""
    return _sobolev_sq_any(grid, grid.horizontal_power(f, p), k)


def _surf_hpow_sq(grid, f, p, s):
    return grid.sobolev_surface_sq(grid.horizontal_power(f, p, surface=True), s)


# -- the two norm families -------------------------------------------------------


def energy_high(state, rates, cfg, grid):
    """Sum over time-derivative stacks j of the order-(2K-2j) norms of
    (u, q, eta); j is limited by the available history (at most 1)."""
    m = 2 * cfg.K_high
    total = (_vec_sobolev_sq(grid, state.u, m)
             + _sobolev_sq_any(grid, state.q, m)
             + grid.sobolev_surface_sq(state.eta, m))
    if rates is not None and cfg.K_high >= 1:
        o = m - 2
        total += (_vec_sobolev_sq(grid, rates.du, o)
                  + _sobolev_sq_any(grid, rates.dq, o)
                  + grid.sobolev_surface_sq(rates.deta, o))
    return total


def dissipation_high(state, rates, cfg, system, geom=None):
    """High-order dissipation with the anisotropic velocity split: the
    horizontal components at base order (plus their covariant gradients),
    the vertical component one order higher."""
    grid = system.grid
    m = 2 * cfg.K_high
    if geom is None:
        geom = build_geometry(state.eta, grid)
    d = grid.d
    u_h = state.u[: d - 1]
    total = _vec_sobolev_sq(grid, u_h, m)
    for i in range(d - 1):
        total += _vec_sobolev_sq(grid, grad_A(state.u[i], geom), m)
    total += _sobolev_sq_any(grid, state.u[d - 1], m + 1)
    gq = grid.gradient(state.q)
    total += _vec_sobolev_sq(grid, gq, m - 1)
    total += _surf_hpow_sq(grid, state.eta, 1, m - 1.5)
    if rates is not None:
        total += _vec_sobolev_sq(grid, rates.du, m - 1)
        total += _sobolev_sq_any(grid, rates.dq, m - 1)
        total += grid.sobolev_surface_sq(rates.deta, m - 1)
    return total


def surface_F(state, cfg, grid):
    """Top-order surface control |eta|^2 at order 2K_high + 1/2."""
    return grid.sobolev_surface_sq(state.eta, 2 * cfg.K_high + 0.5)


def energy_low(state, rates, cfg, grid):
    """Low-order energy with the minimal-derivative-count convention: the
    undifferentiated q and eta are excluded (only grad q, D eta and the
    time stacks enter); u itself is included."""
    m = 2 * cfg.K_low
    p = cfg.low_min_count
    total = _vec_sobolev_sq(grid, state.u, m)
    gq = grid.gradient(state.q)
    if p == 1:
        total += _vec_sobolev_sq(grid, gq, m - 1)
        total += _surf_hpow_sq(grid, state.eta, 1, m - 1)
    else:
        for i in range(grid.d):
            total += _vec_sobolev_sq(grid, grid.gradient(gq[i]), max(m - 2, 0))
        total += _surf_hpow_sq(grid, state.eta, 2, m - 2)
    if rates is not None:
        o = m - 2
        total += (_vec_sobolev_sq(grid, rates.du, max(o, 0))
                  + _sobolev_sq_any(grid, rates.dq, max(o, 0))
                  + grid.sobolev_surface_sq(rates.deta, max(o, 0)))
    return total


def dissipation_low(state, rates, cfg, system):
    """Low-order dissipation: horizontal derivatives of u_h at base order,
    the surface trace of d_d u_h at a fractional order, u_d one order up,
    and the minimal-count q and eta groups."""
    grid = system.grid
    m = 2 * cfg.K_low
    d = grid.d
    u_h = state.u[: d - 1]
    total = 0.0
    for i in range(d - 1):
        total += _hpow_sobolev_sq(grid, state.u[i], 1, m)
        total += _surf_hpow_sq(grid, grid.vderiv(state.u[i])[..., 0], 0, m - 0.5)
    total += _sobolev_sq_any(grid, state.u[d - 1], m + 1)
    total += _hpow_sobolev_sq(grid, state.q, 2, max(m - 2, 0))
    total += _sobolev_sq_any(grid, grid.vderiv(state.q), m - 1)
    total += _surf_hpow_sq(grid, state.eta, 2, m - 2.5)
    if rates is not None:
        total += _vec_sobolev_sq(grid, rates.du, m - 1)
        total += _sobolev_sq_any(grid, rates.dq, m)
        total += grid.sobolev_surface_sq(rates.deta, m + 0.5)
    return total


# -- the quadratic balance -------------------------------------------------------


def quadratic_energy(state, system, geom=None, rho=None):
    grid, eq, law = system.grid, system.eq, system.law
    if geom is None:
        geom = build_geometry(state.eta, grid)
    if rho is None:
        rho = density_from_q(state.q, geom, eq, law)
    hp = law.h_prime(rho)
    bulk = grid.integrate_volume(geom.J * (state.q**2 / hp + rho * np.sum(state.u**2, axis=0)))
    surf = grid.integrate_surface(law.rho_star * law.g * state.eta**2)
    return 0.5 * float(bulk + surf)


def quadratic_dissipation(state, system, geom=None):
    grid = system.grid
    if geom is None:
        geom = build_geometry(state.eta, grid)
    D0 = dev_sym_grad_A(state.u, geom)
    div = div_A(state.u, geom)
    dens = system.mu / 2.0 * np.sum(D0**2, axis=(0, 1)) + system.mu_prime * div**2
    return float(grid.integrate_volume(geom.J * dens))


def identity_residual(window, system):
    """Residual of the quadratic energy balance over a sample window:
    centered d/dt of the energy plus the dissipation minus the cubic
    right-hand side, everything from snapshots only."""
    if window.prev is None or window.next is None:
        return math.nan
    grid, eq, law = system.grid, system.eq, system.law
    s, p, n = window.state, window.prev, window.next
    dt2 = n.t - p.t

    def geom_rho(st):
        geom = build_geometry(st.eta, grid)
        return geom, density_from_q(st.q, geom, eq, law)

    gp, rp = geom_rho(p)
    gn, rn = geom_rho(n)
    geom, rho = geom_rho(s)
    dE = (quadratic_energy(n, system, gn, rn)
          - quadratic_energy(p, system, gp, rp)) / dt2
    diss = quadratic_dissipation(s, system, geom)

    # transported weight w = 1/h'(rho)
    w_t = (1.0 / law.h_prime(rn) - 1.0 / law.h_prime(rp)) / dt2
    deta_t = (n.eta - p.eta) / dt2
    dphi_t = lift_surface(deta_t, grid)
    w = 1.0 / law.h_prime(rho)
    w_adv = w_t - (1.0 / geom.J) * dphi_t * grid.vderiv(w)
    bulk_rhs = 0.5 * float(grid.integrate_volume(geom.J * w_adv * s.q**2))

    q_s = s.q[..., 0]
    rho_s = rho[..., 0]
    R_p = remainder_P_h_inverse(q_s, s.eta, law)
    R_h = remainder_h_inverse(s.q, geom, eq, law)[..., 0]
    hp_star = law.h_prime(law.rho_star)
    surf_dens = (0.5 * q_s**2 / law.h_prime(rho_s)
                 + R_p - ((q_s - law.g * s.eta) / hp_star + R_h) * q_s)
    surf_rhs = float(grid.integrate_surface(surf_dens * deta_t))
    return dE + diss - (bulk_rhs + surf_rhs)


# -- monitor -----------------------------------------------------------------------


class EnergyMonitor:
    """Evaluates one :class:`EnergyReport` per sampled window."""

    def __init__(self, system, cfg):
        self.system = system
        self.cfg = cfg

    def report(self, window):
        grid = self.system.grid
        s = window.state
        rates = window_rates(window)
        geom = build_geometry(s.eta, grid)
        rho = density_from_q(s.q, geom, self.system.eq, self.system.law)
        return EnergyReport(
            t=s.t,
            E_high=energy_high(s, rates, self.cfg, grid),
            D_high=dissipation_high(s, rates, self.cfg, self.system, geom),
            F_surf=surface_F(s, self.cfg, grid),
            E_low=energy_low(s, rates, self.cfg, grid),
            D_low=dissipation_low(s, rates, self.cfg, self.system),
            identity_residual=identity_residual(window, self.system),
            min_J=float(np.min(geom.J)),
            min_rho=float(np.min(rho)),
        )


# -- decay fitting ------------------------------------------------------------------


@dataclass
class DecayFit:
    model: str
    rate: float
    goodness: float
    algebraic_rate: float
    exponential_rate: float
    r2_algebraic: float
    r2_exponential: float


def decay_fit(times, values):
    """Least-squares fits of log v against log(1+t) (algebraic) and against
    t (exponential); returns the better model and both rates."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 10:
        raise ValueError("need at least 10 samples")
    if (1.0 + t.max()) / (1.0 + t.min()) < 10.0:
        raise ValueError("samples must span a decade of (1+t)")
    if np.all(v <= 0) or np.max(v) == 0:
        return DecayFit(model="algebraic", rate=0.0, goodness=1.0,
                        algebraic_rate=0.0, exponential_rate=0.0,
                        r2_algebraic=1.0, r2_exponential=1.0)
    mask = v > 0
    t, v = t[mask], v[mask]
    logv = np.log(v)

    def fit(x):
        A = np.vstack([x, np.ones_like(x)]).T
        coef, _, _, _ = np.linalg.lstsq(A, logv, rcond=None)
        pred = A @ coef
        ss_res = float(np.sum((logv - pred) ** 2))
        ss_tot = float(np.sum((logv - logv.mean()) ** 2))
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        return float(coef[0]), r2

    alg_rate, alg_r2 = fit(np.log1p(t))
    exp_rate, exp_r2 = fit(t)
    if exp_r2 > alg_r2:
        model, rate, good = "exponential", exp_rate, exp_r2
    else:
        model, rate, good = "algebraic", alg_rate, alg_r2
    return DecayFit(model=model, rate=rate, goodness=good,
                    algebraic_rate=alg_rate, exponential_rate=exp_rate,
                    r2_algebraic=alg_r2, r2_exponential=exp_r2)


def g_aggregate(reports):
    """Running supremum of the time-weighted combination
    E_high + int D_high + F/(1+t) + int F/(1+r)^2 + (1+t) E_low
    + int (1+r) D_low, trapezoid integrals over the sample times."""
    if not reports:
        return np.array([])
    t = np.array([r.t for r in reports])
    Eh = np.array([r.E_high for r in reports])
    Dh = np.array([r.D_high for r in reports])
    F = np.array([r.F_surf for r in reports])
    El = np.array([r.E_low for r in reports])
    Dl = np.array([r.D_low for r in reports])

    def cumtrap(y):
        out = np.zeros_like(y)
        if y.size > 1:
            out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
        return out

    combo = (Eh + cumtrap(Dh) + F / (1.0 + t) + cumtrap(F / (1.0 + t) ** 2)
             + (1.0 + t) * El + cumtrap((1.0 + t) * Dl))
    return np.maximum.accumulate(combo)


# -- CSV emission --------------------------------------------------------------------


def write_csv(reports, path):
    """One row per sample, fixed column order, 17 significant digits."""
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        vals = [getattr(r, a) for a in _CSV_ATTRS]
        lines.append(",".join(f"{v:.17g}" for v in vals))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path

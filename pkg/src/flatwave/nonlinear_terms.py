"""Density reconstruction and the quadratic remainders of the perturbed
linear form.

The perturbation q and the lifted surface function phi reconstruct the
density through the enthalpy: rho = h^{-1}(h(rho_bar) + q - g*phi), with the
Taylor splitting

    rho = rho_bar + (q - g*phi)/h'(rho_bar) + R_hinv,

where R_hinv is the exact second-order integral remainder.  On the surface
the pressure deviation splits as P(rho) - p_atm = rho_star*(q - g*eta) +
R_Phinv.  Subtracting the constant-coefficient linearization from the full
covariant system leaves the remainders G1 (mass), G2 (momentum), G3
(kinematic), G4 (stress balance), every one of them quadratic in the
perturbation.  They are transcribed here term by term; ``split_residuals``
and ``full_residuals`` evaluate both sides of that rearrangement so the
transcription can be certified numerically.

Products are pointwise.  Callers that need aliasing control (the time
stepper) pass ``dealias=True`` to the evaluators, which projects the
*outputs* onto the kept band; identity checks run with the raw pointwise
algebra, which is what makes the split-vs-full comparison exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupError, DomainError
from .geometry import (
    Geometry,
    div_A,
    div_matrix_A,
    grad_A,
    lift_surface,
    stress_A,
    check_viscosities,
)
from .state import State, StateRates

__all__ = [
    "NonlinearBundle",
    "density_from_q",
    "remainder_h_inverse",
    "remainder_P_h_inverse",
    "eval_G1",
    "eval_G2",
    "eval_G3",
    "eval_G4",
    "diagnostic_Q",
    "evaluate_bundle",
    "split_residuals",
    "full_residuals",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)     # map to (0, 1)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

DENSITY_FLOOR_FRACTION = 0.25


@dataclass
class NonlinearBundle:
    """All remainders of one state, plus the reconstructed density and the
    transport diagnostic."""

    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    G4: np.ndarray
    rho: np.ndarray
    R_hinv: np.ndarray
    R_Phinv: np.ndarray
    Q_diag: np.ndarray
    Q_discrepancy: float


# -- density and Taylor remainders ----------------------------------------


def _enthalpy_argument(q, geom, eq, law):
    return eq.h_bar(law.g) + q - law.g * geom.phi


def density_from_q(q, geom, eq, law):
    """rho = h^{-1}(h(rho_bar) + q - g*phi), with a positivity floor at
    rho_star/4 (an out-of-regime state raises :class:`BlowupError`)."""
    w = _enthalpy_argument(q, geom, eq, law)
    try:
        rho = law.h_inverse(w)
    except DomainError as exc:
        raise BlowupError(f"density reconstruction failed: {exc}",
                          {"min_arg": float(np.min(w))}) from exc
    min_rho = float(np.min(rho))
    if min_rho <= DENSITY_FLOOR_FRACTION * law.rho_star:
        raise BlowupError(
            f"density {min_rho:.3g} below floor rho_star/4",
            {"min_rho": min_rho})
    return rho


def remainder_h_inverse(q, geom, eq, law):
    """R_hinv = (q-g*phi)^2 * int_0^1 (h^{-1})''(h(rho_bar)+s(q-g*phi))(1-s) ds
    by 16-point Gauss-Legendre quadrature in s."""
    w0 = eq.h_bar(law.g)
    dw = q - law.g * geom.phi
    acc = np.zeros_like(dw)
    for s, wgt in zip(_GL_NODES, _GL_WEIGHTS):
        acc += wgt * (1.0 - s) * law.h_inverse_d2(w0 + s * dw)
    return dw * dw * acc


def remainder_P_h_inverse(q_surf, eta, law):
    """R_Phinv = (q-g*eta)^2 * int_0^1 (P o h^{-1})''(s(q-g*eta))(1-s) ds on
    the surface (the expansion point h(rho_star) = 0)."""
    dw = q_surf - law.g * eta
    acc = np.zeros_like(dw)
    for s, wgt in zip(_GL_NODES, _GL_WEIGHTS):
        acc += wgt * (1.0 - s) * law.P_h_inverse_d2(s * dw)
    return dw * dw * acc


# -- shared spectral work ---------------------------------------------------


def _first_gradients(u, grid):
    """du[i, k] = d_k u_i."""
    return np.stack([grid.gradient(u[i]) for i in range(grid.d)])


def _second_gradients(du, grid):
    """d2u[i, k, m] = d_k d_m u_i from the first gradients."""
    return np.stack([
        np.stack([grid.gradient(du[i, k]) for k in range(grid.d)])
        for i in range(grid.d)
    ])


def _lifted_rate(rates, grid):
    if rates is None or rates.deta is None:
        return np.zeros(grid.shape_volume)
    return lift_surface(rates.deta, grid)


def _trace(f):
    return f[..., 0]


# -- volume remainders -------------------------------------------------------


def eval_G1(state, rates, geom, eq, law, rho=None, dealias=False,
            parts=False):
    """Mass-equation remainder G1 = G11 + G12.

    With ``parts=True`` returns the dict {"G11": ..., "G12": ...} instead of
    the sum (term-level oracle hooks for the tests).
    """
    grid = geom.grid
    q, u = state.q, state.u
    if rho is None:
        rho = density_from_q(q, geom, eq, law)
    dphi_t = _lifted_rate(rates, grid)
    invJ = 1.0 / geom.J

    gradq = grid.gradient(q)
    uA = np.einsum("l...,lk...->k...", u, geom.A)
    G11 = invJ * dphi_t * gradq[-1] - np.einsum("k...,k...->...", uA, gradq)

    gradphi = geom.grad_phi
    rho_u = eq.rho_bar * u
    d_ru = _first_gradients(rho_u, grid)       # (l, k)
    Adelta = geom.A.copy()
    for i in range(grid.d):
        Adelta[i, i] -= 1.0
    du = _first_gradients(u, grid)
    G12 = (law.g * np.einsum("k...,k...->...", uA, gradphi)
           - eq.h_prime_bar * np.einsum("lk...,lk...->...", Adelta, d_ru)
           - (law.dP(rho) - eq.P_prime_bar)
           * np.einsum("lk...,lk...->...", geom.A, du))
    if parts:
        return {"G11": G11, "G12": G12}
    out = G11 + G12
    return grid.dealias(out) if dealias else out


def eval_G2(state, rates, geom, eq, law, mu, mu_prime,
            rho=None, dealias=False, parts=False):
    """Momentum-equation remainder G2 = G21 + G22 + G23 + G24.

    With ``parts=True`` returns the dict of the four contributions.
    """
    grid = geom.grid
    d = grid.d
    check_viscosities(mu, mu_prime, d)
    c = (d - 2.0) / d * mu + mu_prime
    q, u = state.q, state.u
    if rho is None:
        rho = density_from_q(q, geom, eq, law)
    du_t = rates.du if (rates is not None and rates.du is not None) \
        else np.zeros_like(u)
    dphi_t = _lifted_rate(rates, grid)
    invJ = 1.0 / geom.J

    gradq = grid.gradient(q)
    du = _first_gradients(u, grid)
    d2u = _second_gradients(du, grid)
    Adelta = geom.A.copy()
    for i in range(d):
        Adelta[i, i] -= 1.0
    dA = np.stack([
        np.stack([grid.gradient(geom.A[l, m]) for m in range(d)])
        for l in range(d)
    ])                                          # (l, m, k)

    G21 = (-eq.rho_bar * np.einsum("il...,l...->i...", Adelta, gradq)
           - (rho - eq.rho_bar) * np.einsum("il...,l...->i...", geom.A, gradq))

    AtA = np.einsum("lk...,lm...->km...", geom.A, geom.A)
    for k in range(d):
        AtA[k, k] -= 1.0
    lap_part = np.einsum("km...,ikm...->i...", AtA, d2u)
    grad_div = np.stack([np.einsum("lm...,lm...->...", geom.A, d2u[:, k])
                         for k in range(d)])
    G22 = mu * lap_part + c * (
        np.einsum("ik...,k...->i...", geom.A, grad_div)
        - np.stack([sum(d2u[l, i, l] for l in range(d)) for i in range(d)]))

    B = np.einsum("lk...,lmk...->m...", geom.A, dA)
    G23_1 = mu * np.einsum("m...,im...->i...", B, du)
    C = np.einsum("lmk...,lm...->k...", dA, du)
    G23_2 = c * np.einsum("ik...,k...->i...", geom.A, C)
    G23 = G23_1 + G23_2

    transport = np.einsum("l...,lk...,ik...->i...", u, geom.A, du)
    G24 = (-(rho - eq.rho_bar) * du_t
           - rho * (-invJ * dphi_t * du[:, -1] + transport))

    if parts:
        return {"G21": G21, "G22": G22, "G23": G23, "G24": G24}
    out = G21 + G22 + G23 + G24
    return grid.dealias(out) if dealias else out


# -- surface remainders -------------------------------------------------------


def eval_G3(state, grid, dealias=False):
    """Kinematic remainder G3 = -u_h|_Sigma . D eta."""
    Deta = grid.horizontal_gradient(state.eta, surface=True)
    u_surf = _trace(state.u)
    out = -np.einsum("l...,l...->...", u_surf[: grid.d - 1], Deta)
    return grid.dealias(out, surface=True) if dealias else out


def eval_G4(state, geom, eq, law, mu, mu_prime, dealias=False):
    """Stress-balance remainder G4 (d surface components).

    Horizontal components come from projecting the covariant stress balance
    along the tangents tau^i = e_i + d_i eta e_d, the vertical one from the
    normal projection scaled by |N|^{-2}; both reduce to quadratic terms in
    (eta, grad u, A - I) plus the surface pressure remainder.
    """
    grid = geom.grid
    d = grid.d
    check_viscosities(mu, mu_prime, d)
    eta = state.eta
    q_s = _trace(state.q)

    du_s = _trace(_first_gradients(state.u, grid))     # (l, m) traces
    Adelta_s = _trace(geom.A.copy())
    for i in range(d):
        Adelta_s[i, i] -= 1.0
    N = geom.N
    N2 = np.einsum("k...,k...->...", N, N)
    Deta = grid.horizontal_gradient(eta, surface=True)

    # symmetric combination ((A-I) grad u + transpose) contracted pointwise
    AdG = (np.einsum("km...,lm...->kl...", Adelta_s, du_s)
           + np.einsum("lm...,km...->kl...", Adelta_s, du_s))
    Du_s = du_s + np.swapaxes(du_s, 0, 1)              # flat D u at surface

    G4 = np.zeros((d,) + grid.shape_surface)
    for i in range(d - 1):
        tau = np.zeros_like(N)
        tau[i] = 1.0
        tau[d - 1] = Deta[i]
        term12 = -mu * sum(
            Deta[l] * (du_s[l, i] + du_s[i, l]) for l in range(d - 1))
        term3 = mu * Deta[i] * np.einsum("k...,k...->...", N, Du_s[:, d - 1])
        term4 = mu * np.einsum("kl...,l...,k...->...", AdG, N, tau)
        G4[i] = term12 + term3 + term4

    NDN_A = np.einsum("kl...,l...,k...->...", AdG, N, N)
    NDN = np.einsum("m...,ml...,l...->...", N, Du_s, N)
    offdiag = NDN - Du_s[d - 1, d - 1] * N[d - 1] * N[d - 1]
    R_P = remainder_P_h_inverse(q_s, eta, law)
    G4[d - 1] = (mu * NDN_A / N2
                 + mu * NDN * (1.0 / N2 - 1.0)
                 + mu * offdiag
                 + (mu_prime - 2.0 * mu / d)
                 * np.einsum("lm...,lm...->...", Adelta_s, du_s)
                 - R_P)
    return grid.dealias(G4, surface=True) if dealias else G4


def diagnostic_Q(state, rates, geom, eq, law, rho=None):
    """Transport diagnostic: the damped combination

        Q = d_t q - J^{-1} d_t phi d_d q + u . grad_A q
          = -h'(rho_bar) div(rho_bar u) + G12.

    Returns the second (divergence) form together with the norm of the
    discrepancy between the two forms, which vanishes exactly on states
    satisfying the discrete mass equation.
    """
    grid = geom.grid
    q, u = state.q, state.u
    if rho is None:
        rho = density_from_q(q, geom, eq, law)
    dq_t = rates.dq if (rates is not None and rates.dq is not None) \
        else np.zeros_like(q)
    dphi_t = _lifted_rate(rates, grid)

    gradq = grid.gradient(q)
    uA = np.einsum("l...,lk...->k...", u, geom.A)
    G11 = (1.0 / geom.J) * dphi_t * gradq[-1] \
        - np.einsum("k...,k...->...", uA, gradq)
    form_a = dq_t - G11

    G1 = eval_G1(state, rates, geom, eq, law, rho=rho)
    G12 = G1 - G11
    div_ru = _flat_div(eq.rho_bar * u, grid)
    form_b = -eq.h_prime_bar * div_ru + G12

    disc = float(np.sqrt(grid.l2_volume_sq(form_a - form_b)))
    return form_b, disc


def evaluate_bundle(state, rates, geom, eq, law, mu, mu_prime, dealias=False):
    """Evaluate every remainder once, sharing the reconstructed density."""
    grid = geom.grid
    rho = density_from_q(state.q, geom, eq, law)
    G1 = eval_G1(state, rates, geom, eq, law, rho=rho, dealias=dealias)
    G2 = eval_G2(state, rates, geom, eq, law, mu, mu_prime, rho=rho,
                 dealias=dealias)
    G3 = eval_G3(state, grid, dealias=dealias)
    G4 = eval_G4(state, geom, eq, law, mu, mu_prime, dealias=dealias)
    Q, disc = diagnostic_Q(state, rates, geom, eq, law, rho=rho)
    return NonlinearBundle(
        G1=G1, G2=G2, G3=G3, G4=G4, rho=rho,
        R_hinv=remainder_h_inverse(state.q, geom, eq, law),
        R_Phinv=remainder_P_h_inverse(_trace(state.q), state.eta, law),
        Q_diag=Q, Q_discrepancy=disc)


# -- both sides of the rearrangement ------------------------------------------


def _flat_div(u, grid):
    out = grid.vderiv(u[-1])
    for i in range(grid.d - 1):
        out = out + grid.hderiv(u[i], i)
    return out


def _flat_stress(u, grid, mu, mu_prime):
    d = grid.d
    du = _first_gradients(u, grid)
    S = mu * (du + np.swapaxes(du, 0, 1))
    div = np.trace(du, axis1=0, axis2=1)
    for i in range(d):
        S[i, i] += (mu_prime - 2.0 * mu / d) * div
    return S


def _flat_div_stress(u, grid, mu, mu_prime):
    S = _flat_stress(u, grid, mu, mu_prime)
    d = grid.d
    out = np.zeros_like(u)
    for i in range(d):
        out[i] = _flat_div(S[i], grid)
    return out


def split_residuals(state, rates, geom, eq, law, mu, mu_prime):
    """Residuals of the perturbed linear form with its G remainders."""
    grid = geom.grid
    rho = density_from_q(state.q, geom, eq, law)
    G1 = eval_G1(state, rates, geom, eq, law, rho=rho)
    G2 = eval_G2(state, rates, geom, eq, law, mu, mu_prime, rho=rho)
    G3 = eval_G3(state, grid)
    G4 = eval_G4(state, geom, eq, law, mu, mu_prime)

    s1 = rates.dq + eq.h_prime_bar * _flat_div(eq.rho_bar * state.u, grid) - G1
    gradq = grid.gradient(state.q)
    s2 = (eq.rho_bar * rates.du + eq.rho_bar * gradq
          - _flat_div_stress(state.u, grid, mu, mu_prime) - G2)
    s3 = rates.deta - _trace(state.u[grid.d - 1]) - G3

    S_flat = _trace(_flat_stress(state.u, grid, mu, mu_prime))
    q_s = _trace(state.q)
    s4 = -S_flat[:, grid.d - 1]
    s4[grid.d - 1] += law.rho_star * (q_s - law.g * state.eta)
    s4 = s4 - G4
    return {"mass": s1, "momentum": s2, "kinematic": s3, "stress": s4}


def full_residuals(state, rates, geom, eq, law, mu, mu_prime):
    """Residuals of the covariant system evaluated directly."""
    grid = geom.grid
    d = grid.d
    rho = density_from_q(state.q, geom, eq, law)
    dphi_t = _lifted_rate(rates, grid)
    invJ = 1.0 / geom.J

    gradq = grid.gradient(state.q)
    r1 = (rates.dq - invJ * dphi_t * gradq[-1]
          + (law.dP(rho) / rho) * div_A(rho * state.u, geom))

    du = _first_gradients(state.u, grid)
    transport = np.einsum("l...,lk...,ik...->i...", state.u, geom.A, du)
    r2 = (rho * (rates.du - invJ * dphi_t * du[:, -1] + transport)
          + rho * np.einsum("ik...,k...->i...", geom.A, gradq)
          - div_matrix_A(stress_A(state.u, geom, mu, mu_prime), geom))

    u_s = _trace(state.u)
    r3 = rates.deta - np.einsum("k...,k...->...", u_s, geom.N)

    S_A = _trace(stress_A(state.u, geom, mu, mu_prime))
    q_s = _trace(state.q)
    R_P = remainder_P_h_inverse(q_s, state.eta, law)
    coef = law.rho_star * q_s - (law.rho_star * law.g * state.eta - R_P)
    r4 = coef * geom.N - np.einsum("ij...,j...->i...", S_A, geom.N)
    return {"mass": r1, "momentum": r2, "kinematic": r3, "stress": r4}

"""Pressure laws and the stratified hydrostatic background.

A barotropic pressure law P(rho) that is positive, smooth, and strictly
increasing defines the enthalpy

    h(z) = integral from rho_star to z of P'(s)/s ds,

where ``rho_star = P^{-1}(p_atm)`` is the surface density.  The background
density solves d(P(rho_bar))/dy = -g rho_bar with P(rho_bar(0)) = p_atm,
which inverts to rho_bar(y) = h^{-1}(-g y).  A layer of depth b admits this
balance exactly when g*b stays inside the range of h, i.e.

    0 < b < (1/g) * integral from rho_star to infinity of P'(s)/s ds.

Two closed-form laws are built in (isothermal P = K rho and the gamma law
P = K rho^gamma); user-supplied laws go through adaptive quadrature and a
safeguarded Newton inversion.  User laws are assumed twice continuously
differentiable; that assumption is documented, not verified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import AdmissibilityError, DomainError

__all__ = [
    "PressureLaw",
    "IsothermalLaw",
    "GammaLaw",
    "CustomLaw",
    "EquilibriumProfile",
    "make_law",
    "enthalpy",
    "enthalpy_inverse",
    "admissible_depth_bound",
    "solve_equilibrium",
]

_NEWTON_TOL = 1e-12
_CUTOFF = 1e8  # upper integration limit probing divergence of user laws


class PressureLaw:
    """Common interface; concrete laws define P, P', P'' and rho_star."""

    kind = "custom"
    p_atm: float
    g: float

    def P(self, z):
        raise NotImplementedError

    def dP(self, z):
        raise NotImplementedError

    def d2P(self, z):
        raise NotImplementedError

    @property
    def rho_star(self):
        raise NotImplementedError

    def h_prime(self, z):
        """h'(z) = P'(z)/z."""
        z = np.asarray(z, dtype=float)
        _require_positive(z)
        return self.dP(z) / z

    # Generic formulas used by the Taylor-remainder evaluations.  With
    # z = h^{-1}(w):  (h^{-1})'(w) = z/P'(z), (P o h^{-1})'(w) = z, hence
    # (P o h^{-1})''(w) = z/P'(z).
    def h_inverse_d1(self, w):
        z = self.h_inverse(w)
        return z / self.dP(z)

    def h_inverse_d2(self, w):
        z = self.h_inverse(w)
        dP = self.dP(z)
        return (1.0 / dP - z * self.d2P(z) / dP**2) * (z / dP)

    def P_h_inverse_d2(self, w):
        return self.h_inverse_d1(w)

    # Defaults for laws without closed forms; built-ins override.
    def _h_scalar(self, z):
        """Adaptive quadrature of P'(s)/s, split into log-spaced segments
        so wide integration ranges keep full accuracy."""
        a, sign = self.rho_star, 1.0
        if z < a:
            a, z, sign = z, a, -1.0
        total = 0.0
        lo = a
        while lo < z:
            hi = min(lo * 10.0, z)
            total += quad(lambda s: self.dP(s) / s, lo, hi,
                          epsabs=1e-14, epsrel=1e-13)[0]
            lo = hi
        return sign * total

    def h(self, z):
        z = np.asarray(z, dtype=float)
        _require_positive(z)
        flat = np.atleast_1d(z).ravel()
        out = np.array([self._h_scalar(zi) for zi in flat])
        return _reshape_like(out, z)

    def h_inverse(self, w, rho_min=1e-12):
        w = np.asarray(w, dtype=float)
        flat = np.atleast_1d(w).ravel()
        out = np.array([self._invert_scalar(wi, rho_min) for wi in flat])
        return _reshape_like(out, w)

    def _invert_scalar(self, w, rho_min=1e-12):
        lo = hi = self.rho_star
        while float(self.h(lo)) > w:
            lo /= 2.0
            if lo < rho_min:
                raise DomainError(f"enthalpy value {w} below h({rho_min})")
        while float(self.h(hi)) < w:
            hi *= 2.0
            if hi > 1e30:
                raise DomainError(f"enthalpy value {w} outside range of h")
        z = 0.5 * (lo + hi)
        for _ in range(100):
            fz = float(self.h(z)) - w
            if abs(fz) <= _NEWTON_TOL * max(1.0, abs(w)):
                return z
            znew = z - fz / float(self.h_prime(z))
            if not (lo < znew < hi):
                # bisection safeguard
                if fz > 0:
                    hi = z
                else:
                    lo = z
                znew = 0.5 * (lo + hi)
            elif fz > 0:
                hi = z
            else:
                lo = z
            z = znew
        return brentq(lambda s: float(self.h(s)) - w, lo, hi, xtol=1e-14)

    def depth_bound(self):
        """(1/g) * integral of P'(s)/s from rho_star to infinity, or +inf."""
        h_mid = self._h_scalar(_CUTOFF / 10.0)
        h_cut = self._h_scalar(_CUTOFF)
        if h_cut - h_mid > 1e-6 * max(1.0, abs(h_cut)):
            return math.inf
        return h_cut / self.g


@dataclass(frozen=True)
class IsothermalLaw(PressureLaw):
    """P(rho) = K rho; enthalpy K*log(z/rho_star), inverse rho_star*exp(w/K)."""

    K: float = 1.0
    p_atm: float = 1.0
    g: float = 1.0
    kind = "isothermal"

    def __post_init__(self):
        if self.K <= 0 or self.p_atm <= 0 or self.g <= 0:
            raise DomainError("isothermal law requires K, p_atm, g > 0")

    @property
    def rho_star(self):
        return self.p_atm / self.K

    def P(self, z):
        return self.K * np.asarray(z, dtype=float)

    def dP(self, z):
        return self.K * np.ones_like(np.asarray(z, dtype=float))

    def d2P(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def h(self, z):
        z = np.asarray(z, dtype=float)
        _require_positive(z)
        return self.K * np.log(z / self.rho_star)

    def h_inverse(self, w):
        w = np.asarray(w, dtype=float)
        return self.rho_star * np.exp(w / self.K)

    def depth_bound(self):
        return math.inf


@dataclass(frozen=True)
class GammaLaw(PressureLaw):
    """P(rho) = K rho^gamma with gamma > 1."""

    K: float = 1.0
    gamma: float = 1.4
    p_atm: float = 1.0
    g: float = 1.0
    kind = "gamma_law"

    def __post_init__(self):
        if self.K <= 0 or self.p_atm <= 0 or self.g <= 0:
            raise DomainError("gamma law requires K, p_atm, g > 0")
        if self.gamma <= 1.0:
            raise DomainError("gamma law requires gamma > 1")

    @property
    def rho_star(self):
        return (self.p_atm / self.K) ** (1.0 / self.gamma)

    def P(self, z):
        return self.K * np.asarray(z, dtype=float) ** self.gamma

    def dP(self, z):
        return self.K * self.gamma * np.asarray(z, dtype=float) ** (self.gamma - 1.0)

    def d2P(self, z):
        g_ = self.gamma
        return self.K * g_ * (g_ - 1.0) * np.asarray(z, dtype=float) ** (g_ - 2.0)

    def h(self, z):
        z = np.asarray(z, dtype=float)
        _require_positive(z)
        g_ = self.gamma
        return self.K * g_ / (g_ - 1.0) * (z ** (g_ - 1.0) - self.rho_star ** (g_ - 1.0))

    def h_inverse(self, w):
        w = np.asarray(w, dtype=float)
        g_ = self.gamma
        base = self.rho_star ** (g_ - 1.0) + (g_ - 1.0) * w / (self.K * g_)
        if np.any(base <= 0):
            raise DomainError("enthalpy value outside the range of h")
        return base ** (1.0 / (g_ - 1.0))

    def depth_bound(self):
        return math.inf


class CustomLaw(PressureLaw):
    """Wrap callables (P, P', P'') into a pressure law.

    The callables must realize a positive, smooth, strictly increasing P on
    (0, inf); twice continuous differentiability is assumed.
    """

    kind = "custom"

    def __init__(self, P, dP, d2P, p_atm, g):
        self._P, self._dP, self._d2P = P, dP, d2P
        self.p_atm = float(p_atm)
        self.g = float(g)
        if self.p_atm <= 0 or self.g <= 0:
            raise DomainError("custom law requires p_atm, g > 0")
        self._rho_star = self._solve_rho_star()

    def _solve_rho_star(self):
        lo, hi = 1e-8, 1.0
        while self._P(hi) < self.p_atm:
            hi *= 2.0
            if hi > 1e30:
                raise DomainError("p_atm not attained by the pressure law")
        while self._P(lo) > self.p_atm:
            lo /= 2.0
            if lo < 1e-300:
                raise DomainError("p_atm not attained by the pressure law")
        return brentq(lambda z: self._P(z) - self.p_atm, lo, hi, xtol=1e-15)

    @property
    def rho_star(self):
        return self._rho_star

    def P(self, z):
        return _vec(self._P, z)

    def dP(self, z):
        return _vec(self._dP, z)

    def d2P(self, z):
        return _vec(self._d2P, z)


@dataclass(frozen=True)
class EquilibriumProfile:
    """Background density and derived coefficients tabulated on the
    vertical nodes; nodes run from the surface (0) down to -b."""

    nodes: np.ndarray
    rho_bar: np.ndarray
    h_prime_bar: np.ndarray       # h'(rho_bar) = P'(rho_bar)/rho_bar
    P_prime_bar: np.ndarray
    b: float

    def h_bar(self, g):
        """h(rho_bar) on the nodes; equals -g*y exactly by construction."""
        return -g * self.nodes


# -- module-level operations --------------------------------------------


def make_law(kind, K=1.0, gamma=1.4, p_atm=1.0, g=1.0):
    if kind == "isothermal":
        return IsothermalLaw(K=K, p_atm=p_atm, g=g)
    if kind == "gamma_law":
        return GammaLaw(K=K, gamma=gamma, p_atm=p_atm, g=g)
    raise DomainError(f"unknown pressure-law kind {kind!r}")


def enthalpy(law, z):
    return law.h(z)


def enthalpy_inverse(law, w):
    return law.h_inverse(w)


def admissible_depth_bound(law):
    return law.depth_bound()


def solve_equilibrium(law, b, nodes):
    """Tabulate the hydrostatic background on the given vertical nodes.

    Raises :class:`AdmissibilityError` when the depth exceeds the bound.
    """
    b = float(b)
    bound = law.depth_bound()
    if not 0 < b < bound:
        raise AdmissibilityError(
            f"depth {b} outside the admissible range (0, {bound})")
    nodes = np.asarray(nodes, dtype=float)
    tol = 1e-12 * max(1.0, b)
    if nodes.min() < -b - tol or nodes.max() > tol:
        raise ValueError("vertical nodes must lie in [-b, 0]")
    rho = law.h_inverse(-law.g * nodes)
    return EquilibriumProfile(
        nodes=nodes,
        rho_bar=rho,
        h_prime_bar=law.dP(rho) / rho,
        P_prime_bar=law.dP(rho),
        b=b,
    )


def _require_positive(z):
    if np.any(np.asarray(z) <= 0):
        raise DomainError("density must be positive")


def _reshape_like(out, template):
    arr = np.asarray(template)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def _vec(fn, z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return float(fn(float(z)))
    flat = np.array([fn(float(s)) for s in z.ravel()])
    return flat.reshape(z.shape)

"""Flattening map and covariant differential operators.

A surface elevation ``eta`` generates the map

    Phi(x) = (x_h, x_d + phi),    phi = (1 + x_d/b) * P(eta),

where ``P(eta)`` extends eta into the layer mode by mode with the decay
factor ``exp(|kappa| x_d)`` (the zero mode extends as a constant).  The
Jacobian ``J = 1 + d_d phi`` and the matrix ``A = (grad Phi^{-1})^T`` carry
all the geometry: ``A`` equals the identity except in its last column,
whose entries are ``(-d_i phi / J, 1/J)``.

Covariant operators built from A:

    (grad_A f)_i   = A_{ij} d_j f
    div_A u        = A_{ik} d_k u_i
    D_A u          = grad_A u + (grad_A u)^T,   D0_A = D_A - (2/d) div_A I
    S_A u          = mu * D0_A u + mu' * div_A u * I

with everything evaluated by the grid's spectral derivatives and pointwise
products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError

__all__ = [
    "Geometry",
    "poisson_extend",
    "lift_surface",
    "build_geometry",
    "grad_A",
    "div_A",
    "grad_vector_A",
    "sym_grad_A",
    "dev_sym_grad_A",
    "stress_A",
    "div_matrix_A",
    "check_viscosities",
]

DEGENERACY_THRESHOLD = 0.05


@dataclass
class Geometry:
    """Derived fields of the flattening map for one surface snapshot."""

    grid: object = field(repr=False)
    eta: np.ndarray = field(repr=False)
    eta_bar: np.ndarray = field(repr=False)   # Poisson extension of eta
    phi: np.ndarray = field(repr=False)
    grad_phi: np.ndarray = field(repr=False)  # (d, *vol), vertical last row
    J: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)         # (d, d, *vol)
    N: np.ndarray = field(repr=False)         # (d, *surf), (-D eta, 1)
    min_J: float = 0.0

    @property
    def is_flat(self):
        return float(np.max(np.abs(self.eta))) == 0.0


def poisson_extend(eta, grid):
    """Extend a surface field into the layer: mode k picks up the factor
    exp(|kappa_k| x_d); the zero mode is constant in depth."""
    F = grid.hfft(eta, surface=True)
    mag = grid.kappa_mag_r(surface=True)
    prof = np.exp(mag[..., None] * grid.nodes)
    return grid.hifft(F[..., None] * prof)


def lift_surface(eta, grid):
    """Linear lift eta -> (1 + x_d/b) * P(eta) used for phi and, because the
    map is linear, for time derivatives of phi as well."""
    ext = poisson_extend(eta, grid)
    return (1.0 + grid.nodes / grid.b) * ext


def build_geometry(eta, grid):
    """Assemble all derived fields; raises :class:`GeometryError` when the
    Jacobian drops to or below the degeneracy threshold."""
    eta = np.asarray(eta, dtype=float)
    eta_bar = poisson_extend(eta, grid)
    phi = (1.0 + grid.nodes / grid.b) * eta_bar
    grad_phi = grid.gradient(phi)
    J = 1.0 + grad_phi[-1]
    min_J = float(np.min(J))
    if min_J <= DEGENERACY_THRESHOLD:
        raise GeometryError(
            f"flattening map degenerate: min J = {min_J:.3g}", min_J)

    d = grid.d
    A = np.zeros((d, d) + grid.shape_volume)
    for i in range(d):
        A[i, i] = 1.0
    invJ = 1.0 / J
    for i in range(d - 1):
        A[i, d - 1] = -grad_phi[i] * invJ
    A[d - 1, d - 1] = invJ

    N = np.zeros((d,) + grid.shape_surface)
    Deta = grid.horizontal_gradient(eta, surface=True)
    for i in range(d - 1):
        N[i] = -Deta[i]
    N[d - 1] = 1.0
    return Geometry(grid=grid, eta=eta, eta_bar=eta_bar, phi=phi,
                    grad_phi=grad_phi, J=J, A=A, N=N, min_J=min_J)


def grad_A(f, geom):
    """(grad_A f)_i = A_{ij} d_j f for a volume scalar."""
    g = geom.grid.gradient(f)
    return np.einsum("ij...,j...->i...", geom.A, g)


def grad_vector_A(u, geom):
    """(grad_A u)_{ij} = A_{jk} d_k u_i for a volume vector."""
    grid = geom.grid
    du = np.stack([grid.gradient(u[i]) for i in range(grid.d)])  # (i, k, ...)
    return np.einsum("jk...,ik...->ij...", geom.A, du)


def div_A(u, geom):
    """div_A u = A_{ik} d_k u_i."""
    grid = geom.grid
    du = np.stack([grid.gradient(u[i]) for i in range(grid.d)])
    return np.einsum("ik...,ik...->...", geom.A, du)


def sym_grad_A(u, geom):
    g = grad_vector_A(u, geom)
    return g + np.swapaxes(g, 0, 1)


def dev_sym_grad_A(u, geom):
    """Trace-free symmetric covariant gradient D0_A u."""
    grid = geom.grid
    D = sym_grad_A(u, geom)
    div = div_A(u, geom)
    for i in range(grid.d):
        D[i, i] -= (2.0 / grid.d) * div
    return D


def check_viscosities(mu, mu_prime, d):
    """Shear viscosity positive; bulk viscosity positive in 2D, nonnegative
    in 3D (needed for the coercivity of the dissipation)."""
    ok = mu > 0 and (mu_prime > 0 if d == 2 else mu_prime >= 0)
    if not ok:
        raise ConfigurationError(
            f"inadmissible viscosities mu={mu}, mu'={mu_prime} for d={d}: "
            "require mu>0 and mu'>0 (d=2) or mu'>=0 (d=3)")


def stress_A(u, geom, mu, mu_prime):
    """Viscous stress S_A u = mu * D0_A u + mu' * div_A u * I."""
    grid = geom.grid
    check_viscosities(mu, mu_prime, grid.d)
    S = mu * dev_sym_grad_A(u, geom)
    div = div_A(u, geom)
    for i in range(grid.d):
        S[i, i] += mu_prime * div
    return S


def div_matrix_A(T, geom):
    """(div_A T)_i = A_{jk} d_k T_{ij} for a matrix field."""
    grid = geom.grid
    d = grid.d
    out = np.zeros((d,) + grid.shape_volume)
    for i in range(d):
        dT = np.stack([grid.gradient(T[i, j]) for j in range(d)])  # (j, k, ...)
        out[i] = np.einsum("jk...,jk...->...", geom.A, dT)
    return out

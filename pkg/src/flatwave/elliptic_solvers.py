"""Direct per-mode solvers for the constant-coefficient layer problems.

Both boundary-value problems decouple across horizontal Fourier modes into
small dense systems in the vertical coordinate, solved directly with
boundary rows substituted for the collocation rows at the two endpoints.

Elastic (Lame) problem:

    -mu Lap u - ((d-2)/d mu + mu') grad div u = f   in the layer,
    -(S u) e_d = psi                                on the surface,
    u = 0                                           at the bottom.

Stokes problem:

    -mu Lap u + grad p = f,   div u = h   in the layer,
    u = psi on the surface,   u = phi_b at the bottom,

with the pressure fixed per mode by a zero vertical mean (only grad p is
determined by the data).  Every solve certifies its own discrete residual
and raises :class:`SolverError` rather than returning an uncertified field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, SolverError
from .geometry import check_viscosities

__all__ = [
    "EllipticProblem",
    "LameSolution",
    "StokesSolution",
    "solve_lame",
    "solve_stokes",
    "lame_apply",
    "surface_traction",
    "stokes_apply",
]

_RESIDUAL_TOL = 1e-9


@dataclass
class EllipticProblem:
    """Data bundle for either problem kind.

    ``f`` is the volume forcing (d, *vol); ``psi`` the surface data
    (d, *surf); ``h`` (volume scalar) and ``phi_b`` (d, *surf) apply to the
    Stokes problem only.
    """

    kind: str
    f: np.ndarray
    psi: np.ndarray
    mu: float
    mu_prime: float = 0.0
    h: np.ndarray | None = None
    phi_b: np.ndarray | None = None


@dataclass
class LameSolution:
    u: np.ndarray
    residuals: dict = field(default_factory=dict)


@dataclass
class StokesSolution:
    u: np.ndarray
    grad_p: np.ndarray
    residuals: dict = field(default_factory=dict)


# -- operator applications (used to manufacture data and certify) -----------


def lame_apply(u, grid, mu, mu_prime):
    """-mu Lap u - ((d-2)/d mu + mu') grad div u, spectrally."""
    d = grid.d
    c = (d - 2.0) / d * mu + mu_prime
    lap = np.zeros_like(u)
    for i in range(d):
        lap[i] = grid.vderiv(u[i], 2)
        for j in range(d - 1):
            lap[i] += grid.hderiv(u[i], j, 2)
    div = grid.vderiv(u[-1])
    for j in range(d - 1):
        div = div + grid.hderiv(u[j], j)
    out = -mu * lap
    for i in range(d - 1):
        out[i] -= c * grid.hderiv(div, i)
    out[d - 1] -= c * grid.vderiv(div)
    return out


def surface_traction(u, grid, mu, mu_prime):
    """psi = -(S u) e_d evaluated at the surface nodes."""
    d = grid.d
    du = np.stack([np.stack([
        grid.hderiv(u[i], j) if j < d - 1 else grid.vderiv(u[i])
        for j in range(d)]) for i in range(d)])
    div = np.trace(du, axis1=0, axis2=1)
    psi = np.zeros((d,) + grid.shape_surface)
    for i in range(d - 1):
        psi[i] = -mu * (du[i, d - 1][..., 0] + du[d - 1, i][..., 0])
    psi[d - 1] = -(2.0 * mu * du[d - 1, d - 1][..., 0]
                   + (mu_prime - 2.0 * mu / d) * div[..., 0])
    return psi


def stokes_apply(u, p, grid, mu):
    """f = -mu Lap u + grad p, spectrally."""
    d = grid.d
    out = np.zeros_like(u)
    for i in range(d):
        lap = grid.vderiv(u[i], 2)
        for j in range(d - 1):
            lap += grid.hderiv(u[i], j, 2)
        out[i] = -mu * lap
    for i in range(d - 1):
        out[i] += grid.hderiv(p, i)
    out[d - 1] += grid.vderiv(p)
    return out


# -- per-mode assembly --------------------------------------------------------


def _lame_mode_matrix(grid, kap, mu, mu_prime):
    d = grid.d
    nv = grid.n_v
    D = grid.Dv
    D2 = D @ D
    I = np.eye(nv)
    c = (d - 2.0) / d * mu + mu_prime
    k2 = float(np.dot(kap, kap))
    A = np.zeros((d * nv, d * nv), dtype=complex)

    def blk(i, j):
        return slice(i * nv, (i + 1) * nv), slice(j * nv, (j + 1) * nv)

    for i in range(d):
        A[blk(i, i)] += -mu * (D2 - k2 * I)
    for i in range(d - 1):
        for j in range(d - 1):
            A[blk(i, j)] += c * kap[i] * kap[j] * I
        A[blk(i, d - 1)] += -c * (1j * kap[i]) * D
        A[blk(d - 1, i)] += -c * (1j * kap[i]) * D
    A[blk(d - 1, d - 1)] += -c * D2

    # boundary rows: surface traction at node 0, no-slip at node nv-1
    for i in range(d):
        rs = i * nv
        A[rs, :] = 0.0
        A[rs + nv - 1, :] = 0.0
        A[rs + nv - 1, rs + nv - 1] = 1.0
    for i in range(d - 1):
        rs = i * nv
        A[rs, rs:rs + nv] = -mu * D[0, :]
        A[rs, (d - 1) * nv] += -mu * (1j * kap[i])
    rs = (d - 1) * nv
    for j in range(d - 1):
        A[rs, j * nv] += -(mu_prime - 2.0 * mu / d) * (1j * kap[j])
    A[rs, rs:rs + nv] += -(2.0 * mu + mu_prime - 2.0 * mu / d) * D[0, :]
    return A


def solve_lame(problem, grid):
    """Solve the elastic layer problem mode by mode."""
    check_viscosities(problem.mu, problem.mu_prime, grid.d)
    d = grid.d
    nv = grid.n_v
    fh = grid.hfft(problem.f)
    psih = grid.hfft(problem.psi, surface=True)
    uh = np.zeros_like(fh)
    data_scale = max(_maxabs(fh), _maxabs(psih), 1e-300)
    worst_alg = 0.0
    for idx, kap in grid.iter_modes_r():
        A = _lame_mode_matrix(grid, kap, problem.mu, problem.mu_prime)
        b = np.zeros(d * nv, dtype=complex)
        for i in range(d):
            b[i * nv:(i + 1) * nv] = fh[(i,) + idx]
            b[i * nv] = psih[(i,) + idx]
            b[i * nv + nv - 1] = 0.0
        try:
            sol = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular elastic mode matrix at {idx}",
                              mode_index=idx) from exc
        worst_alg = max(worst_alg, _maxabs(A @ sol - b) / data_scale)
        for i in range(d):
            uh[(i,) + idx] = sol[i * nv:(i + 1) * nv]
    u = grid.hifft(uh)

    res_pde = lame_apply(u, grid, problem.mu, problem.mu_prime) - problem.f
    res_pde[..., 0] = 0.0
    res_pde[..., -1] = 0.0
    res_bc = surface_traction(u, grid, problem.mu, problem.mu_prime) - problem.psi
    res_bot = u[..., -1]
    scale = max(_maxabs(problem.f), _maxabs(problem.psi), _maxabs(u), 1e-300)
    residuals = {
        "algebraic": worst_alg,
        "interior": _maxabs(res_pde) / scale,
        "surface": _maxabs(res_bc) / scale,
        "bottom": _maxabs(res_bot) / scale,
    }
    if worst_alg > _RESIDUAL_TOL:
        raise SolverError(
            f"elastic solve residual {worst_alg:.3e} above {_RESIDUAL_TOL}")
    return LameSolution(u=u, residuals=residuals)


def _stokes_mode_system(grid, kap, mu):
    d = grid.d
    nv = grid.n_v
    D = grid.Dv
    D2 = D @ D
    I = np.eye(nv)
    k2 = float(np.dot(kap, kap))
    zero_mode = k2 == 0.0
    nrows = d * nv + nv + (1 if zero_mode else 0)
    ncols = (d + 1) * nv
    A = np.zeros((nrows, ncols), dtype=complex)

    for i in range(d):
        rs = i * nv
        A[rs:rs + nv, rs:rs + nv] = -mu * (D2 - k2 * I)
        if i < d - 1:
            A[rs:rs + nv, d * nv:] += 1j * kap[i] * I
        else:
            A[rs:rs + nv, d * nv:] += D
        # Dirichlet rows at both endpoints
        A[rs, :] = 0.0
        A[rs, rs] = 1.0
        A[rs + nv - 1, :] = 0.0
        A[rs + nv - 1, rs + nv - 1] = 1.0
    rs = d * nv
    for j in range(d - 1):
        A[rs:rs + nv, j * nv:(j + 1) * nv] = 1j * kap[j] * I
    A[rs:rs + nv, (d - 1) * nv:d * nv] = D
    if zero_mode:
        A[-1, d * nv:] = grid.vweights
    return A


def solve_stokes(problem, grid):
    """Solve the Stokes layer problem mode by mode.

    The zero mode of the divergence data must balance the boundary flux;
    otherwise a :class:`CompatibilityError` is raised.
    """
    d = grid.d
    nv = grid.n_v
    if problem.h is None or problem.phi_b is None:
        raise ValueError("Stokes problem requires h and phi_b")
    fh = grid.hfft(problem.f)
    hh = grid.hfft(problem.h)
    psih = grid.hfft(problem.psi, surface=True)
    phibh = grid.hfft(problem.phi_b, surface=True)

    zero = (0,) * (d - 1)
    flux = float((psih[(d - 1,) + zero] - phibh[(d - 1,) + zero]).real)
    vol_h = float(np.dot(grid.vweights, hh[zero].real))
    scale = max(_maxabs(problem.h), _maxabs(problem.psi),
                _maxabs(problem.phi_b), 1.0)
    if abs(vol_h - flux) > 1e-10 * scale:
        raise CompatibilityError(
            f"divergence data inconsistent with boundary flux: "
            f"int h = {vol_h:.3e}, flux = {flux:.3e}")

    uh = np.zeros_like(fh)
    ph = np.zeros_like(hh)
    data_scale = max(_maxabs(fh), _maxabs(hh), _maxabs(psih),
                     _maxabs(phibh), 1e-300)
    worst_alg = 0.0
    for idx, kap in grid.iter_modes_r():
        A = _stokes_mode_system(grid, kap, problem.mu)
        b = np.zeros(A.shape[0], dtype=complex)
        for i in range(d):
            b[i * nv:(i + 1) * nv] = fh[(i,) + idx]
            b[i * nv] = psih[(i,) + idx]
            b[i * nv + nv - 1] = phibh[(i,) + idx]
        b[d * nv:(d + 1) * nv] = hh[idx]
        # row equilibration keeps the saddle blocks comparably scaled
        rs = np.max(np.abs(A), axis=1)
        rs[rs == 0] = 1.0
        Aeq = A / rs[:, None]
        beq = b / rs
        if A.shape[0] == A.shape[1]:
            try:
                sol = np.linalg.solve(Aeq, beq)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular Stokes mode at {idx}",
                                  mode_index=idx) from exc
        else:
            sol, _, rank, _ = np.linalg.lstsq(Aeq, beq, rcond=None)
            if rank < A.shape[1] - 1:
                raise SolverError(f"rank-deficient Stokes mode at {idx}",
                                  mode_index=idx)
        worst_alg = max(worst_alg, _maxabs(A @ sol - b) / data_scale)
        for i in range(d):
            uh[(i,) + idx] = sol[i * nv:(i + 1) * nv]
        ph[idx] = sol[d * nv:]
    u = grid.hifft(uh)
    p = grid.hifft(ph)
    grad_p = grid.gradient(p)

    res_mom = stokes_apply(u, p, grid, problem.mu) - problem.f
    res_mom[..., 0] = 0.0
    res_mom[..., -1] = 0.0
    div = grid.vderiv(u[-1])
    for j in range(d - 1):
        div = div + grid.hderiv(u[j], j)
    res_div = div - problem.h
    res_top = u[..., 0] - problem.psi
    res_bot = u[..., -1] - problem.phi_b
    scale = max(_maxabs(problem.f), _maxabs(problem.h), _maxabs(problem.psi),
                _maxabs(problem.phi_b), _maxabs(u), _maxabs(grad_p), 1e-300)
    residuals = {
        "algebraic": worst_alg,
        "momentum": _maxabs(res_mom) / scale,
        "divergence": _maxabs(res_div) / scale,
        "surface": _maxabs(res_top) / scale,
        "bottom": _maxabs(res_bot) / scale,
    }
    if worst_alg > _RESIDUAL_TOL:
        raise SolverError(
            f"Stokes solve residual {worst_alg:.3e} above {_RESIDUAL_TOL}")
    return StokesSolution(u=u, grad_p=grad_p, residuals=residuals)


def _maxabs(a):
    return float(np.max(np.abs(a))) if a is not None and np.size(a) else 0.0

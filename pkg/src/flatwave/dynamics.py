"""Time integration of the perturbation system.

The update follows the perturbed-linear splitting: the constant-coefficient
block

    d_t q = -h'(rho_bar) div(rho_bar u)
    d_t u = -grad q + rho_bar^{-1} div S u
    d_t eta = u_d|_surface

is treated implicitly (per horizontal mode, with q and eta eliminated into
the velocity solve and the stress/no-slip rows substituted at the
boundaries), while the geometry coupling and every quadratic remainder G1 -
G4 are treated explicitly.  Two schemes are provided: first-order IMEX Euler
and IMEX BDF2 with extrapolated explicit terms (bootstrapped by one Euler
step).

The dynamic boundary row keeps the implicit coupling

    rho_star q^{n+1} - (S u^{n+1})_{dd} - rho_star g eta^{n+1} = G4_d

by substituting the q and eta updates, which is what makes the gravity
coupling unconditionally stable in the linear regime.

For frozen-nonlinearity runs (a diagnostic mode) each Fourier mode evolves
by a precomputed dense propagation matrix; `linear_update_matrix` exposes
those matrices for spectral-radius checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .discretization import Grid
from .equilibrium import EquilibriumProfile, PressureLaw
from .errors import BlowupError, SolverError, StepRejectedError
from .geometry import build_geometry, check_viscosities
from .nonlinear_terms import density_from_q, eval_G1, eval_G2, eval_G3, eval_G4
from .state import State, StateRates

__all__ = [
    "System",
    "StepperConfig",
    "SampleWindow",
    "Trajectory",
    "initialize_state",
    "linear_tendency",
    "kinematic_rate",
    "ImplicitSolver",
    "step",
    "run",
    "linear_update_matrix",
    "cfl_limit",
]

SCHEMES = ("imex_euler", "imex_bdf2")


@dataclass
class System:
    """Grid, background, law, and viscosities bundled for the stepper."""

    grid: Grid
    eq: EquilibriumProfile
    law: PressureLaw
    mu: float
    mu_prime: float

    def __post_init__(self):
        check_viscosities(self.mu, self.mu_prime, self.grid.d)


@dataclass
class StepperConfig:
    dt: float
    scheme: str = "imex_euler"
    cfl_safety: float = 0.9
    freeze_nonlinear: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")


@dataclass
class SampleWindow:
    """A sampled state with its two step-adjacent neighbours (when they
    exist), used for stepper-independent time differencing."""

    state: State
    prev: State | None = None
    next: State | None = None


@dataclass
class Trajectory:
    windows: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    termination: str = "completed"
    diagnostics: dict = field(default_factory=dict)

    @property
    def states(self):
        return [w.state for w in self.windows]

    @property
    def times(self):
        return np.array([w.state.t for w in self.windows])


# -- initial data ------------------------------------------------------------


def initialize_state(grid, family, amplitude):
    """Perturbation families with the bottom condition satisfied exactly."""
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    q = grid.zeros_volume()
    u = grid.zeros_volume((grid.d,))
    eta = grid.zeros_surface()
    x = np.arange(grid.n_h) * grid.L / grid.n_h
    cosx = np.cos(2.0 * np.pi * x / grid.L)
    if grid.d == 3:
        cosx = cosx[:, None] * np.ones(grid.n_h)[None, :]
    y = grid.nodes
    if family == "single_mode_eta":
        eta = amplitude * cosx
    elif family == "q_bump":
        q = amplitude * cosx[..., None] * (1.0 + y / grid.b) ** 2
    elif family == "shear":
        prof = np.sin(np.pi * (y + grid.b) / (2.0 * grid.b)) * (y + grid.b) / grid.b
        u[0] = amplitude * cosx[..., None] * prof
    else:
        raise ValueError(f"unknown initial family {family!r}")
    return State(q=q, u=u, eta=eta, t=0.0)


# -- tendencies ---------------------------------------------------------------


def _flat_div(u, grid):
    out = grid.vderiv(u[-1])
    for i in range(grid.d - 1):
        out = out + grid.hderiv(u[i], i)
    return out


def _flat_div_stress(u, grid, mu, mu_prime):
    d = grid.d
    c = (d - 2.0) / d * mu + mu_prime
    div = _flat_div(u, grid)
    out = np.empty_like(u)
    for i in range(d):
        lap = grid.vderiv(u[i], 2)
        for j in range(d - 1):
            lap += grid.hderiv(u[i], j, 2)
        out[i] = mu * lap
    for i in range(d - 1):
        out[i] += c * grid.hderiv(div, i)
    out[d - 1] += c * grid.vderiv(div)
    return out


def linear_tendency(state, system):
    """Constant-coefficient tendencies of the split system:
    (-h'(rho_bar) div(rho_bar u), -grad q + rho_bar^{-1} div S u, u_d|_S)."""
    grid, eq = system.grid, system.eq
    dq = -eq.h_prime_bar * _flat_div(eq.rho_bar * state.u, grid)
    du = -grid.gradient(state.q) \
        + _flat_div_stress(state.u, grid, system.mu, system.mu_prime) / eq.rho_bar
    deta = state.u[grid.d - 1][..., 0]
    return dq, du, deta


def kinematic_rate(state, geom):
    """d_t eta = u . N on the surface (exact, state-local)."""
    u_s = state.u[..., 0]
    return np.einsum("k...,k...->...", u_s, geom.N)


# -- implicit per-mode solver --------------------------------------------------


class ImplicitSolver:
    """LU-factored per-mode matrices for the implicit velocity update with
    effective step tau (= dt for Euler, 2 dt/3 for BDF2)."""

    def __init__(self, system, tau):
        self.system = system
        self.tau = float(tau)
        grid = system.grid
        self._lus = []
        for _, kap in grid.iter_modes_r():
            A = _implicit_mode_matrix(system, kap, self.tau)
            try:
                self._lus.append(lu_factor(A))
            except Exception as exc:  # pragma: no cover - defensive
                raise SolverError(f"implicit matrix factorization failed: {exc}")

    def solve(self, rhs_hat_list):
        """Solve every mode; rhs_hat_list aligns with grid.iter_modes_r()."""
        return [lu_solve(lu, b) for lu, b in zip(self._lus, rhs_hat_list)]


def _divstress_blocks(grid, kap, mu, mu_prime):
    """Dense blocks of the flat div-stress operator for one mode."""
    d = grid.d
    nv = grid.n_v
    D = grid.Dv
    D2 = D @ D
    I = np.eye(nv)
    c = (d - 2.0) / d * mu + mu_prime
    k2 = float(np.dot(kap, kap))
    V = np.zeros((d * nv, d * nv), dtype=complex)

    def blk(i, j):
        return slice(i * nv, (i + 1) * nv), slice(j * nv, (j + 1) * nv)

    for i in range(d):
        V[blk(i, i)] += mu * (D2 - k2 * I)
    for i in range(d - 1):
        for j in range(d - 1):
            V[blk(i, j)] += -c * kap[i] * kap[j] * I
        V[blk(i, d - 1)] += c * (1j * kap[i]) * D
        V[blk(d - 1, i)] += c * (1j * kap[i]) * D
    V[blk(d - 1, d - 1)] += c * D2
    return V


def _grad_block(grid, kap):
    """NGrad: scalar -> vector gradient blocks for one mode."""
    d = grid.d
    nv = grid.n_v
    G = np.zeros((d * nv, nv), dtype=complex)
    for i in range(d - 1):
        G[i * nv:(i + 1) * nv, :] = 1j * kap[i] * np.eye(nv)
    G[(d - 1) * nv:, :] = grid.Dv
    return G


def _weighted_div_block(system, kap):
    """W: vector -> scalar, u |-> h'(rho_bar) div(rho_bar u), one mode."""
    grid, eq = system.grid, system.eq
    d = grid.d
    nv = grid.n_v
    W = np.zeros((nv, d * nv), dtype=complex)
    R = np.diag(eq.rho_bar)
    for j in range(d - 1):
        W[:, j * nv:(j + 1) * nv] = 1j * kap[j] * R
    W[:, (d - 1) * nv:] = grid.Dv @ R
    return np.diag(eq.h_prime_bar) @ W


def _implicit_mode_matrix(system, kap, tau):
    grid, eq, law = system.grid, system.eq, system.law
    mu, mup = system.mu, system.mu_prime
    d = grid.d
    nv = grid.n_v
    D = grid.Dv
    V = _divstress_blocks(grid, kap, mu, mup)
    G = _grad_block(grid, kap)
    W = _weighted_div_block(system, kap)
    inv_rho = np.kron(np.eye(d), np.diag(1.0 / eq.rho_bar))
    A = np.eye(d * nv, dtype=complex) - tau * (inv_rho @ V) - tau**2 * (G @ W)

    # boundary rows (no-slip bottom, stress balance at the surface)
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
    A[rs, :] = -tau * law.rho_star * W[0, :]
    for j in range(d - 1):
        A[rs, j * nv] += -(mup - 2.0 * mu / d) * (1j * kap[j])
    A[rs, rs:rs + nv] += -(2.0 * mu + mup - 2.0 * mu / d) * D[0, :]
    A[rs, rs] += -tau * law.rho_star * law.g
    return A


# -- one IMEX step -------------------------------------------------------------


def _explicit_terms(state, system, geom):
    """G remainders at the current state, dealiased, with the kinematic
    surface rate and the linear-tendency velocity rate as estimates."""
    grid = system.grid
    deta = kinematic_rate(state, geom)
    _, du_lin, _ = linear_tendency(state, system)
    rates = StateRates(dq=None, du=du_lin, deta=deta)
    rho = density_from_q(state.q, geom, system.eq, system.law)
    G1 = eval_G1(state, rates, geom, system.eq, system.law, rho=rho,
                 dealias=True)
    G2 = eval_G2(state, rates, geom, system.eq, system.law,
                 system.mu, system.mu_prime, rho=rho, dealias=True)
    G3 = eval_G3(state, grid, dealias=True)
    G4 = eval_G4(state, geom, system.eq, system.law,
                 system.mu, system.mu_prime, dealias=True)
    return G1, G2, G3, G4


_ZERO_EXPL = None


def _zero_explicit(grid):
    return (grid.zeros_volume(), grid.zeros_volume((grid.d,)),
            grid.zeros_surface(), grid.zeros_surface((grid.d,)))


def cfl_limit(state, system, geom=None):
    """Advective and explicit-coupling step ceiling for the current state.

    The epsilon-scaled geometric corrections to the viscous operator are
    treated explicitly, but the same operator is solved implicitly at full
    strength, so their amplification stays contractive for deviations well
    below one; the viscous gate therefore only engages once the geometry
    deviation leaves the perturbative band.
    """
    grid = system.grid
    dx_h = grid.L / grid.n_h
    dx_v = float(np.min(np.abs(np.diff(grid.nodes))))
    umax = float(np.max(np.abs(state.u)))
    adv = min(dx_h, dx_v) / umax if umax > 0 else np.inf

    if geom is None:
        try:
            geom = build_geometry(state.eta, grid)
        except Exception:
            return adv
    try:
        rho = density_from_q(state.q, geom, system.eq, system.law)
    except BlowupError:
        return adv
    eps_geo = float(np.max(np.abs(geom.J - 1.0)))
    eps_geo += float(np.max(np.abs(geom.grad_phi[: grid.d - 1])))
    eps_geo += float(np.max(np.abs(rho / system.eq.rho_bar - 1.0)))
    eps_eff = max(eps_geo - 0.25, 0.0)
    if eps_eff <= 0:
        return adv
    if not hasattr(grid, "_sigma2"):
        kmax = np.pi * grid.n_h / grid.L
        D2 = grid.Dv @ grid.Dv
        grid._sigma2 = float(np.max(np.abs(np.linalg.eigvals(D2)))) + kmax**2
    nu_eff = (system.mu + system.mu_prime) * eps_eff / float(np.min(system.eq.rho_bar))
    return min(adv, 2.0 / (nu_eff * grid._sigma2))


def step(state, config, system, prev_state=None, prev_expl=None,
         solver=None, geom=None, check_cfl=True):
    """Advance one IMEX step; returns (new_state, explicit_terms_used).

    ``prev_state``/``prev_expl`` feed the BDF2 history; the first step of a
    BDF2 run (no history) falls back to one Euler step.
    """
    grid, eq, law = system.grid, system.eq, system.law
    dt = config.dt
    if geom is None:
        geom = build_geometry(state.eta, grid)

    if config.freeze_nonlinear:
        expl = _zero_explicit(grid)
    else:
        if check_cfl:
            limit = cfl_limit(state, system, geom)
            if dt > config.cfl_safety * limit:
                raise StepRejectedError(
                    f"dt={dt} exceeds stability gate {config.cfl_safety * limit:.3e}",
                    suggested_dt=0.5 * config.cfl_safety * limit)
        expl = _explicit_terms(state, system, geom)

    use_bdf2 = config.scheme == "imex_bdf2" and prev_state is not None
    if use_bdf2:
        tau = 2.0 * dt / 3.0
        comb = lambda cur, old: (4.0 * cur - old) / 3.0
        if prev_expl is None:
            prev_expl = _zero_explicit(grid)
        estar = tuple(2.0 * e - ep for e, ep in zip(expl, prev_expl))
        q_hist, u_hist, eta_hist = (comb(state.q, prev_state.q),
                                    comb(state.u, prev_state.u),
                                    comb(state.eta, prev_state.eta))
    else:
        tau = dt
        estar = expl
        q_hist, u_hist, eta_hist = state.q, state.u, state.eta

    G1s, G2s, G3s, G4s = estar
    q_star = q_hist + tau * G1s
    eta_star = eta_hist

    rhs_u = u_hist - tau * grid.gradient(q_star) + tau * G2s / eq.rho_bar
    rhs_hat = grid.hfft(rhs_u)
    qs_hat = grid.hfft(q_star)
    etas_hat = grid.hfft(eta_star, surface=True)
    G3_hat = grid.hfft(G3s, surface=True)
    G4_hat = grid.hfft(G4s, surface=True)

    if solver is None:
        solver = ImplicitSolver(system, tau)
    d = grid.d
    nv = grid.n_v
    rhs_list = []
    for idx, kap in grid.iter_modes_r():
        b = np.empty(d * nv, dtype=complex)
        for i in range(d):
            b[i * nv:(i + 1) * nv] = rhs_hat[(i,) + idx]
            b[i * nv + nv - 1] = 0.0
            if i < d - 1:
                b[i * nv] = G4_hat[(i,) + idx]
        b[(d - 1) * nv] = (-law.rho_star * qs_hat[idx + (0,)]
                           + law.rho_star * law.g * etas_hat[idx]
                           + law.rho_star * law.g * tau * G3_hat[idx]
                           + G4_hat[(d - 1,) + idx])
        rhs_list.append(b)
    sols = solver.solve(rhs_list)

    u_hat = np.zeros_like(rhs_hat)
    for (idx, _), sol in zip(grid.iter_modes_r(), sols):
        for i in range(d):
            u_hat[(i,) + idx] = sol[i * nv:(i + 1) * nv]
    u_new = grid.hifft(u_hat)

    q_new = q_star - tau * eq.h_prime_bar * _flat_div(eq.rho_bar * u_new, grid)
    eta_new = eta_star + tau * (u_new[d - 1][..., 0] + G3s)

    q_new = grid.dealias(q_new)
    u_new = grid.dealias(u_new)
    eta_new = grid.dealias(eta_new, surface=True)
    u_new[..., -1] = 0.0

    new = State(q=q_new, u=u_new, eta=eta_new, t=state.t + dt)
    if not np.isfinite(u_new).all() or not np.isfinite(q_new).all() \
            or not np.isfinite(eta_new).all():
        raise BlowupError("non-finite state after step", {"t": new.t})
    return new, expl


# -- frozen-linear fast path ----------------------------------------------------


def linear_update_matrix(system, dt, kap):
    """Dense one-step propagation matrix for one mode of the frozen-linear
    IMEX Euler update, acting on z = (q_hat, u_hat, eta_hat)."""
    grid, eq, law = system.grid, system.eq, system.law
    d = grid.d
    nv = grid.n_v
    nz = (d + 1) * nv + 1
    A = _implicit_mode_matrix(system, kap, dt)
    G = _grad_block(grid, kap)
    W = _weighted_div_block(system, kap)

    # rhs map: (q, u, eta) -> b for the velocity solve
    Bq = -dt * G
    Bu = np.eye(d * nv, dtype=complex)
    Beta = np.zeros((d * nv, 1), dtype=complex)
    for i in range(d):
        rs = i * nv
        Bq[rs, :] = 0.0
        Bq[rs + nv - 1, :] = 0.0
        Bu[rs, :] = 0.0
        Bu[rs + nv - 1, :] = 0.0
    rs = (d - 1) * nv
    Bq[rs, 0] = -law.rho_star
    Beta[rs, 0] = law.rho_star * law.g

    Ainv = np.linalg.inv(A)
    U = Ainv @ np.hstack([Bq, Bu, Beta])          # u_new from (q, u, eta)

    M = np.zeros((nz, nz), dtype=complex)
    # q_new = q - dt * W u_new
    M[:nv, :nv] = np.eye(nv)
    M[:nv, :] -= dt * (W @ U)
    # u_new
    M[nv:nv + d * nv, :] = U
    # eta_new = eta + dt * (u_new)_d at the surface node
    M[-1, -1] = 1.0
    M[-1, :] += dt * U[(d - 1) * nv, :]
    return M


def _run_frozen_euler(initial, t_end, config, system, monitor, cadence):
    grid = system.grid
    d = grid.d
    nv = grid.n_v
    dt = config.dt
    n_steps = _step_count(initial.t, t_end, dt)
    mats = [linear_update_matrix(system, dt, kap)
            for _, kap in grid.iter_modes_r()]
    M = np.stack(mats)

    z = np.stack([_pack_mode(initial, grid, idx)
                  for idx, _ in grid.iter_modes_r()])
    sample_ids = _sample_indices(n_steps, cadence)
    keep = {}
    want = set()
    for s in sample_ids:
        want.update(i for i in (s - 1, s, s + 1) if 0 <= i <= n_steps)
    if 0 in want:
        keep[0] = z.copy()
    for n in range(1, n_steps + 1):
        z = np.einsum("kij,kj->ki", M, z)
        if n in want:
            keep[n] = z.copy()
    traj = Trajectory()
    for s in sample_ids:
        mk = lambda n: _unpack_modes(keep[n], grid, initial.t + n * dt) \
            if n in keep else None
        win = SampleWindow(state=mk(s), prev=mk(s - 1), next=mk(s + 1))
        traj.windows.append(win)
        if monitor is not None:
            traj.reports.append(monitor.report(win))
    traj.diagnostics = {"steps": n_steps, "scheme": "imex_euler",
                        "frozen_nonlinear": True}
    return traj


def _pack_mode(state, grid, idx):
    nv = grid.n_v
    d = grid.d
    qh = grid.hfft(state.q)
    uh = grid.hfft(state.u)
    eh = grid.hfft(state.eta, surface=True)
    z = np.empty((d + 1) * nv + 1, dtype=complex)
    z[:nv] = qh[idx]
    for i in range(d):
        z[(i + 1) * nv:(i + 2) * nv] = uh[(i,) + idx]
    z[-1] = eh[idx]
    return z


def _unpack_modes(z_all, grid, t):
    """Rebuild a physical State from the stacked per-mode vectors."""
    nv = grid.n_v
    d = grid.d
    shape_r = tuple(grid.n_h for _ in range(grid.d - 2)) + (grid.n_h // 2 + 1,)
    qfull = np.zeros(shape_r + (nv,), dtype=complex)
    ufull = np.zeros((d,) + shape_r + (nv,), dtype=complex)
    efull = np.zeros(shape_r, dtype=complex)
    for mode_i, (idx, _) in enumerate(grid.iter_modes_r()):
        z = z_all[mode_i]
        qfull[idx] = z[:nv]
        for i in range(d):
            ufull[(i,) + idx] = z[(i + 1) * nv:(i + 2) * nv]
        efull[idx] = z[-1]
    return State(q=grid.hifft(qfull), u=grid.hifft(ufull),
                 eta=grid.hifft(efull, surface=True), t=t)


# -- run loop --------------------------------------------------------------------


def _step_count(t0, t_end, dt):
    span = t_end - t0
    if span < 0:
        raise ValueError("t_end must not precede the initial time")
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        n = int(np.ceil(span / dt - 1e-12))
    return n


def _sample_indices(n_steps, cadence):
    ids = list(range(0, n_steps + 1, max(1, cadence)))
    if ids[-1] != n_steps:
        ids.append(n_steps)
    return ids


def run(initial, t_end, config, system, monitor=None, cadence=1):
    """Advance to t_end, sampling monitor windows every ``cadence`` steps.

    Returns a :class:`Trajectory`; early termination on blow-up or step
    rejection is recorded in ``termination``/``diagnostics`` instead of
    propagating, so callers always receive the partial sample record.
    """
    grid = system.grid
    n_steps = _step_count(initial.t, t_end, config.dt)
    if n_steps == 0:
        traj = Trajectory()
        win = SampleWindow(state=initial.copy())
        traj.windows.append(win)
        if monitor is not None:
            traj.reports.append(monitor.report(win))
        traj.diagnostics = {"steps": 0, "scheme": config.scheme}
        return traj

    if config.freeze_nonlinear and config.scheme == "imex_euler":
        return _run_frozen_euler(initial, t_end, config, system, monitor,
                                 cadence)

    euler_solver = ImplicitSolver(system, config.dt)
    bdf2_solver = ImplicitSolver(system, 2.0 * config.dt / 3.0) \
        if config.scheme == "imex_bdf2" else None

    sample_ids = set(_sample_indices(n_steps, cadence))
    traj = Trajectory()

    def emit(sample_n, held):
        win = SampleWindow(state=held[sample_n],
                           prev=held.get(sample_n - 1),
                           next=held.get(sample_n + 1))
        traj.windows.append(win)
        if monitor is not None:
            traj.reports.append(monitor.report(win))

    held = {0: initial.copy()}   # rolling window of the last three states
    state = held[0]
    prev_state = None
    prev_expl = None
    last_n = 0
    try:
        for n in range(1, n_steps + 1):
            use_bdf2 = config.scheme == "imex_bdf2" and prev_state is not None
            solver = bdf2_solver if use_bdf2 else euler_solver
            new_state, expl = step(state, config, system,
                                   prev_state=prev_state,
                                   prev_expl=prev_expl, solver=solver)
            prev_state, prev_expl = state, expl
            state = new_state
            held[n] = state
            held.pop(n - 3, None)
            last_n = n
            if (n - 1) in sample_ids:
                emit(n - 1, held)
    except (BlowupError, StepRejectedError) as exc:
        traj.termination = "blow_up" if isinstance(exc, BlowupError) \
            else "step_rejected"
        traj.diagnostics["error"] = str(exc)
        if isinstance(exc, StepRejectedError):
            traj.diagnostics["suggested_dt"] = exc.suggested_dt
    final_sample = max((s for s in sample_ids if s <= last_n), default=None)
    if final_sample is not None and final_sample == last_n:
        emit(final_sample, held)
    traj.diagnostics.setdefault("steps", last_n)
    traj.diagnostics["scheme"] = config.scheme
    return traj

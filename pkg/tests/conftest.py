import numpy as np
import pytest

from flatwave.discretization import make_grid
from flatwave.dynamics import System
from flatwave.equilibrium import IsothermalLaw, solve_equilibrium
from flatwave.state import State, StateRates


@pytest.fixture(scope="session")
def law():
    return IsothermalLaw(K=1.0, p_atm=1.0, g=1.0)


@pytest.fixture(scope="session")
def grid():
    return make_grid(2, 2.0 * np.pi, 32, 33, 1.0)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(2, 2.0 * np.pi, 16, 17, 1.0)


@pytest.fixture(scope="session")
def grid3d():
    return make_grid(3, 2.0 * np.pi, 8, 17, 1.0)


@pytest.fixture(scope="session")
def eq(law, grid):
    return solve_equilibrium(law, 1.0, grid.nodes)


@pytest.fixture(scope="session")
def system(grid, eq, law):
    return System(grid=grid, eq=eq, law=law, mu=1.0, mu_prime=1.0)


@pytest.fixture(scope="session")
def small_system(small_grid, law):
    eq_s = solve_equilibrium(law, 1.0, small_grid.nodes)
    return System(grid=small_grid, eq=eq_s, law=law, mu=1.0, mu_prime=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_state(grid, rng, amplitude, kmax=2):
    q = grid.random_smooth_field(rng, amplitude, kmax=kmax)
    u = np.stack([grid.random_smooth_field(rng, amplitude, kmax=kmax,
                                           bottom_zero=True)
                  for _ in range(grid.d)])
    eta = grid.random_smooth_field(rng, amplitude, kmax=kmax, surface=True)
    return State(q=q, u=u, eta=eta)


def random_rates(grid, rng, amplitude, kmax=2):
    return StateRates(
        dq=grid.random_smooth_field(rng, amplitude, kmax=kmax),
        du=np.stack([grid.random_smooth_field(rng, amplitude, kmax=kmax)
                     for _ in range(grid.d)]),
        deta=grid.random_smooth_field(rng, amplitude, kmax=kmax, surface=True),
    )

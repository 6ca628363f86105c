import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from flatwave.discretization import make_grid
from flatwave.equilibrium import (
    CustomLaw,
    GammaLaw,
    IsothermalLaw,
    admissible_depth_bound,
    enthalpy,
    enthalpy_inverse,
    make_law,
    solve_equilibrium,
)
from flatwave.errors import AdmissibilityError, DomainError

ISO = IsothermalLaw(K=1.0, p_atm=1.0, g=1.0)
GAMMA2 = GammaLaw(K=1.0, gamma=2.0, p_atm=1.0, g=1.0)


def quad_enthalpy(law, z):
    """Independent quadrature oracle for the enthalpy integral."""
    val, _ = quad(lambda s: law.dP(s) / s, law.rho_star, z,
                  epsabs=1e-14, epsrel=1e-13)
    return val


def bounded_custom_law():
    # P = 2 - 1/rho: positive and increasing on (1/2, inf), rho_star = 1,
    # finite enthalpy limit 1/2 so shallow layers only.
    return CustomLaw(P=lambda z: 2.0 - 1.0 / z, dP=lambda z: z**-2,
                     d2P=lambda z: -2.0 * z**-3, p_atm=1.0, g=1.0)


class TestEnthalpy:
    def test_zero_at_rho_star(self):
        for law in (ISO, GAMMA2):
            assert enthalpy(law, law.rho_star) == 0.0

    def test_isothermal_log_value(self):
        assert enthalpy(ISO, math.e) == pytest.approx(1.0, abs=1e-14)
        assert enthalpy(ISO, math.e) == pytest.approx(
            quad_enthalpy(ISO, math.e), abs=1e-12)

    def test_gamma_closed_form(self):
        # K gamma/(gamma-1) (z^{gamma-1} - 1) = 2 (2 - 1) = 2
        assert enthalpy(GAMMA2, 2.0) == pytest.approx(2.0, abs=1e-14)
        assert enthalpy(GAMMA2, 2.0) == pytest.approx(
            quad_enthalpy(GAMMA2, 2.0), abs=1e-12)

    def test_nonpositive_density_rejected(self):
        for law in (ISO, GAMMA2):
            with pytest.raises(DomainError):
                enthalpy(law, 0.0)
            with pytest.raises(DomainError):
                enthalpy(law, np.array([1.0, -2.0]))


class TestEnthalpyInverse:
    def test_zero_maps_to_rho_star(self):
        for law in (ISO, GAMMA2, bounded_custom_law()):
            assert enthalpy_inverse(law, 0.0) == pytest.approx(
                law.rho_star, rel=1e-12)

    def test_isothermal_analytic(self):
        assert enthalpy_inverse(ISO, 0.5) == pytest.approx(
            math.exp(0.5), rel=1e-14)

    def test_round_trip_100_random(self, rng):
        z = rng.uniform(0.5, 5.0, size=100)
        for law in (ISO, GAMMA2):
            back = enthalpy_inverse(law, enthalpy(law, z))
            assert np.max(np.abs(back - z)) <= 1e-10

    @given(z=st.floats(min_value=0.5, max_value=5.0))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, z):
        assert enthalpy_inverse(ISO, enthalpy(ISO, z)) == pytest.approx(
            z, rel=1e-10)
        assert enthalpy_inverse(GAMMA2, enthalpy(GAMMA2, z)) == pytest.approx(
            z, rel=1e-10)

    def test_newton_path_matches_analytic(self):
        generic = CustomLaw(P=lambda z: z, dP=lambda z: 1.0,
                            d2P=lambda z: 0.0, p_atm=1.0, g=1.0)
        assert generic.h_inverse(0.5) == pytest.approx(math.exp(0.5),
                                                       rel=1e-11)

    def test_out_of_range_rejected(self):
        law = bounded_custom_law()   # sup h = 1/2
        with pytest.raises(DomainError):
            enthalpy_inverse(law, 0.7)


class TestDepthBound:
    def test_builtins_unbounded(self):
        assert admissible_depth_bound(ISO) == math.inf
        assert admissible_depth_bound(GAMMA2) == math.inf

    def test_custom_finite_bound(self):
        # integral of s^-3 from 1 to inf = 1/2; symbolic antiderivative oracle
        assert admissible_depth_bound(bounded_custom_law()) == pytest.approx(
            0.5, rel=1e-6)

    def test_gravity_prefactor(self):
        half_g = CustomLaw(P=lambda z: 2.0 - 1.0 / z, dP=lambda z: z**-2,
                           d2P=lambda z: -2.0 * z**-3, p_atm=1.0, g=2.0)
        assert admissible_depth_bound(half_g) == pytest.approx(0.25, rel=1e-6)
        doubled = IsothermalLaw(K=1.0, p_atm=1.0, g=2.0)
        assert admissible_depth_bound(doubled) == math.inf

    def test_divergence_probe_on_generic_path(self):
        generic_iso = CustomLaw(P=lambda z: z, dP=lambda z: 1.0,
                                d2P=lambda z: 0.0, p_atm=1.0, g=1.0)
        assert admissible_depth_bound(generic_iso) == math.inf


class TestSolveEquilibrium:
    def test_isothermal_exponential_profile(self):
        grid = make_grid(2, 2 * np.pi, 8, 64, 1.0)
        eq = solve_equilibrium(ISO, 1.0, grid.nodes)
        assert np.max(np.abs(eq.rho_bar - np.exp(-grid.nodes))) <= 1e-10
        assert eq.rho_bar[-1] == pytest.approx(math.e, rel=1e-12)

    def test_hydrostatic_residual(self):
        grid = make_grid(2, 2 * np.pi, 8, 64, 1.0)
        for law in (ISO, GAMMA2):
            eq = solve_equilibrium(law, 1.0, grid.nodes)
            res = grid.vderiv(law.P(eq.rho_bar)) + eq.rho_bar * law.g
            assert np.max(np.abs(res)) <= 1e-8

    def test_surface_value_and_monotonicity(self):
        grid = make_grid(2, 2 * np.pi, 8, 33, 0.4)
        for law in (ISO, GAMMA2, bounded_custom_law()):
            eq = solve_equilibrium(law, 0.4, grid.nodes)
            assert eq.rho_bar[0] == pytest.approx(law.rho_star, rel=1e-12)
            # nodes run from the surface downward, so values must increase
            assert np.all(np.diff(eq.rho_bar) > 0)

    def test_tabulated_coefficients(self):
        grid = make_grid(2, 2 * np.pi, 8, 17, 1.0)
        eq = solve_equilibrium(ISO, 1.0, grid.nodes)
        assert np.allclose(eq.h_prime_bar, 1.0 / eq.rho_bar, atol=1e-14)
        assert np.allclose(eq.P_prime_bar, 1.0, atol=1e-14)

    def test_depth_beyond_bound_rejected(self):
        grid = make_grid(2, 2 * np.pi, 8, 17, 0.6)
        with pytest.raises(AdmissibilityError):
            solve_equilibrium(bounded_custom_law(), 0.6, grid.nodes)

    def test_nodes_outside_layer_rejected(self):
        grid = make_grid(2, 2 * np.pi, 8, 17, 1.0)
        with pytest.raises(ValueError):
            solve_equilibrium(ISO, 0.5, grid.nodes)


def test_make_law_dispatch():
    assert make_law("isothermal", K=2.0).K == 2.0
    assert make_law("gamma_law", gamma=1.4).gamma == 1.4
    with pytest.raises(DomainError):
        make_law("polytrope")
    with pytest.raises(DomainError):
        make_law("gamma_law", gamma=1.0)
    with pytest.raises(DomainError):
        make_law("isothermal", K=-1.0)

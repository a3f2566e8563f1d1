"""Reservoir datum: moments, sink rate G, source density C, per-cell tables."""

import numpy as np
import pytest

from coagfrag import (
    ConfigError,
    bound_form_coag,
    build_grid,
    constant_coag,
    constant_frag,
    eval_C,
    eval_G,
    eval_g,
    exponential_reservoir,
    moment_M,
    multiplicative_coag,
    power_exponential_reservoir,
    power_reservoir,
    product_frag,
    quad_oracle,
    sum_power_frag,
    zero_reservoir,
)
from coagfrag.boundary import precompute_tables, uniform_moment

E_INV = float(np.exp(-1.0))

# Half-order moment of e^{-y} on (1, inf); frozen from the brute-force
# quadrature oracle (test_half_order_moment_matches_quadrature re-derives it).
HALF_MOMENT_EXP = 0.5072822338117733


class TestMoments:
    def test_exponential_count(self, exp_reservoir):
        assert moment_M(exp_reservoir, 0.0) == pytest.approx(E_INV, abs=1e-12)

    def test_exponential_first_order(self, exp_reservoir):
        assert moment_M(exp_reservoir, 1.0) == pytest.approx(2.0 * E_INV, abs=1e-12)

    def test_power_tail_closed_forms(self):
        g = power_reservoir(amplitude=3.0, tail=4.0)
        assert moment_M(g, 0.0) == pytest.approx(1.0, rel=1e-12)
        assert moment_M(g, 1.0) == pytest.approx(1.5, rel=1e-12)

    def test_half_order_moment_matches_quadrature(self, exp_reservoir):
        oracle, _ = quad_oracle(lambda y: np.sqrt(y) * np.exp(-y), 1.0, 50.0)
        value = moment_M(exp_reservoir, 0.5)
        assert value == pytest.approx(oracle, rel=1e-8)
        assert value == pytest.approx(HALF_MOMENT_EXP, rel=1e-12)

    def test_divergent_power_moment_rejected(self):
        g = power_reservoir(amplitude=1.0, tail=2.0)
        with pytest.raises(ConfigError):
            moment_M(g, 1.0)  # integrand ~ y^-1

    def test_zero_reservoir_moments_vanish(self):
        assert moment_M(zero_reservoir(), 0.5) == 0.0

    def test_amplitude_linearity(self):
        g1 = exponential_reservoir(1.0, 1.0)
        g2 = exponential_reservoir(2.0, 1.0)
        assert moment_M(g2, 0.7) == pytest.approx(2.0 * moment_M(g1, 0.7), rel=1e-12)

    def test_uniform_moment_caps_modulation(self):
        g = exponential_reservoir(1.0, 1.0, modulation="decaying", modulation_scale=3.0)
        assert uniform_moment(g, 0.0) == pytest.approx(3.0 * E_INV, rel=1e-10)

    def test_spatial_profile_domain(self, exp_reservoir):
        from coagfrag import DomainError

        assert eval_g(exp_reservoir, 0.0, 2.0) == pytest.approx(np.exp(-2.0), rel=1e-12)
        with pytest.raises(DomainError):
            eval_g(exp_reservoir, 0.0, 0.5)


class TestSinkRate:
    def test_constant_rate_gives_count_moment(self, exp_reservoir, unit_kernel):
        xs = np.array([0.1, 0.5, 1.0])
        vals = np.asarray(eval_G(unit_kernel, exp_reservoir, 0.0, xs))
        assert vals == pytest.approx(np.full(3, E_INV), rel=1e-10)

    def test_product_rate_factorizes(self, exp_reservoir):
        xs = np.array([0.25, 0.5, 0.75])
        vals = np.asarray(eval_G(multiplicative_coag(1.0), exp_reservoir, 0.0, xs))
        assert vals == pytest.approx(2.0 * E_INV * xs, rel=1e-10)

    def test_singular_rate_matches_quadrature(self, exp_reservoir):
        k = bound_form_coag(1.0, 0.5, 0.5)
        x = 0.25
        oracle, _ = quad_oracle(
            lambda y: (x**-0.5 + y**-0.5) * (x**0.5 + y**0.5) * np.exp(-y),
            1.0,
            50.0,
        )
        assert eval_G(k, exp_reservoir, 0.0, x) == pytest.approx(oracle, rel=1e-6)

    def test_growth_envelope_holds_on_samples(self, exp_reservoir):
        k = bound_form_coag(1.0, 0.5, 0.5)
        m_beta = moment_M(exp_reservoir, k.beta)
        xs = np.geomspace(1e-4, 1.0, 200)
        vals = np.asarray(eval_G(k, exp_reservoir, 0.0, xs))
        assert np.all(vals * xs**k.alpha <= 4.0 * k.K0 * m_beta * (1.0 + 1e-12))

    def test_amplitude_linearity(self, unit_kernel):
        xs = np.array([0.2, 0.9])
        one = np.asarray(eval_G(unit_kernel, exponential_reservoir(1.0, 1.0), 0.0, xs))
        two = np.asarray(eval_G(unit_kernel, exponential_reservoir(2.0, 1.0), 0.0, xs))
        assert two == pytest.approx(2.0 * one, rel=1e-12)


class TestSourceDensity:
    def test_constant_split_rate(self, exp_reservoir, unit_frag):
        xs = np.array([0.1, 0.6, 1.0])
        vals = np.asarray(eval_C(unit_frag, exp_reservoir, 0.0, xs))
        assert vals == pytest.approx(np.full(3, E_INV), rel=1e-10)

    def test_sum_rate_collapses_to_first_moment(self, exp_reservoir):
        # F(y - x, x) = y for the sum rate, so the size dependence cancels.
        frag = sum_power_frag(1.0, 1.0)
        xs = np.array([0.2, 0.5, 0.9])
        vals = np.asarray(eval_C(frag, exp_reservoir, 0.0, xs))
        assert vals == pytest.approx(np.full(3, 2.0 * E_INV), rel=1e-10)

    def test_product_rate_closed_form(self, exp_reservoir):
        # F(y - x, x) = (y - x) x integrated against e^{-y} at x = 1/2.
        vals = eval_C(product_frag(1.0), exp_reservoir, 0.0, 0.5)
        assert vals == pytest.approx(0.75 * E_INV, rel=1e-10)

    def test_ceiling_holds_on_samples(self, exp_reservoir):
        frag = sum_power_frag(0.75, 0.5)
        m_gamma = moment_M(exp_reservoir, frag.gamma)
        xs = np.linspace(1e-3, 1.0, 200)
        vals = np.asarray(eval_C(frag, exp_reservoir, 0.0, xs))
        assert np.all(vals <= 2.0 * frag.F0 * m_gamma * (1.0 + 1e-12))


class TestCellTables:
    def test_constant_datum_is_time_independent(self, exp_reservoir, unit_kernel, unit_frag):
        grid = build_grid(16, kind="uniform")
        tab = precompute_tables(unit_kernel, unit_frag, exp_reservoir, grid.pivots)
        assert np.array_equal(tab.G(0.0), tab.G(2.5))
        assert np.array_equal(tab.C(0.0), tab.C(2.5))
        assert tab.G(0.0) == pytest.approx(np.full(grid.n, E_INV), rel=1e-10)

    def test_zero_datum_gives_zero_tables(self, unit_kernel, unit_frag):
        grid = build_grid(8, kind="uniform")
        tab = precompute_tables(unit_kernel, unit_frag, zero_reservoir(), grid.pivots)
        assert not np.any(tab.G(0.0))
        assert not np.any(tab.C(0.0))
        assert tab.G_at_one(0.0) == 0.0

    def test_decaying_modulation_halves_at_unit_time(self, unit_kernel, unit_frag):
        g = exponential_reservoir(1.0, 1.0, modulation="decaying")
        grid = build_grid(8, kind="uniform")
        tab = precompute_tables(unit_kernel, unit_frag, g, grid.pivots)
        assert tab.G(1.0) == pytest.approx(0.5 * tab.G(0.0), rel=1e-12)
        assert tab.C(1.0) == pytest.approx(0.5 * tab.C(0.0), rel=1e-12)


class TestPowerExponentialProfile:
    def test_negative_tail_is_polynomial_growth(self):
        # tail = -1 gives y e^{-y}: a simple composite profile.
        g = power_exponential_reservoir(amplitude=1.0, tail=-1.0, decay=1.0)
        assert eval_g(g, 0.0, 2.0) == pytest.approx(2.0 * np.exp(-2.0), rel=1e-12)
        oracle, _ = quad_oracle(lambda y: y * np.exp(-y), 1.0, 50.0)
        assert moment_M(g, 0.0) == pytest.approx(oracle, rel=1e-8)

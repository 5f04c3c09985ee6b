# tests/test_flux.py
import numpy as np
import pytest

from kinetic.flux import (DriftDiffusion, cc_flux, cc_weights, central_flux, delta_from_lambda, entropic_delta,
                          entropic_flux, exact_weights, logarithmic_mean, micro_macro_flux, quadrature_rule)
from kinetic.mesh import Density, VelocityGrid
from kinetic.models import opinion_model
from kinetic.stepping import flux_divergence


class TestDelta:
    def test_bounds_and_monotone(self):
        lam = np.linspace(-50.0, 50.0, 1001)
        delta = delta_from_lambda(lam)
        assert np.all((delta >= 0) & (delta <= 1))
        assert np.all(np.diff(delta) <= 1e-12)

    def test_value_at_zero(self):
        assert delta_from_lambda(0.0) == pytest.approx(0.5)

    def test_continuous_across_series_cutoff(self):
        below = delta_from_lambda(np.array([0.9999e-5, -0.9999e-5]))
        above = delta_from_lambda(np.array([1.0001e-5, -1.0001e-5]))
        np.testing.assert_allclose(below, above, atol=1e-9)

    def test_symmetry(self):
        lam = np.linspace(0.1, 10.0, 50)
        np.testing.assert_allclose(delta_from_lambda(lam) + delta_from_lambda(-lam), 1.0, atol=1e-12)


class TestQuadratureRules:
    @pytest.mark.parametrize("rule", ["midpoint", "open_nc2", "open_nc4", "open_nc6", "gauss", "gauss(5)"])
    def test_weights_sum_to_one(self, rule):
        nodes, weights = quadrature_rule(rule)
        assert np.sum(weights) == pytest.approx(1.0)
        assert np.all((nodes > 0) & (nodes < 1))

    def test_open_nc4_is_exact_for_cubics(self):
        nodes, weights = quadrature_rule("open_nc4")
        assert np.dot(weights, nodes ** 3) == pytest.approx(0.25)

    def test_gauss_degree(self):
        nodes, weights = quadrature_rule("gauss(5)")
        assert np.dot(weights, nodes ** 9) == pytest.approx(0.1)
        assert quadrature_rule("gauss")[0].size == 20

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            quadrature_rule("simpson")


class TestLogarithmicMean:
    def test_between_geometric_and_arithmetic(self, rng):
        a = rng.uniform(0.1, 10.0, 500)
        b = rng.uniform(0.1, 10.0, 500)
        mean = logarithmic_mean(a, b)
        assert np.all(mean >= np.sqrt(a * b) * (1 - 1e-12))
        assert np.all(mean <= 0.5 * (a + b) * (1 + 1e-12))

    def test_known_value_and_equal_arguments(self):
        assert logarithmic_mean(1.0, np.e) == pytest.approx(np.e - 1.0)
        assert logarithmic_mean(2.5, 2.5) == 2.5

    def test_continuous_near_equal(self):
        a = np.full(3, 3.0)
        b = a * (1.0 + np.array([1e-7, 1e-6 * 1.01, 1e-5]))
        np.testing.assert_allclose(logarithmic_mean(a, b), (a + b) / 2.0, rtol=1e-10)

    def test_entropic_delta_reproduces_mean(self, rng):
        left = rng.uniform(0.1, 5.0, 50)
        right = rng.uniform(0.1, 5.0, 50)
        delta = entropic_delta(left, right)
        np.testing.assert_allclose(delta * left + (1 - delta) * right, logarithmic_mean(left, right), rtol=1e-10)


class TestChangCooper:
    def test_exact_weights_zero_flux_on_steady_state(self, linear_model, grid):
        steady = linear_model.steady_state(grid, 0.0)
        dd = linear_model.drift_diffusion(grid, 0.0)
        flux = cc_flux(steady, exact_weights(steady, dd), dd)
        np.testing.assert_allclose(flux, 0.0, atol=1e-12)

    def test_midpoint_weights_match_maxwellian(self, linear_model, grid):
        steady = linear_model.steady_state(grid, 0.0)
        dd = linear_model.drift_diffusion(grid, 0.0)
        datum = Density(grid, np.ones(grid.n_cells))
        np.testing.assert_allclose(cc_weights(datum, dd, "midpoint").lam, exact_weights(steady, dd).lam,
                                   atol=1e-10)

    def test_boundary_faces(self, mixture_model, grid):
        f = mixture_model.initial_datum(grid, 0.0)
        dd = mixture_model.drift_diffusion(grid, 0.0)
        weights = cc_weights(f, dd)
        assert weights.n_faces == grid.n_cells + 1
        assert weights.delta[0] == 0.5 and weights.delta[-1] == 0.5
        flux = cc_flux(f, weights, dd)
        assert flux[0] == 0.0 and flux[-1] == 0.0
        assert np.sum(flux_divergence(flux, grid)) == pytest.approx(0.0, abs=1e-10)

    def test_central_flux_uses_half_weights(self, mixture_model, grid):
        f = mixture_model.initial_datum(grid, 0.0)
        dd = mixture_model.drift_diffusion(grid, 0.0)
        weights = cc_weights(f, dd)
        inner = central_flux(f, weights, dd)[1:-1]
        average = 0.5 * (f.values[:-1] + f.values[1:])
        d_inner = dd.diffusion_at(grid.faces[1:-1])
        expected = weights.c_tilde[1:-1] * average + d_inner * np.diff(f.values) / grid.dw
        np.testing.assert_allclose(inner, expected, rtol=1e-12, atol=1e-14)

    def test_singular_diffusion(self, grid):
        dd = DriftDiffusion(lambda points, values: points, lambda points: 1.0 - points ** 2,
                            lambda points: -2.0 * points)
        with pytest.raises(ValueError, match="singular diffusion"):
            cc_weights(Density(VelocityGrid(-2.0, 2.0, 20), np.ones(20)), dd)

    def test_batched_weights(self, mixture_model, grid):
        theta = np.array([-1.0, 0.0, 1.0])
        f = mixture_model.initial_datum(grid, theta)
        weights = cc_weights(f, mixture_model.drift_diffusion(grid, theta))
        assert weights.c_tilde.shape == (3, grid.n_cells + 1)


class TestEntropicFlux:
    def test_requires_positivity(self, linear_model, grid):
        dd = linear_model.drift_diffusion(grid, 0.0)
        values = np.ones(grid.n_cells)
        values[4] = 0.0
        f = Density(grid, values)
        with pytest.raises(ValueError, match="entropic flux requires positivity"):
            entropic_flux(f, cc_weights(f, dd), dd)

    def test_zero_on_steady_state(self, linear_model, grid):
        steady = linear_model.steady_state(grid, 0.0)
        dd = linear_model.drift_diffusion(grid, 0.0)
        flux = entropic_flux(steady, exact_weights(steady, dd), dd)
        np.testing.assert_allclose(flux, 0.0, atol=1e-12)


class TestMicroMacroFlux:
    def test_zero_perturbation_is_fixed(self):
        model = opinion_model(P=0.5, sigma2=0.2)
        grid = model.grid(30)
        steady = model.steady_state(grid, 0.0)
        dd = model.drift_diffusion(grid, 0.0)
        g = Density(grid, np.zeros(grid.n_cells), signed=True)
        flux = micro_macro_flux(g, steady, exact_weights(steady, dd), dd)
        np.testing.assert_allclose(flux, 0.0, atol=1e-14)

    def test_linear_model_matches_full_flux(self, linear_model, grid, rng):
        steady = linear_model.steady_state(grid, 0.0)
        dd = linear_model.drift_diffusion(grid, 0.0)
        weights = exact_weights(steady, dd)
        g = Density(grid, 0.05 * rng.standard_normal(grid.n_cells), signed=True)
        full = Density(grid, steady.values + g.values, signed=True)
        np.testing.assert_allclose(micro_macro_flux(g, steady, weights, dd), cc_flux(full, weights, dd),
                                   atol=1e-12)

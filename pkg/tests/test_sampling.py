# tests/test_sampling.py
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from kinetic.mesh import RandomInput, expectation, mass, quadrature_nodes
from kinetic.solver import DeterministicSolver, SolverConfig
from uq.sampling import (SampleEnsemble, VelocitySweep, clip_variance, collocate, equilibrium_expectation,
                         fm3c_estimate, m3c_estimate, mc_ensemble, mc_estimate, next_sample_count, pairwise_sum,
                         run_chunks, sample_statistics)
from utils.errors import SolverError


@pytest.fixture
def sweep(mixture_model, grid):
    return VelocitySweep(mixture_model, grid, SolverConfig(dt=1e-3, horizon=0.01, snapshot_every=5))


@pytest.fixture
def random_input():
    return RandomInput(-1.0, 1.0, seed=7)


class TestReductions:
    def test_pairwise_sum(self, rng):
        values = rng.standard_normal((7, 3))
        np.testing.assert_allclose(pairwise_sum(values), values.sum(axis=0), rtol=1e-12)

    def test_pairwise_sum_empty(self):
        with pytest.raises(ValueError):
            pairwise_sum(np.zeros((0, 3)))

    def test_unweighted_statistics(self, rng):
        values = rng.standard_normal((9, 4))
        mean, variance = sample_statistics(values)
        np.testing.assert_allclose(mean, values.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(variance, values.var(axis=0, ddof=1), rtol=1e-12)

    def test_weighted_statistics(self):
        values = np.array([[0.0], [2.0]])
        mean, variance = sample_statistics(values, np.array([0.75, 0.25]))
        np.testing.assert_allclose(mean, [0.5])
        np.testing.assert_allclose(variance, [0.75])

    def test_single_sample_has_zero_variance(self):
        _, variance = sample_statistics(np.ones((1, 3)))
        np.testing.assert_array_equal(variance, 0.0)

    def test_clip_variance(self):
        np.testing.assert_array_equal(clip_variance(np.array([-1e-14, 0.5])), [0.0, 0.5])
        with pytest.raises(ValueError):
            clip_variance(np.array([-1e-6]))


class TestRunChunks:
    def test_results_in_order(self):
        results = run_chunks(lambda a, b: (a, b), 7, chunk_size=3)
        assert results == [(0, 3), (3, 6), (6, 7)]

    def test_executor_keeps_order(self):
        with ThreadPoolExecutor(max_workers=3) as executor:
            results = run_chunks(lambda a, b: list(range(a, b)), 10, executor, chunk_size=2)
        assert sum(results, []) == list(range(10))

    def test_failures_name_the_range(self):
        def task(a, b):
            raise ValueError("boom")

        with pytest.raises(SolverError, match="samples 0..3 failed: boom"):
            run_chunks(task, 4, label="sample")


class TestSampleCount:
    @pytest.mark.parametrize("before, after, expected", [
        (1.0, 0.5, 50),
        (1.0, 0.001, 1),
        (1.0, 2.0, 100),
        (0.0, 0.0, 100),
    ])
    def test_next_count(self, before, after, expected):
        assert next_sample_count(100, before, after) == expected

    def test_growth_from_zero(self):
        with pytest.raises(SolverError):
            next_sample_count(10, 0.0, 1e-3)

    def test_discard_is_even_and_final(self):
        ensemble = SampleEnsemble(np.zeros(10), np.zeros((10, 2)), np.zeros((10, 2)), np.arange(10))
        ensemble.discard(4)
        np.testing.assert_array_equal(ensemble.active, [0, 3, 6, 9])
        with pytest.raises(ValueError):
            ensemble.discard(5)


class TestCollocation:
    def test_initial_mean_is_quadrature_of_datum(self, sweep, random_input, mixture_model, grid):
        series = collocate(sweep, random_input, 5)
        nodes, weights = quadrature_nodes(random_input, 5)
        expected = expectation(mixture_model.initial_datum(grid, nodes).values, weights)
        np.testing.assert_allclose(series.mean[0], expected, rtol=1e-12)
        assert series.count == 5
        assert len(series) == 3

    def test_mass_of_mean_is_conserved(self, sweep, random_input, grid):
        series = collocate(sweep, random_input, 4)
        final = series.final
        assert mass(final.mean) == pytest.approx(1.0, abs=1e-10)
        assert np.all(final.variance.values >= 0)

    def test_chunked_sweep_matches(self, sweep, random_input):
        serial = collocate(sweep, random_input, 6)
        with ThreadPoolExecutor(max_workers=2) as executor:
            chunked = collocate(sweep, random_input, 6, executor, chunk_size=2)
        np.testing.assert_allclose(chunked.mean, serial.mean, rtol=1e-12, atol=1e-15)


class TestMonteCarlo:
    def test_needs_two_samples(self, sweep, random_input):
        with pytest.raises(ValueError):
            mc_estimate(sweep, random_input, 1)

    def test_initial_statistics(self, sweep, random_input, mixture_model, grid):
        series = mc_estimate(sweep, random_input, 8)
        datum = mixture_model.initial_datum(grid, random_input.sample(8)).values
        np.testing.assert_allclose(series.mean[0], datum.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(series.variance[0], datum.var(axis=0, ddof=1), rtol=1e-10, atol=1e-15)
        assert series.seed == 7

    def test_identical_for_any_thread_count(self, sweep, random_input):
        serial = mc_estimate(sweep, random_input, 16, chunk_size=4)
        with ThreadPoolExecutor(max_workers=4) as executor:
            threaded = mc_estimate(sweep, random_input, 16, executor, chunk_size=4)
        np.testing.assert_array_equal(threaded.mean, serial.mean)
        np.testing.assert_array_equal(threaded.variance, serial.variance)

    @pytest.mark.slow
    def test_error_decays_like_inverse_square_root(self, sweep, random_input, grid):
        reference = collocate(sweep, random_input, 12).mean[-1]
        repetitions = [random_input.repetition(r) for r in range(32)]
        counts = np.array([8, 32, 128, 512])
        errors = []
        for M in counts:
            _, snapshots = mc_ensemble(sweep, repetitions, int(M))
            means = snapshots[-1].mean(axis=1)
            errors.append(np.sqrt(np.mean((grid.dw * np.sum(np.abs(means - reference), axis=-1)) ** 2)))
        slope = np.polyfit(np.log(counts), np.log(errors), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)


class TestMicroMacro:
    def test_bank_must_cover_samples(self, sweep, random_input):
        with pytest.raises(ValueError):
            m3c_estimate(sweep, random_input, 4, 8)

    def test_initial_mean_splits_into_bank_and_perturbation(self, sweep, random_input, mixture_model, grid):
        series = m3c_estimate(sweep, random_input, 16, 4)
        bank, _, _ = equilibrium_expectation(sweep, random_input, 16)
        thetas = random_input.sample(4)
        datum = mixture_model.initial_datum(grid, thetas).values
        g0 = datum - sweep.equilibrium(thetas)
        np.testing.assert_allclose(series.mean[0], bank + g0.mean(axis=0), rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(series.variance[0], datum.var(axis=0, ddof=1), rtol=1e-8, atol=1e-14)
        assert series.traces["perturbation_variance"].shape == (len(series),)

    def test_matches_full_solver(self, mixture_model, grid):
        theta = np.array([-0.5, 0.5])
        config = SolverConfig(dt=1e-5, horizon=1e-3, flux="exact")
        full = DeterministicSolver(mixture_model, grid, config).run(theta)
        sweep = VelocitySweep(mixture_model, grid, config)
        f_inf = sweep.equilibrium(theta)
        advance = sweep.perturbation_stepper(theta, f_inf)
        g = sweep.datum(theta) - f_inf
        for _ in range(config.n_steps):
            g = advance(g)
        np.testing.assert_allclose(f_inf + g, full.final.values, atol=1e-8)

    def test_identical_for_any_thread_count(self, sweep, random_input):
        serial = m3c_estimate(sweep, random_input, 32, 16, chunk_size=4)
        with ThreadPoolExecutor(max_workers=4) as executor:
            threaded = m3c_estimate(sweep, random_input, 32, 16, executor, chunk_size=4)
        np.testing.assert_array_equal(threaded.mean, serial.mean)
        np.testing.assert_array_equal(threaded.variance, serial.variance)
        np.testing.assert_array_equal(threaded.traces["perturbation_variance"],
                                      serial.traces["perturbation_variance"])

    def test_quadrature_bank(self, sweep, random_input, mixture_model, grid):
        expected, nodes, weights = equilibrium_expectation(sweep, random_input, 0, quadrature=6)
        assert nodes.size == 6
        assert expected.shape == (grid.n_cells,)
        assert mass_of(expected, grid) == pytest.approx(1.0)

    def test_fm3c_traces(self, sweep, random_input):
        series = fm3c_estimate(sweep, random_input, 32, 16)
        counts = series.traces["active_samples"]
        assert counts.shape == (sweep.config.n_steps + 1,)
        assert counts[0] == 16
        assert np.all(np.diff(counts) <= 0)
        assert counts.min() >= 1
        assert series.traces["perturbation_variance"].shape == counts.shape
        assert series.method == "fm3c"

    def test_fm3c_needs_bank(self, sweep, random_input):
        with pytest.raises(ValueError):
            fm3c_estimate(sweep, random_input, 4, 8)


def mass_of(values, grid):
    return grid.dw * float(np.sum(values))

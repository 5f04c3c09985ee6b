# tests/test_mesh.py
import numpy as np
import pytest

from kinetic.mesh import (Density, RandomInput, VelocityGrid, expectation, mass, maxwellian, moments, normalize,
                          quadrature_nodes)


class TestVelocityGrid:
    def test_rejects_single_cell(self):
        with pytest.raises(ValueError, match="n_cells must be"):
            VelocityGrid(-1.0, 1.0, 1)

    def test_rejects_empty_domain(self):
        with pytest.raises(ValueError):
            VelocityGrid(1.0, 1.0, 10)

    def test_cells_and_faces(self):
        grid = VelocityGrid(0.0, 1.0, 4)
        assert grid.dw == pytest.approx(0.25)
        np.testing.assert_allclose(grid.centers, [0.125, 0.375, 0.625, 0.875])
        np.testing.assert_allclose(grid.faces, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert grid.faces[-1] == 1.0

    def test_matches(self):
        assert VelocityGrid(-1.0, 1.0, 10).matches(VelocityGrid(-1.0, 1.0, 10))
        assert not VelocityGrid(-1.0, 1.0, 10).matches(VelocityGrid(-1.0, 1.0, 11))


class TestDensity:
    def test_negative_values_need_signed(self, grid):
        values = np.ones(grid.n_cells)
        values[3] = -0.1
        with pytest.raises(ValueError, match="negative"):
            Density(grid, values)
        assert Density(grid, values, signed=True).signed

    def test_wrong_length(self, grid):
        with pytest.raises(ValueError):
            Density(grid, np.ones(grid.n_cells + 1))

    def test_evolved_marks_lost_positivity(self, grid):
        f = Density(grid, np.ones(grid.n_cells))
        values = np.ones(grid.n_cells)
        values[0] = -1e-3
        assert f.evolved(values).signed
        assert not f.evolved(np.ones(grid.n_cells)).signed

    def test_batch_shape(self, grid):
        f = Density(grid, np.ones((3, grid.n_cells)))
        assert f.batch_shape == (3,)
        assert f[1].batch_shape == ()


class TestMoments:
    def test_maxwellian_moments(self):
        grid = VelocityGrid(-5.0, 5.0, 200)
        f = Density(grid, normalize(grid, maxwellian(grid.centers, 0.3, 0.5)))
        m0, u, temperature = moments(f)
        assert m0 == pytest.approx(1.0, abs=1e-12)
        assert u == pytest.approx(0.3, abs=1e-8)
        assert temperature == pytest.approx(0.5, abs=1e-6)

    def test_batched(self, grid):
        values = normalize(grid, np.stack([np.ones(grid.n_cells), np.arange(1.0, grid.n_cells + 1)]), [1.0, 2.0])
        np.testing.assert_allclose(mass(Density(grid, values)), [1.0, 2.0])

    def test_degenerate(self, grid):
        with pytest.raises(ValueError, match="degenerate density"):
            moments(Density(grid, np.zeros(grid.n_cells)))

    def test_maxwellian_needs_positive_temperature(self):
        with pytest.raises(ValueError):
            maxwellian(np.zeros(3), 0.0, 0.0)


class TestRandomInput:
    def test_samples_nest(self):
        random_input = RandomInput(-1.0, 1.0, seed=7)
        np.testing.assert_array_equal(random_input.sample(5), random_input.sample(10)[:5])
        np.testing.assert_array_equal(random_input.sample(3, start=2), random_input.sample(5)[2:])

    def test_support(self):
        samples = RandomInput(-0.1, 0.1, seed=3).sample(200)
        assert np.all(samples >= -0.1) and np.all(samples <= 0.1)

    def test_repetitions_are_independent(self):
        random_input = RandomInput(seed=11)
        assert not np.array_equal(random_input.repetition(0).sample(4), random_input.repetition(1).sample(4))
        np.testing.assert_array_equal(random_input.repetition(1).sample(4), random_input.repetition(1).sample(4))

    def test_seed_changes_samples(self):
        assert not np.array_equal(RandomInput(seed=1).sample(4), RandomInput(seed=2).sample(4))

    def test_reference_map(self):
        random_input = RandomInput(-0.1, 0.3)
        theta = np.linspace(-0.1, 0.3, 7)
        np.testing.assert_allclose(random_input.from_reference(random_input.to_reference(theta)), theta)
        np.testing.assert_allclose(random_input.to_reference([-0.1, 0.3]), [-1.0, 1.0])

    def test_invalid(self):
        with pytest.raises(ValueError):
            RandomInput(1.0, -1.0)
        with pytest.raises(ValueError):
            RandomInput(distribution="normal")


class TestQuadrature:
    def test_weights_are_probabilities(self):
        _, weights = quadrature_nodes(RandomInput(-0.1, 0.1), 6)
        assert np.sum(weights) == pytest.approx(1.0)
        assert np.all(weights > 0)

    def test_uniform_moments(self):
        nodes, weights = quadrature_nodes(RandomInput(-1.0, 1.0), 3)
        assert expectation(nodes ** 2, weights) == pytest.approx(1.0 / 3.0)
        assert expectation(nodes ** 5, weights) == pytest.approx(0.0, abs=1e-15)

    def test_expectation_of_rows(self):
        nodes, weights = quadrature_nodes(RandomInput(0.0, 2.0), 4)
        rows = np.outer(nodes, [1.0, 2.0])
        np.testing.assert_allclose(expectation(rows, weights), [1.0, 2.0])

    def test_needs_a_node(self):
        with pytest.raises(ValueError):
            quadrature_nodes(RandomInput(), 0)

    @pytest.mark.parametrize("M", [1, 2, 5, 10, 20])
    def test_exact_up_to_degree_2m_minus_1(self, M):
        nodes, weights = quadrature_nodes(RandomInput(-1.0, 1.0), M)
        for k in range(1, 2 * M):
            legendre = np.polynomial.legendre.legval(nodes, np.eye(k + 1)[k])
            assert expectation(legendre, weights) == pytest.approx(0.0, abs=1e-13)
        nodes, weights = quadrature_nodes(RandomInput(2.0, 5.0), M)
        for k in range(2 * M):
            exact = (5.0 ** (k + 1) - 2.0 ** (k + 1)) / (3.0 * (k + 1))
            assert expectation(nodes ** k, weights) == pytest.approx(exact, rel=1e-12)

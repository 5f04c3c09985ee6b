# tests/test_solver.py
import numpy as np
import pytest

from kinetic.mesh import Density, VelocityGrid, mass, normalize
from kinetic.models import swarming_model
from kinetic.solver import DeterministicSolver, PhaseSpaceSolver, SolverConfig
from kinetic.transport import SpaceGrid, phase_mass, swarming_phase_datum


class TestSolverConfig:
    def test_step_divides_horizon(self):
        config = SolverConfig(dt=0.3, horizon=1.0)
        assert config.n_steps == 4
        assert config.step == pytest.approx(0.25)

    def test_snapshot_selection(self):
        config = SolverConfig(dt=0.25, horizon=1.0)
        assert config.keeps(0) and config.keeps(4)
        assert not config.keeps(2)
        assert SolverConfig(dt=0.25, horizon=1.0, snapshot_every=2).keeps(2)

    @pytest.mark.parametrize("kwargs", [
        {"flux": "upwind"},
        {"mode": "leapfrog"},
        {"mode": "semi_implicit", "flux": "entropic"},
        {"dt": 0.0},
    ])
    def test_rejects(self, kwargs):
        arguments = {"dt": 0.1, "horizon": 1.0, **kwargs}
        with pytest.raises(ValueError):
            SolverConfig(**arguments)


class TestDeterministicSolver:
    def test_exact_flux_keeps_steady_state(self, linear_model, grid):
        steady = linear_model.steady_state(grid, 0.0)
        solver = DeterministicSolver(linear_model, grid, SolverConfig(dt=1e-3, horizon=0.05, flux="exact"))
        run = solver.run(0.0, initial=steady)
        np.testing.assert_allclose(run.final.values, steady.values, atol=1e-12)
        assert run.n_steps == 50
        assert run.snapshots.shape == (2, grid.n_cells)

    def test_batched_run_matches_scalar_runs(self, mixture_model, grid):
        config = SolverConfig(dt=1e-3, horizon=0.02, snapshot_every=5)
        theta = np.array([-0.5, 0.5])
        batched = DeterministicSolver(mixture_model, grid, config).run(theta)
        assert batched.snapshots.shape == (5, 2, grid.n_cells)
        for row, value in enumerate(theta):
            single = DeterministicSolver(mixture_model, grid, config).run(float(value))
            np.testing.assert_allclose(batched.final.values[row], single.final.values, rtol=1e-10, atol=1e-14)

    def test_semi_implicit_entropy_decays(self, linear_model, grid):
        initial = Density(grid, normalize(grid, np.linspace(0.5, 1.5, grid.n_cells)))
        config = SolverConfig(dt=0.05, horizon=1.0, flux="exact", mode="semi_implicit", track_entropy=True)
        run = DeterministicSolver(linear_model, grid, config).run(0.0, initial=initial)
        assert run.entropy.values.shape == (run.n_steps + 1,)
        assert run.entropy.is_non_increasing()
        assert np.all(run.entropy.dissipation >= 0)
        assert run.info["mass_drift"] < 1e-12
        assert mass(run.final) == pytest.approx(1.0)


class TestPhaseSpaceSolver:
    @pytest.fixture
    def setup(self):
        model = swarming_model(alpha=1.0, D=0.2)
        grid = VelocityGrid(-3.0, 3.0, 24)
        space = SpaceGrid(0.0, 10.0, 10)
        return model, grid, space

    def test_conserves_mass(self, setup):
        model, grid, space = setup
        config = SolverConfig(dt=0.01, horizon=0.03, mode="semi_implicit", snapshot_every=1)
        solver = PhaseSpaceSolver(model, grid, space, config)
        datum = swarming_phase_datum(space, grid, mu_x=5.0)
        run = solver.run(np.array([0.0, 0.5]), datum)
        assert run.snapshots.shape == (4, 2, space.n_x, grid.n_cells)
        np.testing.assert_allclose(phase_mass(run.final.values, space, grid), 1.0, atol=1e-10)
        assert run.info["mass_drift"] < 1e-10

    def test_micro_macro_keeps_equilibrium(self, setup):
        model, grid, space = setup
        config = SolverConfig(dt=0.01, horizon=0.03, mode="semi_implicit")
        solver = PhaseSpaceSolver(model, grid, space, config)
        datum = swarming_phase_datum(space, grid, mu_x=5.0)
        equilibrium = solver.homogeneous_equilibrium(0.0, datum)
        assert phase_mass(equilibrium, space, grid) == pytest.approx(1.0, rel=1e-10)
        run = solver.run(0.0, equilibrium, equilibrium)
        assert run.final.signed
        np.testing.assert_allclose(run.final.values, 0.0, atol=1e-12)

    def test_rejects_entropic_flux(self, setup):
        model, grid, space = setup
        with pytest.raises(ValueError):
            PhaseSpaceSolver(model, grid, space, SolverConfig(dt=0.01, horizon=0.1, flux="entropic"))

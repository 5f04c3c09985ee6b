# kinetic/solver.py
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from kinetic.diagnostics import EntropyTrace, discrete_dissipation, relative_entropy
from kinetic.flux import (DriftDiffusion, FluxWeights, cc_flux, cc_weights, central_flux, entropic_flux,
                          drift_correction_flux, exact_weights, micro_macro_flux)
from kinetic.mesh import Density, VelocityGrid
from kinetic.models import ModelSpec
from kinetic.stepping import (STEP_MODES, StepControl, apply_quasi_stationary_right, cfl_explicit,
                              cfl_semi_implicit, step_explicit, step_semi_implicit, step_ssp)
from kinetic.transport import SpaceGrid, local_mean_velocity, phase_mass, strang_split_step

logger = logging.getLogger('kinetic_uq')

FLUX_KINDS = ("cc", "entropic", "exact", "central")


@dataclass(frozen=True)
class SolverConfig:
    """
    Discretisation choices of a deterministic run.

    Args:
        dt (float): Requested time step; shortened so that it divides the horizon
        horizon (float): Final time
        flux (str): cc, entropic, exact or central
        rule (str): Face quadrature rule for the Chang-Cooper weights
        mode (str): Time stepping mode
        snapshot_every (int): Keep every k-th step; 0 keeps the first and last only
        track_entropy (bool): Record relative entropy and dissipation every step
        cfl_safety (float): Fraction of the CFL bound the step may use
    """

    dt: float
    horizon: float
    flux: str = "cc"
    rule: str = "midpoint"
    mode: str = "explicit_euler"
    snapshot_every: int = 0
    track_entropy: bool = False
    cfl_safety: float = 1.0

    def __post_init__(self):
        if self.flux not in FLUX_KINDS:
            raise ValueError(f"Unknown flux kind '{self.flux}'")
        if self.mode not in STEP_MODES:
            raise ValueError(f"Unknown stepping mode '{self.mode}'")
        if self.mode == "semi_implicit" and self.flux == "entropic":
            raise ValueError("semi-implicit stepping needs a linear flux (cc, exact or central)")
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got {self.dt}")
        if self.horizon < 0:
            raise ValueError(f"Horizon must be non-negative, got {self.horizon}")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be non-negative")

    @property
    def n_steps(self) -> int:
        if self.horizon == 0:
            return 0
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def step(self) -> float:
        """Time step actually taken."""
        return self.horizon / self.n_steps if self.n_steps else self.dt

    def keeps(self, index: int) -> bool:
        if index == 0 or index == self.n_steps:
            return True
        return self.snapshot_every > 0 and index % self.snapshot_every == 0


@dataclass
class SolverRun:
    """
    Output of a deterministic run.

    Args:
        times (array): Snapshot times
        snapshots (array): Snapshot values, shape (n_snapshots, ..., n_cells)
        final (Density): State at the horizon
        dt (float): Step taken
        n_steps (int): Number of steps
        entropy (EntropyTrace, optional): Per-step relative entropy and dissipation
        reference (Density, optional): Steady state used by exact weights and entropy
        info (dict): Extra run facts (mass drift, CFL bound)
    """

    times: np.ndarray
    snapshots: np.ndarray
    final: Density
    dt: float
    n_steps: int
    entropy: Optional[EntropyTrace] = None
    reference: Optional[Density] = None
    info: Dict[str, Any] = field(default_factory=dict)


class DeterministicSolver:
    """
    Structure-preserving solver of one Fokker-Planck model, batched over θ.

    A run at an array of θ values advances one density row per θ with a single
    array program per step.
    """

    def __init__(self, model: ModelSpec, grid: VelocityGrid, config: SolverConfig):
        """
        Initialize the solver

        Args:
            model (ModelSpec): Model to solve
            grid (VelocityGrid): Velocity mesh
            config (SolverConfig): Discretisation choices
        """
        self.model = model
        self.grid = grid
        self.config = config
        self.control = StepControl(config.step, config.mode, config.cfl_safety)

    def reference(self, theta: Any, initial: Density) -> Density:
        """Steady state: the closed form when available, else built from the datum's moments."""
        if self.model.steady_state is not None:
            return self.model.steady_state(self.grid, theta)
        if self.model.equilibrium is not None:
            return self.model.equilibrium(initial, theta)
        raise ValueError(f"Model '{self.model.name}' has no steady state constructor")

    def weights(self, f: Density, dd: DriftDiffusion, reference: Optional[Density] = None) -> FluxWeights:
        if self.config.flux == "exact":
            if reference is None:
                raise ValueError("exact weights need the steady state")
            return exact_weights(reference, dd)
        return cc_weights(f, dd, self.config.rule)

    def flux_builder(self, dd: DriftDiffusion, reference: Optional[Density] = None,
                     frozen: Optional[FluxWeights] = None) -> Callable[[Density], np.ndarray]:
        """Face flux as a function of the density; frozen weights are reused on every call."""
        kind = self.config.flux

        def build(f: Density) -> np.ndarray:
            weights = frozen if frozen is not None else self.weights(f, dd, reference)
            if kind == "entropic":
                return entropic_flux(f, weights, dd)
            if kind == "central":
                return central_flux(f, weights, dd)
            return cc_flux(f, weights, dd)

        return build

    def _frozen_weights(self, f: Density, dd: DriftDiffusion, reference: Optional[Density]) -> Optional[FluxWeights]:
        if self.config.flux == "exact" or not dd.density_dependent:
            return self.weights(f, dd, reference)
        return None

    def cfl_bound(self, weights: FluxWeights, dd: DriftDiffusion) -> float:
        if self.config.mode == "semi_implicit":
            return cfl_semi_implicit(weights, self.grid)
        return cfl_explicit(weights, dd, self.grid)

    def step(self, f: Density, dd: DriftDiffusion, reference: Optional[Density] = None,
             frozen: Optional[FluxWeights] = None) -> Density:
        """
        Advance one step in the configured mode and apply the boundary rule.

        Args:
            f (Density): Current density
            dd (DriftDiffusion): Drift and diffusion at the run's θ
            reference (Density, optional): Steady state, needed by exact weights
            frozen (FluxWeights, optional): Weights that do not depend on f

        Returns:
            Density: Density after one step
        """
        dt = self.control.dt
        mode = self.config.mode
        weights = frozen
        if mode == "semi_implicit":
            weights = weights if weights is not None else self.weights(f, dd, reference)
            if self.config.flux == "central":
                weights = FluxWeights(weights.c_tilde, weights.lam, np.full_like(weights.delta, 0.5))
            result = step_semi_implicit(f, weights, dd, dt)
        elif mode == "explicit_euler":
            result = step_explicit(f, self.flux_builder(dd, reference, frozen)(f), dt)
        else:
            result = step_ssp(f, self.flux_builder(dd, reference, frozen), dt, 2 if mode == "ssp_rk2" else 3)

        if self.model.boundary == "quasi_stationary_right":
            if weights is None:
                weights = self.weights(result, dd, reference)
            result = apply_quasi_stationary_right(result, weights)
        return result

    def run(self, theta: Any, initial: Optional[Density] = None, reference: Optional[Density] = None) -> SolverRun:
        """
        Solve from the datum to the horizon.

        Args:
            theta (float or array): Random input value(s); an array batches the run
            initial (Density, optional): Start state, defaults to the model's datum
            reference (Density, optional): Steady state for exact weights and entropy

        Returns:
            SolverRun: Snapshots, final state and diagnostics
        """
        config = self.config
        dd = self.model.drift_diffusion(self.grid, theta)
        f = initial if initial is not None else self.model.initial_datum(self.grid, theta)
        if reference is None and (config.flux == "exact" or config.track_entropy):
            reference = self.reference(theta, f)

        frozen = self._frozen_weights(f, dd, reference)
        bound = self.cfl_bound(frozen if frozen is not None else self.weights(f, dd, reference), dd)
        self.control.admissible(bound)

        times, snapshots = [0.0], [f.values.copy()]
        entropy, dissipation = [], []
        form = "entropic" if config.flux == "entropic" else "cc"

        def record_entropy(state: Density):
            entropy.append(relative_entropy(state, reference))
            if np.all(state.values > 0):
                dissipation.append(discrete_dissipation(state, reference, dd, form))
            else:
                dissipation.append(np.full(np.shape(entropy[-1]), np.nan))

        if config.track_entropy:
            record_entropy(f)

        initial_mass = self.grid.dw * np.sum(f.values, axis=-1)
        for index in range(1, config.n_steps + 1):
            f = self.step(f, dd, reference, frozen)
            if config.track_entropy:
                record_entropy(f)
            if config.keeps(index):
                times.append(index * self.control.dt)
                snapshots.append(f.values.copy())

        mass_drift = float(np.max(np.abs(self.grid.dw * np.sum(f.values, axis=-1) - initial_mass)))
        logger.debug(f"{self.model.name}: {config.n_steps} steps of {self.control.dt:.3e}, mass drift {mass_drift:.2e}")

        trace = None
        if config.track_entropy:
            step_times = np.arange(config.n_steps + 1) * self.control.dt
            trace = EntropyTrace(step_times, np.array(entropy), np.array(dissipation))
        return SolverRun(
            times=np.array(times),
            snapshots=np.array(snapshots),
            final=f,
            dt=self.control.dt,
            n_steps=config.n_steps,
            entropy=trace,
            reference=reference,
            info={"mass_drift": mass_drift, "cfl_bound": bound},
        )


class PhaseSpaceSolver:
    """
    Vlasov-Fokker-Planck solver on (x, w) by Strang splitting: WENO transport in
    x, then the structure-preserving Fokker-Planck step in every space cell with
    the local mean velocity u_f(x).

    Phase-space arrays have shape (..., n_x, n_v), θ on the leading axis.
    """

    def __init__(self, model: ModelSpec, grid: VelocityGrid, space: SpaceGrid, config: SolverConfig,
                 courant: Optional[float] = 1.0 / 6.0):
        """
        Initialize the solver

        Args:
            model (ModelSpec): Model with a local_drift_diffusion constructor
            grid (VelocityGrid): Velocity mesh
            space (SpaceGrid): Space mesh
            config (SolverConfig): Discretisation of the Fokker-Planck step
            courant (float, optional): Transport subcycling Courant number
        """
        if model.local_drift_diffusion is None:
            raise ValueError(f"Model '{model.name}' has no phase-space drift")
        if config.flux not in ("cc", "exact"):
            raise ValueError("phase-space runs use the cc or exact flux")
        self.model = model
        self.grid = grid
        self.space = space
        self.config = config
        self.courant = courant
        self.control = StepControl(config.step, config.mode, config.cfl_safety)

    def _local_drift(self, theta: Any, values: np.ndarray) -> DriftDiffusion:
        u_f = local_mean_velocity(values, self.space, self.grid, self.model.space_kernel)
        return self.model.local_drift_diffusion(self.grid, theta, u_f)

    def _fp_step(self, f: Density, weights: FluxWeights, dd: DriftDiffusion, source: Optional[np.ndarray] = None,
                 flux: Optional[np.ndarray] = None) -> Density:
        dt = self.control.dt
        if self.config.mode == "semi_implicit":
            return step_semi_implicit(f, weights, dd, dt, source=source)
        if self.config.mode != "explicit_euler":
            raise ValueError("phase-space runs step the Fokker-Planck part with explicit_euler or semi_implicit")
        return step_explicit(f, flux, dt)

    def fp_stepper(self, theta: Any) -> Callable[[np.ndarray, float], np.ndarray]:
        """Fokker-Planck stepper on the full density for the splitting."""
        def advance(values: np.ndarray, dt: float) -> np.ndarray:
            dd = self._local_drift(theta, values)
            f = Density(self.grid, values, signed=bool(np.any(values < 0)))
            weights = cc_weights(f, dd, self.config.rule)
            flux = None if self.config.mode == "semi_implicit" else cc_flux(f, weights, dd)
            return self._fp_step(f, weights, dd, flux=flux).values

        return advance

    def micro_macro_stepper(self, theta: Any, equilibrium: np.ndarray) -> Callable[[np.ndarray, float], np.ndarray]:
        """
        Fokker-Planck stepper on the perturbation g = f - f_inf, f_inf uniform in
        space. Transport leaves f_inf unchanged, so the splitting acts on g alone.
        """
        f_inf = Density(self.grid, equilibrium)
        mean_inf = self.grid.dw * np.sum(self.grid.centers * equilibrium, axis=-1) / \
            (self.grid.dw * np.sum(equilibrium, axis=-1))
        dd_inf = self.model.local_drift_diffusion(self.grid, theta, np.broadcast_to(
            np.asarray(mean_inf)[..., None], equilibrium.shape[:-1] + (1,)))
        weights = exact_weights(f_inf, dd_inf)

        def advance(values: np.ndarray, dt: float) -> np.ndarray:
            g = Density(self.grid, values, signed=True)
            dd_full = self._local_drift(theta, equilibrium + values)
            if self.config.mode == "semi_implicit":
                source = drift_correction_flux(g, f_inf, dd_inf, dd_full)
                return self._fp_step(g, weights, dd_inf, source=source).values
            flux = micro_macro_flux(g, f_inf, weights, dd_inf, dd_full)
            return self._fp_step(g, weights, dd_inf, flux=flux).values

        return advance

    def run(self, theta: Any, initial: np.ndarray, equilibrium: Optional[np.ndarray] = None) -> SolverRun:
        """
        Solve the phase-space problem to the horizon.

        Args:
            theta (float or array): Random input value(s)
            initial (array): Phase-space datum (n_x, n_v), broadcast over θ
            equilibrium (array, optional): Space-homogeneous steady state per θ, shape
                (..., n_x, n_v); when given the run evolves g = f - equilibrium

        Returns:
            SolverRun: Snapshots of f (or g), final state as a Density over (θ, x) rows
        """
        theta_array = np.asarray(theta, dtype=float)
        values = np.broadcast_to(initial, theta_array.shape + initial.shape[-2:]).astype(float)
        if equilibrium is not None:
            values = values - equilibrium
            stepper = self.micro_macro_stepper(theta, equilibrium)
        else:
            stepper = self.fp_stepper(theta)

        dt = self.control.dt
        start_mass = phase_mass(values, self.space, self.grid)
        times, snapshots = [0.0], [values.copy()]
        for index in range(1, self.config.n_steps + 1):
            values = strang_split_step(values, stepper, dt, self.space, self.grid, self.courant)
            if self.config.keeps(index):
                times.append(index * dt)
                snapshots.append(values.copy())

        mass_drift = float(np.max(np.abs(phase_mass(values, self.space, self.grid) - start_mass)))
        full = values if equilibrium is None else values + equilibrium
        if np.any(full < 0):
            logger.warning(f"Phase-space run lost positivity: min value {full.min():.3e}")
        logger.debug(f"Phase-space run: {self.config.n_steps} steps, mass drift {mass_drift:.2e}")
        return SolverRun(
            times=np.array(times),
            snapshots=np.array(snapshots),
            final=Density(self.grid, values, signed=equilibrium is not None or bool(np.any(values < 0))),
            dt=dt,
            n_steps=self.config.n_steps,
            info={"mass_drift": mass_drift, "min_value": float(full.min())},
        )

    def marginal(self, values: np.ndarray) -> np.ndarray:
        """Velocity marginal dx Σ_x f, shape (..., n_v)."""
        return self.space.dx * np.sum(values, axis=-2)

    def homogeneous_equilibrium(self, theta: Any, initial: np.ndarray) -> np.ndarray:
        """Global steady state f_inf(w)/L built from the datum's velocity marginal, broadcast over x."""
        if self.model.equilibrium is None:
            raise ValueError(f"Model '{self.model.name}' has no equilibrium constructor")
        theta_array = np.asarray(theta, dtype=float)
        marginal = np.broadcast_to(self.marginal(initial), theta_array.shape + (self.grid.n_cells,))
        velocity = self.model.equilibrium(Density(self.grid, marginal), theta).values
        return np.broadcast_to(velocity[..., None, :] / self.space.length,
                               theta_array.shape + (self.space.n_x, self.grid.n_cells)).copy()

# kinetic/stepping.py
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from kinetic.flux import DriftDiffusion, FluxWeights
from kinetic.mesh import Density, VelocityGrid
from utils.errors import SolverError

logger = logging.getLogger('kinetic_uq')

STEP_MODES = ("explicit_euler", "ssp_rk2", "ssp_rk3", "semi_implicit")


@dataclass(frozen=True)
class StepControl:
    """
    Time step and stepping mode.

    Args:
        dt (float): Time step
        mode (str): explicit_euler, ssp_rk2, ssp_rk3 or semi_implicit
        cfl_safety (float): Fraction of the CFL bound the step may use
    """

    dt: float
    mode: str = "explicit_euler"
    cfl_safety: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got {self.dt}")
        if self.mode not in STEP_MODES:
            raise ValueError(f"Unknown stepping mode '{self.mode}'")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must be in (0, 1]")

    def admissible(self, bound: float) -> bool:
        """Check dt against a CFL bound, logging a warning when it is exceeded."""
        limit = bound * self.cfl_safety
        if self.dt > limit:
            logger.warning(f"Time step {self.dt:.4e} exceeds CFL bound {limit:.4e} ({self.mode})")
            return False
        return True


def cfl_explicit(weights: FluxWeights, dd: DriftDiffusion, grid: VelocityGrid) -> float:
    """Positivity bound dw² / (2 (U dw + D_max)) of the explicit Chang-Cooper scheme."""
    drift_max = float(np.max(np.abs(weights.c_tilde)))
    diffusion_max = float(np.max(dd.diffusion_at(grid.faces[1:-1])))
    return grid.dw ** 2 / (2.0 * (drift_max * grid.dw + diffusion_max))


def cfl_semi_implicit(weights: FluxWeights, grid: VelocityGrid) -> float:
    """Positivity bound dw / (2 U) of the semi-implicit scheme; infinite without drift."""
    drift_max = float(np.max(np.abs(weights.c_tilde)))
    if drift_max == 0:
        return float("inf")
    return grid.dw / (2.0 * drift_max)


def flux_divergence(flux: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """(F_{i+1/2} - F_{i-1/2}) / dw for a face array of shape (..., n_cells + 1)."""
    flux = np.asarray(flux, dtype=float)
    if flux.shape[-1] != grid.n_cells + 1:
        raise ValueError(f"Face array has {flux.shape[-1]} entries for {grid.n_cells} cells")
    return (flux[..., 1:] - flux[..., :-1]) / grid.dw


def step_explicit(f: Density, flux: np.ndarray, dt: float, cfl: Optional[float] = None) -> Density:
    """
    Forward Euler update f + dt (F_{i+1/2} - F_{i-1/2}) / dw.

    Args:
        f (Density): Current density
        flux (array): Flux on every face
        dt (float): Time step
        cfl (float, optional): Bound to check dt against; only warns

    Returns:
        Density: Updated density
    """
    if cfl is not None and dt > cfl:
        logger.warning(f"Explicit step {dt:.4e} exceeds CFL bound {cfl:.4e}")
    return f.evolved(f.values + dt * flux_divergence(flux, f.grid))


def ssp_rk(values: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], dt: float, order: int) -> np.ndarray:
    """
    Shu-Osher SSP Runge-Kutta step of du/dt = rhs(u) as convex combinations
    of forward Euler stages.

    Args:
        values (array): State
        rhs (callable): Time derivative
        dt (float): Time step
        order (int): 1, 2 or 3

    Returns:
        array: State after one step
    """
    if order == 1:
        return values + dt * rhs(values)
    if order == 2:
        stage = values + dt * rhs(values)
        return 0.5 * values + 0.5 * (stage + dt * rhs(stage))
    if order == 3:
        stage = values + dt * rhs(values)
        stage = 0.75 * values + 0.25 * (stage + dt * rhs(stage))
        return values / 3.0 + 2.0 / 3.0 * (stage + dt * rhs(stage))
    raise ValueError(f"SSP order must be 1, 2 or 3, got {order}")


def step_ssp(f: Density, flux_builder: Callable[[Density], np.ndarray], dt: float, order: int = 2) -> Density:
    """
    SSP-RK2/RK3 step; the flux (and so its weights) is rebuilt at every stage.

    Args:
        f (Density): Current density
        flux_builder (callable): Density -> flux on every face
        dt (float): Time step
        order (int): 2 or 3

    Returns:
        Density: Updated density
    """
    if order not in (2, 3):
        raise ValueError(f"SSP order must be 2 or 3, got {order}")
    grid, signed = f.grid, f.signed

    def rhs(values: np.ndarray) -> np.ndarray:
        stage = Density(grid, values, signed=True) if signed or np.any(values < 0) else Density(grid, values)
        return flux_divergence(flux_builder(stage), grid)

    return f.evolved(ssp_rk(f.values, rhs, dt, order))


def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Tridiagonal solve by forward elimination and back substitution, vectorised
    over leading batch axes. lower[..., 0] and upper[..., -1] are ignored.

    Returns:
        array: Solution with the broadcast shape of the inputs
    """
    shape = np.broadcast_shapes(np.shape(lower), np.shape(diag), np.shape(upper), np.shape(rhs))
    lower, diag, upper, rhs = (np.broadcast_to(np.asarray(a, dtype=float), shape) for a in (lower, diag, upper, rhs))
    n = shape[-1]
    tiny = np.finfo(float).tiny
    c_prime = np.empty(shape)
    d_prime = np.empty(shape)

    pivot = diag[..., 0]
    for i in range(n):
        if i > 0:
            pivot = diag[..., i] - lower[..., i] * c_prime[..., i - 1]
        if not np.all(np.abs(pivot) > tiny):
            raise SolverError(f"singular tridiagonal system (zero pivot in row {i})")
        c_prime[..., i] = upper[..., i] / pivot
        previous = d_prime[..., i - 1] if i > 0 else 0.0
        d_prime[..., i] = (rhs[..., i] - lower[..., i] * previous) / pivot

    solution = np.empty(shape)
    solution[..., -1] = d_prime[..., -1]
    for i in range(n - 2, -1, -1):
        solution[..., i] = d_prime[..., i] - c_prime[..., i] * solution[..., i + 1]
    return solution


def step_semi_implicit(f: Density, weights: FluxWeights, dd: DriftDiffusion, dt: float,
                       source: Optional[np.ndarray] = None, cfl: Optional[float] = None) -> Density:
    """
    Semi-implicit step: C̃ and δ frozen at time n, the flux taken at n + 1.
    Solves f^{n+1} - dt/dw (F^{n+1}_{i+1/2} - F^{n+1}_{i-1/2}) = f^n + dt * div(source).

    Args:
        f (Density): Current density
        weights (FluxWeights): Weights frozen at time n
        dd (DriftDiffusion): Drift and diffusion
        dt (float): Time step
        source (array, optional): Extra face flux treated explicitly
        cfl (float, optional): Bound to check dt against; only warns

    Returns:
        Density: Updated density
    """
    if cfl is not None and dt >= cfl:
        logger.warning(f"Semi-implicit step {dt:.4e} exceeds CFL bound {cfl:.4e}")
    grid = f.grid
    if weights.n_faces != grid.n_cells + 1:
        raise ValueError(f"Weights have {weights.n_faces} faces for {grid.n_cells} cells")
    ratio = dt / grid.dw
    d_inner = np.asarray(dd.diffusion_at(grid.faces[1:-1]), dtype=float)
    c = weights.c_tilde[..., 1:-1]
    delta = weights.delta[..., 1:-1]
    # face flux = right_coef * f_{i+1} + left_coef * f_i
    right_coef = c * (1.0 - delta) + d_inner / grid.dw
    left_coef = c * delta - d_inner / grid.dw
    right_coef, left_coef = np.broadcast_arrays(right_coef, left_coef)

    batch = np.broadcast_shapes(right_coef.shape[:-1], f.batch_shape)
    shape = batch + (grid.n_cells,)
    lower = np.zeros(shape)
    diag = np.ones(shape)
    upper = np.zeros(shape)
    lower[..., 1:] = ratio * left_coef
    upper[..., :-1] = -ratio * right_coef
    diag[..., :-1] -= ratio * left_coef
    diag[..., 1:] += ratio * right_coef

    rhs = f.values
    if source is not None:
        rhs = rhs + dt * flux_divergence(source, grid)
    return f.evolved(thomas_solve(lower, diag, upper, rhs))


def apply_quasi_stationary_right(f: Density, weights: FluxWeights) -> Density:
    """Slave the last cell to its neighbour through the local equilibrium ratio exp(-λ)."""
    values = np.array(f.values, dtype=float)
    values[..., -1] = values[..., -2] * np.exp(-weights.lam[..., -2])
    return Density(f.grid, values, f.signed)

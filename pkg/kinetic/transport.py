# kinetic/transport.py
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from kinetic.mesh import VelocityGrid, maxwellian
from kinetic.stepping import ssp_rk

logger = logging.getLogger('kinetic_uq')

WENO_EPSILON = 1e-6


@dataclass(frozen=True)
class SpaceGrid:
    """
    Uniform mesh in physical space for the phase-space density f(x, w),
    stored as arrays of shape (..., n_x, n_v).

    Args:
        x_min (float): Left end
        x_max (float): Right end
        n_x (int): Number of cells, at least the WENO stencil width
        periodic (bool): Periodic ends; otherwise zero inflow
    """

    x_min: float
    x_max: float
    n_x: int
    periodic: bool = True

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 5:
            raise ValueError("n_x must be ≥ 5")
        if self.x_max <= self.x_min:
            raise ValueError(f"Invalid space domain [{self.x_min}, {self.x_max}]")

    @cached_property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @cached_property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.dx

    @property
    def length(self) -> float:
        return self.x_max - self.x_min


def phase_mass(values: np.ndarray, space: SpaceGrid, grid: VelocityGrid) -> np.ndarray:
    """dx dw Σ f over the last two axes."""
    total = space.dx * grid.dw * np.sum(values, axis=(-2, -1))
    return float(total) if np.ndim(total) == 0 else total


def swarming_phase_datum(space: SpaceGrid, grid: VelocityGrid, mu_x: float = 0.0, sigma_x: float = 0.25,
                         mean_w: float = 1.5, sigma2_w: float = 0.25) -> np.ndarray:
    """
    Two bivariate Gaussians in (x, w) at velocities ±mean_w sharing the position
    mu_x (measured periodically), normalised to unit phase-space mass.
    """
    offset = space.centers - mu_x
    if space.periodic:
        offset = (offset + 0.5 * space.length) % space.length - 0.5 * space.length
    in_space = np.exp(-offset ** 2 / (2.0 * sigma_x ** 2))
    in_velocity = maxwellian(grid.centers, mean_w, sigma2_w) + maxwellian(grid.centers, -mean_w, sigma2_w)
    values = in_space[:, None] * in_velocity[None, :]
    return values / phase_mass(values, space, grid)


def local_mean_velocity(values: np.ndarray, space: SpaceGrid, grid: VelocityGrid,
                        kernel: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """
    K-weighted mean velocity u_f(x) = ∫K(x,y) ∫w f dw dy / ∫K(x,y) ∫f dw dy.

    Args:
        values (array): Phase-space density (..., n_x, n_v)
        space (SpaceGrid): Space mesh
        grid (VelocityGrid): Velocity mesh
        kernel (callable, optional): K(x, y); None means K = 1

    Returns:
        array: u_f of shape (..., n_x, 1)
    """
    m0 = np.sum(values, axis=-1)
    m1 = np.sum(values * grid.centers, axis=-1)
    if kernel is None:
        numerator = np.sum(m1, axis=-1, keepdims=True) * np.ones_like(m1)
        denominator = np.sum(m0, axis=-1, keepdims=True) * np.ones_like(m0)
    else:
        weights = np.asarray(kernel(space.centers[:, None], space.centers[None, :]), dtype=float)
        numerator = m1 @ weights.T
        denominator = m0 @ weights.T
    mean = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)
    return mean[..., None]


def _shift(values: np.ndarray, offset: int, periodic: bool) -> np.ndarray:
    """Array whose entry i holds values[i + offset] along the space axis."""
    if periodic:
        return np.roll(values, -offset, axis=-2)
    shifted = np.zeros_like(values)
    n = values.shape[-2]
    if offset >= 0:
        shifted[..., :n - offset, :] = values[..., offset:, :]
    else:
        shifted[..., -offset:, :] = values[..., :n + offset, :]
    return shifted


def _weno5(a, b, c, d, e):
    """Fifth-order WENO value at the right edge of cell c from the stencil a..e."""
    q0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0
    q1 = (-b + 5.0 * c + 2.0 * d) / 6.0
    q2 = (2.0 * c + 5.0 * d - e) / 6.0

    beta0 = 13.0 / 12.0 * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2
    beta1 = 13.0 / 12.0 * (b - 2.0 * c + d) ** 2 + 0.25 * (b - d) ** 2
    beta2 = 13.0 / 12.0 * (c - 2.0 * d + e) ** 2 + 0.25 * (3.0 * c - 4.0 * d + e) ** 2

    alpha0 = 0.1 / (WENO_EPSILON + beta0) ** 2
    alpha1 = 0.6 / (WENO_EPSILON + beta1) ** 2
    alpha2 = 0.3 / (WENO_EPSILON + beta2) ** 2
    return (alpha0 * q0 + alpha1 * q1 + alpha2 * q2) / (alpha0 + alpha1 + alpha2)


def _limit_positive(mean: np.ndarray, left: np.ndarray, right: np.ndarray):
    """Scale edge values toward the cell mean so that the three-point Simpson decomposition is nonnegative."""
    middle = (mean - (left + right) / 6.0) * 1.5
    lowest = np.minimum(np.minimum(left, right), middle)
    gap = mean - lowest
    theta = np.where(lowest < 0, np.divide(mean, gap, out=np.zeros_like(gap), where=gap > 0), 1.0)
    theta = np.clip(theta, 0.0, 1.0)
    return mean + theta * (left - mean), mean + theta * (right - mean)


def transport_rhs(values: np.ndarray, space: SpaceGrid, grid: VelocityGrid, positivity: bool = True) -> np.ndarray:
    """-∂_x (w f) with WENO5 face values and upwinding by the sign of each velocity."""
    periodic = space.periodic
    u = [_shift(values, k, periodic) for k in range(-2, 4)]
    # u[k + 2] holds u_{i+k}
    from_left = _weno5(u[0], u[1], u[2], u[3], u[4])
    from_right = _weno5(u[5], u[4], u[3], u[2], u[1])

    if positivity:
        # edges of cell i: left edge is from_right at i-1/2, right edge is from_left at i+1/2
        left_edge, right_edge = _limit_positive(values, _shift(from_right, -1, periodic), from_left)
        from_left = right_edge
        from_right = _shift(left_edge, 1, periodic)

    speeds = grid.centers
    flux = np.where(speeds > 0, speeds * from_left, speeds * from_right)
    return -(flux - _shift(flux, -1, periodic)) / space.dx


def transport_step(values: np.ndarray, space: SpaceGrid, grid: VelocityGrid, dt: float,
                   courant: Optional[float] = None, positivity: bool = True) -> np.ndarray:
    """
    Advance free transport ∂_t f + w ∂_x f = 0 by dt with SSP-RK3.

    Args:
        values (array): Phase-space density (..., n_x, n_v)
        space (SpaceGrid): Space mesh
        grid (VelocityGrid): Velocity mesh (the advection speeds)
        dt (float): Time step
        courant (float, optional): Subcycle so that dt_sub max|w| / dx ≤ courant
        positivity (bool): Apply the positivity-preserving edge limiter

    Returns:
        array: Transported density
    """
    speed = float(np.max(np.abs(grid.centers)))
    if speed == 0:
        return np.array(values, dtype=float)
    bound = space.dx / speed
    substeps = 1
    if courant is not None:
        substeps = max(1, math.ceil(dt / (courant * bound) - 1e-12))
    elif dt > bound:
        logger.warning(f"Transport step {dt:.4e} exceeds advective CFL bound {bound:.4e}")

    rhs = lambda state: transport_rhs(state, space, grid, positivity)
    step = dt / substeps
    result = np.asarray(values, dtype=float)
    for _ in range(substeps):
        result = ssp_rk(result, rhs, step, 3)
    return result


def strang_split_step(values: np.ndarray, fp_stepper: Callable[[np.ndarray, float], np.ndarray], dt: float,
                      space: SpaceGrid, grid: VelocityGrid, courant: Optional[float] = None,
                      positivity: bool = True) -> np.ndarray:
    """
    Second-order splitting: transport dt/2, Fokker-Planck dt in every space
    cell, transport dt/2.

    Args:
        values (array): Phase-space density (..., n_x, n_v)
        fp_stepper (callable): (values, dt) -> values; recomputes u_f(x) itself
        dt (float): Time step
        space (SpaceGrid): Space mesh
        grid (VelocityGrid): Velocity mesh
        courant (float, optional): Transport subcycling Courant number
        positivity (bool): Positivity limiter in the transport stages

    Returns:
        array: Updated density
    """
    half = transport_step(values, space, grid, 0.5 * dt, courant, positivity)
    half = fp_stepper(half, dt)
    return transport_step(half, space, grid, 0.5 * dt, courant, positivity)

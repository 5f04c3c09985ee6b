# kinetic/models.py
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import gammaln

from kinetic.flux import DriftDiffusion
from kinetic.mesh import Density, VelocityGrid, mass, maxwellian, moments, normalize
from utils.errors import SolverError

logger = logging.getLogger('kinetic_uq')

Parameter = Union[float, Callable[[np.ndarray], np.ndarray]]

BOUNDARY_RULES = ("no_flux", "quasi_stationary_right")


@dataclass(frozen=True)
class ModelSpec:
    """
    A kinetic model parameterised by the scalar random input θ.

    All callables accept θ as a scalar or a 1-D array; with an array the
    returned densities carry one row per θ.

    Args:
        name (str): Model id
        domain (tuple): (w_min, w_max)
        drift_diffusion (callable): (grid, θ) -> DriftDiffusion
        initial_datum (callable): (grid, θ) -> Density
        steady_state (callable, optional): (grid, θ) -> Density, closed form normalised on the grid
        equilibrium (callable, optional): (datum, θ) -> Density built from the datum's moments
        boundary (str): no_flux or quasi_stationary_right
        local_drift_diffusion (callable, optional): (grid, θ, u_f) -> DriftDiffusion with a given
            local mean velocity, for the phase-space solver
        space_kernel (callable, optional): Localisation kernel K(x, y) of u_f; None means K = 1
        parameters (dict): Values recorded in run manifests
    """

    name: str
    domain: Tuple[float, float]
    drift_diffusion: Callable[[VelocityGrid, Any], DriftDiffusion]
    initial_datum: Callable[[VelocityGrid, Any], Density]
    steady_state: Optional[Callable[[VelocityGrid, Any], Density]] = None
    equilibrium: Optional[Callable[[Density, Any], Density]] = None
    boundary: str = "no_flux"
    local_drift_diffusion: Optional[Callable[[VelocityGrid, Any, np.ndarray], DriftDiffusion]] = None
    space_kernel: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    parameters: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.boundary not in BOUNDARY_RULES:
            raise ValueError(f"Unknown boundary rule '{self.boundary}'")

    def grid(self, n_cells: int) -> VelocityGrid:
        return VelocityGrid(self.domain[0], self.domain[1], n_cells)


def _as_function(parameter: Parameter) -> Callable[[np.ndarray], np.ndarray]:
    if callable(parameter):
        return parameter
    value = float(parameter)
    return lambda theta: np.full(np.shape(theta), value)


def _column(values: Any) -> np.ndarray:
    """θ-dependent quantity shaped to broadcast against (..., points)."""
    values = np.asarray(values, dtype=float)
    return values[..., None] if values.ndim else values


def _first_moments(grid: VelocityGrid, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m0 = grid.dw * np.sum(values, axis=-1, keepdims=True)
    m1 = grid.dw * np.sum(grid.centers * values, axis=-1, keepdims=True)
    return m0, m1


def _from_log(grid: VelocityGrid, log_values: np.ndarray, target: Any = 1.0) -> np.ndarray:
    shifted = np.exp(log_values - np.max(log_values, axis=-1, keepdims=True))
    return normalize(grid, shifted, target)


def interp_rows(points: np.ndarray, centers: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Linear interpolation of cell-centre rows (..., N) to points, with linear extrapolation."""
    index = np.clip(np.searchsorted(centers, points) - 1, 0, centers.size - 2)
    t = (points - centers[index]) / (centers[index + 1] - centers[index])
    return rows[..., index] * (1.0 - t) + rows[..., index + 1] * t


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def two_gaussian_datum(c: float = 0.1, sigma2: Parameter = 0.1) -> Callable[[VelocityGrid, Any], Density]:
    """Equal mixture of Gaussians centred at ±c with variance σ²(θ), normalised on the grid."""
    sigma2_fn = _as_function(sigma2)

    def datum(grid: VelocityGrid, theta: Any) -> Density:
        s2 = _column(sigma2_fn(np.asarray(theta, dtype=float)))
        w = grid.centers
        values = 0.5 * (maxwellian(w, c, s2) + maxwellian(w, -c, s2))
        return Density(grid, normalize(grid, values))

    return datum


def opinion_bump_datum(c: float = 30.0, centre: float = 0.5) -> Callable[[VelocityGrid, Any], Density]:
    """β [exp(-c (w + centre)²) + exp(-c (w - centre)²)], β fixed by normalisation."""
    def datum(grid: VelocityGrid, theta: Any) -> Density:
        w = grid.centers
        values = np.exp(-c * (w + centre) ** 2) + np.exp(-c * (w - centre) ** 2)
        values = np.broadcast_to(values, np.shape(theta) + w.shape)
        return Density(grid, normalize(grid, values))

    return datum


def wealth_bump_datum(c: float = 20.0, mean: float = 2.0) -> Callable[[VelocityGrid, Any], Density]:
    """β exp(-c (w - mean)²) on the truncated half line."""
    def datum(grid: VelocityGrid, theta: Any) -> Density:
        w = grid.centers
        values = np.broadcast_to(np.exp(-c * (w - mean) ** 2), np.shape(theta) + w.shape)
        return Density(grid, normalize(grid, values))

    return datum


def swarming_velocity_datum(mean: float = 1.5, sigma2: float = 0.25) -> Callable[[VelocityGrid, Any], Density]:
    """Velocity marginal of the swarming datum: Gaussians at ±mean with variance sigma2."""
    def datum(grid: VelocityGrid, theta: Any) -> Density:
        w = grid.centers
        values = 0.5 * (maxwellian(w, mean, sigma2) + maxwellian(w, -mean, sigma2))
        values = np.broadcast_to(values, np.shape(theta) + w.shape)
        return Density(grid, normalize(grid, values))

    return datum


# ---------------------------------------------------------------------------
# Linear Fokker-Planck
# ---------------------------------------------------------------------------

def linear_fp_model(u: float = 0.0, T: Parameter = 1.0,
                    initial_datum: Optional[Callable[[VelocityGrid, Any], Density]] = None,
                    domain: Tuple[float, float] = (-1.0, 1.0)) -> ModelSpec:
    """
    Linear Fokker-Planck model: B = w - u, D = T(θ), Maxwellian steady state.

    Args:
        u (float): Mean velocity
        T (float or callable): Temperature T(θ) > 0
        initial_datum (callable, optional): Defaults to the Maxwellian itself
        domain (tuple): Velocity domain

    Returns:
        ModelSpec: The model
    """
    temperature = _as_function(T)

    def temperature_column(theta: Any) -> np.ndarray:
        values = _column(temperature(np.asarray(theta, dtype=float)))
        if np.any(values <= 0):
            raise ValueError("Temperature must be positive")
        return values

    def drift_diffusion(grid: VelocityGrid, theta: Any) -> DriftDiffusion:
        t_col = temperature_column(theta)
        return DriftDiffusion(
            drift_at=lambda points, values: points - u,
            diffusion_at=lambda points: t_col * np.ones_like(points),
            diffusion_prime_at=lambda points: np.zeros_like(points),
            density_dependent=False,
        )

    def steady_state(grid: VelocityGrid, theta: Any) -> Density:
        return Density(grid, normalize(grid, maxwellian(grid.centers, u, temperature_column(theta))))

    def equilibrium(datum: Density, theta: Any) -> Density:
        # the drift fixes mean and temperature; only the mass comes from the datum
        values = maxwellian(datum.grid.centers, u, temperature_column(theta))
        return Density(datum.grid, normalize(datum.grid, values, mass(datum)))

    if initial_datum is None:
        initial_datum = steady_state

    return ModelSpec(
        name="linear_fp",
        domain=domain,
        drift_diffusion=drift_diffusion,
        initial_datum=initial_datum,
        steady_state=steady_state,
        equilibrium=equilibrium,
        parameters={"u": u},
    )


def mixture_relaxation_model(c: float = 0.1, sigma2: float = 0.1, epsilon: float = 5e-3,
                             domain: Tuple[float, float] = (-1.0, 1.0)) -> ModelSpec:
    """
    Linear Fokker-Planck relaxation of the two-Gaussian mixture with uncertain
    width σ²(θ) = sigma2 + epsilon θ; the diffusion is the mixture temperature
    T(θ) = σ²(θ) + c².
    """
    sigma2_fn = lambda theta: sigma2 + epsilon * np.asarray(theta, dtype=float)
    model = linear_fp_model(
        u=0.0,
        T=lambda theta: sigma2_fn(theta) + c ** 2,
        initial_datum=two_gaussian_datum(c, sigma2_fn),
        domain=domain,
    )
    model.parameters.update({"c": c, "sigma2": sigma2, "epsilon": epsilon})
    return model


# ---------------------------------------------------------------------------
# Opinion formation
# ---------------------------------------------------------------------------

def opinion_steady_state(w: np.ndarray, propensity: Any, sigma2: float, u: Any) -> np.ndarray:
    """
    Logarithm of the unnormalised steady state of the opinion model with
    constant compromise propensity P:
    (1+w)^{Pu/2σ²} (1-w)^{-Pu/2σ²} (1-w²)^{-2} exp(-P (1 - u w) / (σ² (1 - w²))).
    """
    p = np.asarray(propensity, dtype=float)
    u = np.asarray(u, dtype=float)
    exponent = p * u / (2.0 * sigma2)
    return (exponent * (np.log1p(w) - np.log1p(-w))
            - p * (1.0 - u * w) / (sigma2 * (1.0 - w ** 2))
            - 2.0 * np.log1p(-w ** 2))


def opinion_model(P: Parameter = 1.0, sigma2: float = 0.2,
                  initial_datum: Optional[Callable[[VelocityGrid, Any], Density]] = None,
                  kernel: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None) -> ModelSpec:
    """
    Opinion formation on [-1, 1]: B[f] = ∫ P (w - w*) f(w*) dw*, D = σ²/2 (1 - w²)².

    Args:
        P (float or callable): Compromise propensity P(θ) in [0, 1]
        sigma2 (float): Noise σ²
        initial_datum (callable, optional): Defaults to the symmetric bump pair
        kernel (callable, optional): Propensity P(θ, w, w*) depending on the opinions;
            replaces P and disables the closed-form steady state

    Returns:
        ModelSpec: The model
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    propensity = _as_function(P)
    datum = initial_datum or opinion_bump_datum()

    def diffusion(points: np.ndarray) -> np.ndarray:
        return 0.5 * sigma2 * (1.0 - points ** 2) ** 2

    def diffusion_prime(points: np.ndarray) -> np.ndarray:
        return -2.0 * sigma2 * points * (1.0 - points ** 2)

    def drift_diffusion(grid: VelocityGrid, theta: Any) -> DriftDiffusion:
        theta = np.asarray(theta, dtype=float)
        if kernel is None:
            p_col = _column(propensity(theta))

            def drift(points, values):
                m0, m1 = _first_moments(grid, values)
                return p_col * (points * m0 - m1)
        else:
            w = grid.centers
            weights = kernel(theta[..., None, None] if theta.ndim else theta, w[:, None], w[None, :])
            weights = np.asarray(weights, dtype=float) * np.subtract.outer(w, w)

            def drift(points, values):
                at_centres = grid.dw * np.einsum('...ij,...j->...i', weights, values)
                return interp_rows(points, w, at_centres)

        return DriftDiffusion(drift, diffusion, diffusion_prime)

    def steady_for(grid: VelocityGrid, theta: Any, u: Any, m0: Any = 1.0) -> Density:
        p_col = _column(propensity(np.asarray(theta, dtype=float)))
        log_values = opinion_steady_state(grid.centers, p_col, sigma2, _column(u))
        return Density(grid, _from_log(grid, log_values, m0))

    def steady_state(grid: VelocityGrid, theta: Any) -> Density:
        _, u, _ = moments(datum(grid, theta))
        return steady_for(grid, theta, u)

    def equilibrium(start: Density, theta: Any) -> Density:
        m0, u, _ = moments(start)
        return steady_for(start.grid, theta, u, m0)

    return ModelSpec(
        name="opinion",
        domain=(-1.0, 1.0),
        drift_diffusion=drift_diffusion,
        initial_datum=datum,
        steady_state=steady_state if kernel is None else None,
        equilibrium=equilibrium if kernel is None else None,
        parameters={"sigma2": sigma2},
    )


# ---------------------------------------------------------------------------
# Wealth distribution
# ---------------------------------------------------------------------------

def wealth_steady_state(w: np.ndarray, sigma2: Any, mean: Any = 1.0) -> np.ndarray:
    """
    Inverse-Gamma steady state with Pareto exponent μ = 1 + 2/σ² and the given
    mean: ((μ-1)m)^μ / Γ(μ) w^{-1-μ} exp(-(μ-1)m / w).
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    mu = 1.0 + 2.0 / sigma2
    scale = (mu - 1.0) * np.asarray(mean, dtype=float)
    with np.errstate(divide='ignore'):
        log_pdf = mu * np.log(scale) - gammaln(mu) - (1.0 + mu) * np.log(w) - scale / w
    return np.where(w > 0, np.exp(log_pdf), 0.0)


def wealth_model(sigma2: Parameter = 0.1, L: float = 10.0,
                 initial_datum: Optional[Callable[[VelocityGrid, Any], Density]] = None) -> ModelSpec:
    """
    Wealth distribution on [0, L]: B[f] = ∫ (w - w*) f(w*) dw*, D = σ²(θ) w² / 2,
    quasi-stationary truncation at w = L.

    Args:
        sigma2 (float or callable): Market risk σ²(θ) > 0
        L (float): Truncation of the half line
        initial_datum (callable, optional): Defaults to the bump at w = 2

    Returns:
        ModelSpec: The model
    """
    sigma2_fn = _as_function(sigma2)
    datum = initial_datum or wealth_bump_datum()

    def sigma2_column(theta: Any) -> np.ndarray:
        values = _column(sigma2_fn(np.asarray(theta, dtype=float)))
        if np.any(values <= 0):
            raise ValueError("sigma2 must be positive")
        return values

    def drift_diffusion(grid: VelocityGrid, theta: Any) -> DriftDiffusion:
        s_col = sigma2_column(theta)

        def drift(points, values):
            m0, m1 = _first_moments(grid, values)
            return points * m0 - m1

        return DriftDiffusion(
            drift_at=drift,
            diffusion_at=lambda points: 0.5 * s_col * points ** 2,
            diffusion_prime_at=lambda points: s_col * points,
        )

    def steady_for(grid: VelocityGrid, theta: Any, mean: Any, m0: Any = 1.0) -> Density:
        values = wealth_steady_state(grid.centers, sigma2_column(theta), _column(mean))
        return Density(grid, normalize(grid, values, m0))

    def steady_state(grid: VelocityGrid, theta: Any) -> Density:
        _, mean, _ = moments(datum(grid, theta))
        return steady_for(grid, theta, mean)

    def equilibrium(start: Density, theta: Any) -> Density:
        m0, mean, _ = moments(start)
        return steady_for(start.grid, theta, mean, m0)

    return ModelSpec(
        name="wealth",
        domain=(0.0, L),
        drift_diffusion=drift_diffusion,
        initial_datum=datum,
        steady_state=steady_state,
        equilibrium=equilibrium,
        boundary="quasi_stationary_right",
        parameters={"L": L},
    )


# ---------------------------------------------------------------------------
# Swarming with self-propulsion
# ---------------------------------------------------------------------------

def swarming_potential(w: np.ndarray, alpha: float, u: Any) -> np.ndarray:
    """α w⁴/4 + (1 - α) w²/2 - u w; its derivative is the swarming drift."""
    return alpha * w ** 4 / 4.0 + (1.0 - alpha) * w ** 2 / 2.0 - np.asarray(u, dtype=float) * w


def swarming_equilibrium(grid: VelocityGrid, alpha: float, diffusion: Any, u0: Any = 0.0,
                         omega: float = 0.5, tol: float = 1e-12, max_iter: int = 10000) -> Tuple[np.ndarray, np.ndarray]:
    """
    Homogeneous swarming equilibrium exp(-Φ_u / D) with self-consistent mean
    velocity, by the damped iteration u <- (1 - ω) u + ω mean(f(u)).

    Args:
        grid (VelocityGrid): Velocity mesh
        alpha (float): Self-propulsion strength
        diffusion (float or array): D(θ), one value per row
        u0 (float or array): Starting mean velocity
        omega (float): Damping
        tol (float): Tolerance on the update
        max_iter (int): Iteration cap

    Returns:
        tuple: (normalised equilibrium values, mean velocities)
    """
    d_col = _column(diffusion)
    u = np.broadcast_to(np.asarray(u0, dtype=float), np.shape(diffusion)).astype(float)
    trace = []
    for iteration in range(max_iter):
        values = _from_log(grid, -swarming_potential(grid.centers, alpha, _column(u)) / d_col)
        mean = grid.dw * np.sum(grid.centers * values, axis=-1)
        residual = float(np.max(np.abs(mean - u)))
        trace.append(residual)
        if residual < tol:
            logger.debug(f"Swarming equilibrium converged after {iteration} iterations (residual {residual:.2e})")
            return values, u
        u = (1.0 - omega) * u + omega * mean
    raise SolverError(f"Swarming equilibrium did not converge in {max_iter} iterations "
                      f"(last residual {trace[-1]:.3e})", trace=trace)


def swarming_drift(alpha: float, d_col: np.ndarray, grid: VelocityGrid,
                   u_f: Optional[np.ndarray] = None) -> DriftDiffusion:
    """
    Drift α w (w² - 1) + (w - u_f), constant diffusion. Without u_f the mean
    velocity is taken from each density row.
    """
    def drift(points, values):
        if u_f is not None:
            mean = u_f
        else:
            m0, m1 = _first_moments(grid, values)
            mean = np.divide(m1, m0, out=np.zeros_like(m1), where=m0 > 0)
        return alpha * points * (points ** 2 - 1.0) + points - mean

    return DriftDiffusion(
        drift_at=drift,
        diffusion_at=lambda points: d_col * np.ones_like(points),
        diffusion_prime_at=lambda points: np.zeros_like(points),
    )


def swarming_model(alpha: float = 1.0, D: Parameter = 0.2, domain: Tuple[float, float] = (-3.0, 3.0),
                   initial_datum: Optional[Callable[[VelocityGrid, Any], Density]] = None,
                   kernel: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> ModelSpec:
    """
    Self-propelled swarming with uncertain noise D(θ).

    The velocity part is the homogeneous model; the phase-space solver uses
    `local_drift_diffusion` with the K-weighted local mean velocity u_f(x).
    K defaults to 1 (global mean velocity).

    Args:
        alpha (float): Self-propulsion strength α > 0
        D (float or callable): Noise D(θ) > 0
        domain (tuple): Velocity domain
        initial_datum (callable, optional): Velocity datum, defaults to the bimodal pair
        kernel (callable, optional): Localisation kernel K(x, y) > 0

    Returns:
        ModelSpec: The model
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    noise = _as_function(D)
    datum = initial_datum or swarming_velocity_datum()

    def noise_column(theta: Any) -> np.ndarray:
        values = _column(noise(np.asarray(theta, dtype=float)))
        if np.any(values <= 0):
            raise ValueError("Noise D(θ) must be positive")
        return values

    def drift_diffusion(grid: VelocityGrid, theta: Any) -> DriftDiffusion:
        return swarming_drift(alpha, noise_column(theta), grid)

    def local_drift_diffusion(grid: VelocityGrid, theta: Any, u_f: np.ndarray) -> DriftDiffusion:
        # rows are (θ, x): the noise column gains an x axis
        d_col = noise_column(theta)
        if d_col.ndim:
            d_col = d_col[..., None, :]
        return swarming_drift(alpha, d_col, grid, u_f)

    def steady_for(grid: VelocityGrid, theta: Any, u0: Any, m0: Any = 1.0) -> Density:
        d = noise(np.asarray(theta, dtype=float))
        values, _ = swarming_equilibrium(grid, alpha, d, u0)
        return Density(grid, values * _column(m0) if np.ndim(m0) else values * m0)

    def steady_state(grid: VelocityGrid, theta: Any) -> Density:
        _, u, _ = moments(datum(grid, theta))
        return steady_for(grid, theta, u)

    def equilibrium(start: Density, theta: Any) -> Density:
        m0, u, _ = moments(start)
        return steady_for(start.grid, theta, u, m0)

    return ModelSpec(
        name="swarming",
        domain=domain,
        drift_diffusion=drift_diffusion,
        initial_datum=datum,
        steady_state=steady_state,
        equilibrium=equilibrium,
        local_drift_diffusion=local_drift_diffusion,
        space_kernel=kernel,
        parameters={"alpha": alpha, "kernel": "constant" if kernel is None else "custom"},
    )


MODEL_FACTORIES = {
    "linear_fp": linear_fp_model,
    "mixture_relaxation": mixture_relaxation_model,
    "opinion": opinion_model,
    "wealth": wealth_model,
    "swarming": swarming_model,
}

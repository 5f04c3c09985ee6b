# uq/galerkin.py
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Optional, Tuple

import numpy as np

from kinetic.flux import DriftDiffusion
from kinetic.mesh import Density, RandomInput, VelocityGrid
from kinetic.models import ModelSpec
from kinetic.stepping import flux_divergence
from uq.sampling import UqEstimate, UqSeries, clip_variance

logger = logging.getLogger('kinetic_uq')

QUADRATURE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GpcBasis:
    """
    Legendre polynomial chaos for a uniform θ, orthogonal under p(θ) = 1/(b - a),
    with Φ_0 ≡ 1 and ||Φ_h||² = 1/(2h + 1).

    Args:
        order (int): Highest degree M
        random_input (RandomInput): Distribution of θ
        quadrature_points (int, optional): Inner-product rule size, 2M + 4 by default
    """

    order: int
    random_input: RandomInput = RandomInput()
    quadrature_points: Optional[int] = None

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("gPC order must be non-negative")
        if self.random_input.distribution != "uniform":
            raise ValueError("Legendre chaos needs a uniform input")

    @property
    def size(self) -> int:
        return self.order + 1

    @cached_property
    def norms(self) -> np.ndarray:
        return 1.0 / (2.0 * np.arange(self.size) + 1.0)

    def evaluate(self, theta: Any) -> np.ndarray:
        """Φ_h(θ) for every h, shape θ.shape + (M + 1,)."""
        xi = self.random_input.to_reference(theta)
        return np.polynomial.legendre.legvander(xi, self.order)

    @property
    def rule_size(self) -> int:
        return self.quadrature_points or 2 * self.order + 4

    def refined(self) -> "GpcBasis":
        """The same basis with an inner-product rule of twice the size."""
        return GpcBasis(self.order, self.random_input, 2 * self.rule_size)

    def quadrature_change(self, tensor_of: Callable[["GpcBasis"], np.ndarray]) -> float:
        """
        Largest change of a Galerkin tensor when the inner-product rule is doubled,
        relative to max(1, |tensor|).

        Args:
            tensor_of (callable): Basis -> tensor assembled with that basis' rule

        Returns:
            float: The change
        """
        coarse = np.asarray(tensor_of(self), dtype=float)
        fine = np.asarray(tensor_of(self.refined()), dtype=float)
        scale = max(1.0, float(np.max(np.abs(fine))))
        return float(np.max(np.abs(fine - coarse))) / scale

    @cached_property
    def quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        """θ nodes and probability weights of the inner-product rule."""
        xi, weights = np.polynomial.legendre.leggauss(self.rule_size)
        return self.random_input.from_reference(xi), weights / 2.0

    @cached_property
    def node_values(self) -> np.ndarray:
        """Φ_h at the quadrature nodes, shape (Q, M + 1)."""
        return self.evaluate(self.quadrature[0])

    def gram(self) -> np.ndarray:
        """E[Φ_h Φ_k] by quadrature; diagonal with the norms up to roundoff."""
        _, weights = self.quadrature
        phi = self.node_values
        return np.einsum('q,qh,qk->hk', weights, phi, phi)

    def project_nodes(self, values: np.ndarray) -> np.ndarray:
        """Expansion coefficients Σ_q ω_q v_q Φ_h(θ_q) / ||Φ_h||² of values given at the nodes (Q, ...)."""
        _, weights = self.quadrature
        coefficients = np.tensordot(weights[:, None] * self.node_values, values, axes=(0, 0))
        return coefficients / self.norms.reshape((-1,) + (1,) * (coefficients.ndim - 1))

    def tensor(self, values: np.ndarray) -> np.ndarray:
        """Galerkin matrix (1/||Φ_h||²) E[v Φ_k Φ_h] of a θ-dependent quantity given at the nodes (Q, P)."""
        _, weights = self.quadrature
        phi = self.node_values
        matrix = np.einsum('q,qp,qk,qh->hkp', weights, values, phi, phi)
        return matrix / self.norms[:, None, None]


@dataclass
class GpcField:
    """
    Density expanded as f(θ, w) = Σ_h f̂_h(w) Φ_h(θ).

    Args:
        grid (VelocityGrid): Velocity mesh
        basis (GpcBasis): Chaos basis
        coefficients (array): f̂_h, shape (M + 1, n_cells)
    """

    grid: VelocityGrid
    basis: GpcBasis
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.basis.size, self.grid.n_cells):
            raise ValueError(f"Coefficients of shape {self.coefficients.shape} do not match "
                             f"({self.basis.size}, {self.grid.n_cells})")

    @property
    def mean(self) -> np.ndarray:
        return self.coefficients[0]

    @property
    def variance(self) -> np.ndarray:
        """Σ_{h ≥ 1} f̂_h² ||Φ_h||², pointwise."""
        return clip_variance(np.tensordot(self.basis.norms[1:], self.coefficients[1:] ** 2, axes=(0, 0)))

    def reconstruct(self, theta: Any) -> np.ndarray:
        """f(θ, w) at the given θ values, shape θ.shape + (n_cells,)."""
        return self.basis.evaluate(theta) @ self.coefficients

    def estimate(self, time: float = 0.0) -> UqEstimate:
        mean = self.mean
        return UqEstimate(
            mean=Density(self.grid, mean, signed=bool(np.any(mean < 0))),
            variance=Density(self.grid, self.variance),
            method="galerkin",
            n_nodes_or_samples=self.basis.size,
            time=time,
        )

    def __add__(self, other: "GpcField") -> "GpcField":
        return GpcField(self.grid, self.basis, self.coefficients + other.coefficients)


def project(fn: Callable[[np.ndarray], Density], basis: GpcBasis, grid: VelocityGrid) -> GpcField:
    """
    Galerkin projection of a θ-dependent density by the basis quadrature.

    Args:
        fn (callable): θ array -> Density with one row per θ
        basis (GpcBasis): Chaos basis
        grid (VelocityGrid): Velocity mesh

    Returns:
        GpcField: Expansion coefficients
    """
    nodes, _ = basis.quadrature
    values = np.broadcast_to(fn(nodes).values, (len(nodes), grid.n_cells))
    return GpcField(grid, basis, basis.project_nodes(values))


def projection_tensor_b(basis: GpcBasis, dd: DriftDiffusion, coefficients: np.ndarray,
                        points: np.ndarray) -> np.ndarray:
    """
    Drift matrix b_hk[f̂](w) = (1/||Φ_h||²) E[B_θ[f^M] Φ_k Φ_h] at the given points.

    The density f^M = Σ_m f̂_m Φ_m is reconstructed at the quadrature nodes and
    the drift of each node evaluated there; for drifts linear in the density
    this equals the mode-by-mode sum Σ_m E[B_θ[f̂_m] Φ_k Φ_m].

    Args:
        basis (GpcBasis): Chaos basis
        dd (DriftDiffusion): Drift built at the basis quadrature nodes (one row per node)
        coefficients (array): f̂, shape (M + 1, n_cells)
        points (array): Evaluation points

    Returns:
        array: b, shape (M + 1, M + 1, len(points))
    """
    reconstructed = basis.node_values @ coefficients
    drift = np.asarray(dd.drift_at(points, reconstructed), dtype=float)
    drift = np.broadcast_to(drift, (reconstructed.shape[0], np.size(points)))
    return basis.tensor(drift)


def projection_tensor_d(basis: GpcBasis, dd: DriftDiffusion, points: np.ndarray) -> np.ndarray:
    """Diffusion matrix d_hk(w) = (1/||Φ_h||²) E[D_θ(w) Φ_k Φ_h]."""
    nodes, _ = basis.quadrature
    diffusion = np.broadcast_to(np.asarray(dd.diffusion_at(points), dtype=float), (len(nodes), np.size(points)))
    return basis.tensor(diffusion)


class GalerkinSystem:
    """
    Coupled stochastic Galerkin system of one model, discretised in w by
    second-order central differences with no-flux boundaries.
    """

    def __init__(self, model: ModelSpec, grid: VelocityGrid, basis: GpcBasis):
        """
        Initialize the system

        Args:
            model (ModelSpec): Model with θ-batched drift and diffusion
            grid (VelocityGrid): Velocity mesh
            basis (GpcBasis): Chaos basis
        """
        self.model = model
        self.grid = grid
        self.basis = basis
        nodes, _ = basis.quadrature
        self.dd = model.drift_diffusion(grid, nodes)
        self.faces = grid.faces[1:-1]
        self.d_centres = projection_tensor_d(basis, self.dd, grid.centers)
        self.quadrature_change = self.check_quadrature()

    def check_quadrature(self) -> float:
        """
        Rebuild the diffusion tensor and the drift tensor of the uniform density with
        a doubled inner-product rule; warn when either moves by QUADRATURE_TOLERANCE
        or more.

        Returns:
            float: Largest relative change
        """
        grid = self.grid
        uniform = np.zeros((self.basis.size, grid.n_cells))
        uniform[0] = 1.0 / grid.length

        def tensors(rule: GpcBasis) -> np.ndarray:
            dd = self.model.drift_diffusion(grid, rule.quadrature[0])
            drift = projection_tensor_b(rule, dd, uniform, self.faces)
            return np.concatenate([projection_tensor_d(rule, dd, grid.centers), drift], axis=-1)

        change = self.basis.quadrature_change(tensors)
        if change >= QUADRATURE_TOLERANCE:
            logger.warning(f"Galerkin inner products of '{self.model.name}' moved by {change:.2e} when the rule "
                           f"was doubled from {self.basis.rule_size} points; raise quadrature_points")
        return change

    def drift_tensor(self, coefficients: np.ndarray) -> np.ndarray:
        return projection_tensor_b(self.basis, self.dd, coefficients, self.faces)

    def diffusion_flux(self, coefficients: np.ndarray) -> np.ndarray:
        """(Σ_k d_hk f̂_k)_{i+1} - (Σ_k d_hk f̂_k)_i over dw on the interior faces."""
        spread = np.einsum('hkn,kn->hn', self.d_centres, coefficients)
        return (spread[:, 1:] - spread[:, :-1]) / self.grid.dw

    @staticmethod
    def _face_average(coefficients: np.ndarray) -> np.ndarray:
        return 0.5 * (coefficients[:, :-1] + coefficients[:, 1:])

    @staticmethod
    def _apply(matrix: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.einsum('hkp,kp->hp', matrix, values)

    def flux(self, coefficients: np.ndarray) -> np.ndarray:
        """Face flux of every mode, shape (M + 1, n_cells + 1)."""
        inner = self._apply(self.drift_tensor(coefficients), self._face_average(coefficients))
        inner = inner + self.diffusion_flux(coefficients)
        return np.pad(inner, [(0, 0), (1, 1)])

    def micro_macro_flux(self, g: np.ndarray, f_inf: np.ndarray) -> np.ndarray:
        """
        Face flux of the perturbation modes:
        b[f̂∞] avg(ĝ) + (b[f̂∞ + ĝ] - b[f̂∞]) avg(f̂∞ + ĝ) + diffusion of ĝ.
        Zero when ĝ is zero.
        """
        b_inf = self.drift_tensor(f_inf)
        full = f_inf + g
        change = self.drift_tensor(full) - b_inf
        inner = (self._apply(b_inf, self._face_average(g))
                 + self._apply(change, self._face_average(full))
                 + self.diffusion_flux(g))
        return np.pad(inner, [(0, 0), (1, 1)])

    def explicit_bound(self) -> float:
        """Diffusive step bound dw² / (2 max d) of the central scheme."""
        d_max = float(np.max(np.abs(self.d_centres)))
        return self.grid.dw ** 2 / (2.0 * d_max) if d_max > 0 else float("inf")


def gpc_step(field: GpcField, system: GalerkinSystem, dt: float) -> GpcField:
    """
    Explicit Euler step of all modes of the standard Galerkin system.

    The w-discretisation is the centred flux only: Chang-Cooper, entropic and exact
    weights depend on each realisation's density and steady state, which the
    coupled modes do not carry.
    """
    update = flux_divergence(system.flux(field.coefficients), field.grid)
    return GpcField(field.grid, field.basis, field.coefficients + dt * update)


def mm_gpc_step(g_field: GpcField, f_inf_field: GpcField, system: GalerkinSystem, dt: float) -> GpcField:
    """Explicit Euler step of the Micro-Macro perturbation modes ĝ around the projected steady state."""
    update = flux_divergence(system.micro_macro_flux(g_field.coefficients, f_inf_field.coefficients), g_field.grid)
    return GpcField(g_field.grid, g_field.basis, g_field.coefficients + dt * update)


def _series(grid: VelocityGrid, basis: GpcBasis, times, fields) -> UqSeries:
    return UqSeries(
        grid=grid,
        times=np.array(times),
        mean=np.array([field.mean for field in fields]),
        variance=np.array([field.variance for field in fields]),
        method="galerkin",
        count=basis.size,
    )


def _check_step(system: GalerkinSystem, dt: float) -> None:
    bound = system.explicit_bound()
    if dt > bound:
        logger.warning(f"Galerkin step {dt:.4e} exceeds diffusive bound {bound:.4e}")


def _schedule(dt: float, horizon: float) -> Tuple[int, float]:
    n_steps = 0 if horizon == 0 else max(1, int(np.ceil(horizon / dt - 1e-9)))
    return n_steps, (horizon / n_steps if n_steps else dt)


def run_gpc(model: ModelSpec, grid: VelocityGrid, basis: GpcBasis, dt: float, horizon: float,
            snapshot_every: int = 0) -> Tuple[UqSeries, GpcField]:
    """
    Standard stochastic Galerkin run from the projected datum.

    Args:
        model (ModelSpec): Model
        grid (VelocityGrid): Velocity mesh
        basis (GpcBasis): Chaos basis
        dt (float): Requested step; shortened to divide the horizon
        horizon (float): Final time
        snapshot_every (int): Keep every k-th step; 0 keeps the first and last only

    Returns:
        tuple: (mean/variance series, final field)
    """
    system = GalerkinSystem(model, grid, basis)
    field = project(lambda theta: model.initial_datum(grid, theta), basis, grid)
    n_steps, step = _schedule(dt, horizon)
    _check_step(system, step)
    times, fields = [0.0], [field]
    for index in range(1, n_steps + 1):
        field = gpc_step(field, system, step)
        if index == n_steps or (snapshot_every and index % snapshot_every == 0):
            times.append(index * step)
            fields.append(field)
    return _series(grid, basis, times, fields), field


def run_mm_gpc(model: ModelSpec, grid: VelocityGrid, basis: GpcBasis, dt: float, horizon: float,
               snapshot_every: int = 0, initial: Optional[GpcField] = None) -> Tuple[UqSeries, GpcField]:
    """
    Micro-Macro stochastic Galerkin run: ĝ = f̂ - f̂∞ evolves around the projection
    of the model's closed-form steady state.

    Args:
        model (ModelSpec): Model with a steady_state constructor
        grid (VelocityGrid): Velocity mesh
        basis (GpcBasis): Chaos basis
        dt (float): Requested step; shortened to divide the horizon
        horizon (float): Final time
        snapshot_every (int): Keep every k-th step; 0 keeps the first and last only
        initial (GpcField, optional): Starting ĝ, defaults to projected datum minus f̂∞

    Returns:
        tuple: (series of f̂∞ + ĝ statistics with the perturbation size trace, final ĝ)
    """
    if model.steady_state is None:
        raise ValueError(f"Model '{model.name}' has no steady-state constructor")
    system = GalerkinSystem(model, grid, basis)
    f_inf = project(lambda theta: model.steady_state(grid, theta), basis, grid)
    if initial is None:
        datum = project(lambda theta: model.initial_datum(grid, theta), basis, grid)
        initial = GpcField(grid, basis, datum.coefficients - f_inf.coefficients)
    g = initial
    n_steps, step = _schedule(dt, horizon)
    _check_step(system, step)

    times, fields, sizes = [0.0], [f_inf + g], [float(np.max(np.abs(g.coefficients)))]
    for index in range(1, n_steps + 1):
        g = mm_gpc_step(g, f_inf, system, step)
        if index == n_steps or (snapshot_every and index % snapshot_every == 0):
            times.append(index * step)
            fields.append(f_inf + g)
            sizes.append(float(np.max(np.abs(g.coefficients))))
    series = _series(grid, basis, times, fields)
    series.traces["perturbation_size"] = np.array(sizes)
    return series, g

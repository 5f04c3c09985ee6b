# kinetic/mesh.py
import dataclasses
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple, Union

import numpy as np

logger = logging.getLogger('kinetic_uq')

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class VelocityGrid:
    """
    Uniform cell-centred mesh of the structural variable w.

    Args:
        w_min (float): Left end of the domain
        w_max (float): Right end of the domain
        n_cells (int): Number of cells
    """

    w_min: float
    w_max: float
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError("n_cells must be ≥ 2")
        if not np.isfinite(self.w_min) or not np.isfinite(self.w_max) or self.w_max <= self.w_min:
            raise ValueError(f"Invalid domain [{self.w_min}, {self.w_max}]")

    @cached_property
    def dw(self) -> float:
        return (self.w_max - self.w_min) / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        return self.w_min + (np.arange(self.n_cells) + 0.5) * self.dw

    @cached_property
    def faces(self) -> np.ndarray:
        faces = self.w_min + np.arange(self.n_cells + 1) * self.dw
        faces[-1] = self.w_max
        return faces

    @property
    def length(self) -> float:
        return self.w_max - self.w_min

    def matches(self, other: "VelocityGrid") -> bool:
        return (self.n_cells == other.n_cells
                and np.isclose(self.w_min, other.w_min, rtol=0, atol=1e-14)
                and np.isclose(self.w_max, other.w_max, rtol=0, atol=1e-14))


@dataclass
class Density:
    """
    Cell averages f_i on a VelocityGrid.

    The values may carry leading batch axes (collocation nodes, samples or
    space cells); the last axis always runs over the velocity cells.

    Args:
        grid (VelocityGrid): Mesh the values live on
        values (array): Cell values, shape (..., n_cells)
        signed (bool): True for Micro-Macro perturbations, which may be negative
    """

    grid: VelocityGrid
    values: np.ndarray
    signed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 0 or self.values.shape[-1] != self.grid.n_cells:
            raise ValueError(f"Density has {self.values.shape[-1] if self.values.ndim else 0} values "
                             f"for a grid of {self.grid.n_cells} cells")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Density values must be finite")
        if not self.signed and np.any(self.values < 0):
            raise ValueError(f"Unsigned density has negative values (min {self.values.min():.3e})")

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.values.shape[:-1]

    def __getitem__(self, index) -> "Density":
        return Density(self.grid, self.values[index], self.signed)

    def evolved(self, values: np.ndarray) -> "Density":
        """
        Wrap updated values on the same grid.

        An unsigned density whose update produced negative cells is returned
        as signed, and the loss of positivity is logged.

        Args:
            values (array): New cell values

        Returns:
            Density: The updated density
        """
        values = np.asarray(values, dtype=float)
        signed = self.signed
        if not signed and np.any(values < 0):
            logger.warning(f"Positivity lost in update: min value {values.min():.3e}")
            signed = True
        return Density(self.grid, values, signed)


def mass(f: Density) -> ArrayLike:
    """Midpoint mass dw * sum f_i (one value per batch entry)."""
    total = f.grid.dw * np.sum(f.values, axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def moments(f: Density) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    Mass, mean and temperature (second central moment) of a density.

    Args:
        f (Density): Density, possibly batched

    Returns:
        tuple: (mass, mean, temperature)
    """
    grid = f.grid
    m0 = grid.dw * np.sum(f.values, axis=-1)
    if np.any(m0 <= 0):
        raise ValueError("degenerate density")
    u = grid.dw * np.sum(grid.centers * f.values, axis=-1) / m0
    du = grid.centers - np.asarray(u)[..., None]
    temperature = grid.dw * np.sum(du ** 2 * f.values, axis=-1) / m0
    if np.ndim(m0) == 0:
        return float(m0), float(u), float(temperature)
    return m0, u, temperature


def normalize(grid: VelocityGrid, values: np.ndarray, target: ArrayLike = 1.0) -> np.ndarray:
    """Scale values so that their midpoint mass equals target."""
    values = np.asarray(values, dtype=float)
    total = grid.dw * np.sum(values, axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("degenerate density")
    return values * (np.asarray(target, dtype=float)[..., None] if np.ndim(target) else target) / total


def maxwellian(w: np.ndarray, u: ArrayLike, temperature: ArrayLike) -> np.ndarray:
    """Gaussian with mean u and variance temperature, evaluated at w."""
    temperature = np.asarray(temperature, dtype=float)
    if np.any(temperature <= 0):
        raise ValueError("Maxwellian temperature must be positive")
    return np.exp(-(w - u) ** 2 / (2.0 * temperature)) / np.sqrt(2.0 * np.pi * temperature)


@dataclass(frozen=True)
class RandomInput:
    """
    Scalar random input θ with a seeded sampler and a Gauss quadrature rule.

    Every sample index k draws from its own substream derived from
    (seed, stream, k), so a sample does not depend on how many others were drawn
    or in which order.

    Args:
        a (float): Lower bound of the support
        b (float): Upper bound of the support
        seed (int): Master seed
        distribution (str): Distribution family, only 'uniform' is supported
        stream (tuple): Extra spawn key, used to separate repetitions
    """

    a: float = -1.0
    b: float = 1.0
    seed: int = 0
    distribution: str = "uniform"
    stream: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.distribution != "uniform":
            raise ValueError(f"Unsupported distribution '{self.distribution}'")
        if not self.b > self.a:
            raise ValueError(f"Invalid support [{self.a}, {self.b}]")
        if self.seed < 0:
            raise ValueError("Seed must be non-negative")

    def pdf(self, theta: ArrayLike) -> ArrayLike:
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.a) & (theta <= self.b)
        return np.where(inside, 1.0 / (self.b - self.a), 0.0)

    def generator(self, k: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.stream + (int(k),)))

    def sample(self, count: int, start: int = 0) -> np.ndarray:
        """
        Draw samples start, ..., start + count - 1.

        Args:
            count (int): Number of samples
            start (int): Index of the first sample

        Returns:
            array: Sampled θ values
        """
        return np.array([self.generator(k).uniform(self.a, self.b) for k in range(start, start + count)])

    def repetition(self, index: int) -> "RandomInput":
        """Independent copy of this input for repetition `index`."""
        return dataclasses.replace(self, stream=self.stream + (int(index),))

    def to_reference(self, theta: ArrayLike) -> ArrayLike:
        """Map θ in [a, b] to ξ in [-1, 1]."""
        return (2.0 * np.asarray(theta, dtype=float) - self.a - self.b) / (self.b - self.a)

    def from_reference(self, xi: ArrayLike) -> ArrayLike:
        return 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * np.asarray(xi, dtype=float)


def quadrature_nodes(random_input: RandomInput, M: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss nodes and probability weights for the distribution of θ.

    Args:
        random_input (RandomInput): The random input
        M (int): Number of nodes

    Returns:
        tuple: (nodes, weights), weights summing to one
    """
    if M < 1:
        raise ValueError("Number of quadrature nodes must be at least 1")
    if random_input.distribution != "uniform":
        raise ValueError(f"Unsupported distribution '{random_input.distribution}'")
    xi, weights = np.polynomial.legendre.leggauss(M)
    return random_input.from_reference(xi), weights / 2.0


def expectation(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum Σ_k ω_k values[k] over the first axis."""
    return np.tensordot(np.asarray(weights, dtype=float), np.asarray(values, dtype=float), axes=(0, 0))

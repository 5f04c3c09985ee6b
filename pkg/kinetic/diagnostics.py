# kinetic/diagnostics.py
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from kinetic.flux import DriftDiffusion, interaction_field, logarithmic_mean
from kinetic.mesh import ArrayLike, Density, VelocityGrid

logger = logging.getLogger('kinetic_uq')

DISSIPATION_FORMS = ("cc", "entropic")


@dataclass
class EntropyTrace:
    """
    Entropy-type functional recorded along a run.

    Args:
        times (array): Time of every entry
        values (array): H or E, shape (n_times, ...) with optional batch axes
        dissipation (array, optional): Matching dissipation values
    """

    times: np.ndarray
    values: np.ndarray
    dissipation: Optional[np.ndarray] = None

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def is_non_increasing(self, tolerance: float = 1e-12) -> bool:
        """True when no step raises the functional by more than tolerance."""
        if len(self.times) < 2:
            return True
        return bool(np.all(self.increments() <= tolerance))

    def expected(self, weights: np.ndarray) -> "EntropyTrace":
        """Quadrature-weighted average over the first batch axis."""
        values = np.tensordot(self.values, weights, axes=([1], [0]))
        dissipation = None
        if self.dissipation is not None:
            dissipation = np.tensordot(self.dissipation, weights, axes=([1], [0]))
        return EntropyTrace(self.times, values, dissipation)


def _shannon_terms(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    positive = values > 0
    safe_values = np.where(positive, values, 1.0)
    safe_reference = np.where(positive, reference, 1.0)
    return np.where(positive, values * np.log(safe_values / safe_reference), 0.0)


def relative_entropy(f: Density, f_ref: Density) -> ArrayLike:
    """
    Discrete relative entropy dw Σ f_i log(f_i / f_ref,i), with 0 log 0 = 0.

    Args:
        f (Density): Density, possibly batched
        f_ref (Density): Reference, positive wherever f is

    Returns:
        float or array: One value per batch entry
    """
    _check_grids(f.grid, f_ref.grid)
    values, reference = np.broadcast_arrays(f.values, f_ref.values)
    if np.any((values > 0) & (reference <= 0)):
        raise ValueError("relative entropy requires a positive reference where f > 0")
    total = f.grid.dw * np.sum(_shannon_terms(values, reference), axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def expected_relative_entropy(f: Density, f_ref: Density, weights: np.ndarray) -> float:
    """Quadrature-weighted average of per-node relative entropies (nodes on the first axis)."""
    return float(np.dot(np.asarray(weights, dtype=float), relative_entropy(f, f_ref)))


def discrete_dissipation(f: Density, f_ref: Density, dd: DriftDiffusion, form: str = "cc") -> ArrayLike:
    """
    Entropy dissipation of the Chang-Cooper scheme or of the entropic flux.

    With h = f / f_ref the CC form is (1/dw) Σ D Δ(log h) Δh f̄, where
    f̄ = f_ref,i f_ref,i+1 / L(f_ref,i, f_ref,i+1) is the face value that makes
    the exact-weight flux equal (D/dw) f̄ Δh. The entropic form is
    (1/dw) Σ D (Δ log h)² L(f_i, f_i+1), L the logarithmic mean. Both are ≥ 0.

    Args:
        f (Density): Strictly positive density
        f_ref (Density): Strictly positive reference (the steady state)
        dd (DriftDiffusion): Supplies D at the interior faces
        form (str): cc or entropic

    Returns:
        float or array: One value per batch entry
    """
    if form not in DISSIPATION_FORMS:
        raise ValueError(f"Unknown dissipation form '{form}'")
    _check_grids(f.grid, f_ref.grid)
    if np.any(f.values <= 0) or np.any(f_ref.values <= 0):
        raise ValueError("dissipation requires strictly positive densities")

    grid = f.grid
    values, reference = np.broadcast_arrays(f.values, f_ref.values)
    d_inner = np.asarray(dd.diffusion_at(grid.faces[1:-1]), dtype=float)
    log_ratio = np.log(values) - np.log(reference)
    log_jump = np.diff(log_ratio, axis=-1)

    if form == "cc":
        ratio = values / reference
        left, right = reference[..., :-1], reference[..., 1:]
        face_reference = left * right / logarithmic_mean(left, right)
        terms = d_inner * face_reference * log_jump * np.diff(ratio, axis=-1)
    else:
        terms = d_inner * log_jump ** 2 * logarithmic_mean(values[..., :-1], values[..., 1:])

    total = np.sum(terms, axis=-1) / grid.dw
    return float(total) if np.ndim(total) == 0 else total


def free_energy(f: Density, potential: Union[Callable[[np.ndarray], np.ndarray], np.ndarray],
                diffusion: float) -> ArrayLike:
    """
    Discrete free energy dw Σ_j [½ (U * f)_j f_j + D f_j log f_j] of a
    gradient-flow model with interaction potential U and constant diffusion D.
    """
    field = interaction_field(f, potential)
    values = f.values
    entropy = np.where(values > 0, values * np.log(np.where(values > 0, values, 1.0)), 0.0)
    total = f.grid.dw * np.sum(0.5 * field * values + diffusion * entropy, axis=-1)
    return float(total) if np.ndim(total) == 0 else total


def _check_grids(grid: VelocityGrid, other: VelocityGrid) -> None:
    if not grid.matches(other):
        raise ValueError(f"grid mismatch: {grid.n_cells} cells on [{grid.w_min}, {grid.w_max}] vs "
                         f"{other.n_cells} cells on [{other.w_min}, {other.w_max}]")


def error_norms(f: Density, reference: Union[Density, Callable[[np.ndarray], np.ndarray], np.ndarray],
                relative: bool = False) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    dw-weighted L1, L2 and max norms of f - reference.

    Args:
        f (Density): Approximation, possibly batched
        reference (Density, callable or array): Reference density, a function of w
            evaluated at the cell centres, or raw cell values
        relative (bool): Divide by the norms of the reference

    Returns:
        tuple: (L1, L2, Linf), floats or one value per batch entry
    """
    grid = f.grid
    if isinstance(reference, Density):
        _check_grids(grid, reference.grid)
        reference = reference.values
    elif callable(reference):
        reference = reference(grid.centers)
    reference = np.asarray(reference, dtype=float)
    if reference.shape[-1] != grid.n_cells:
        raise ValueError(f"grid mismatch: reference has {reference.shape[-1]} cells, density {grid.n_cells}")

    def norms(values: np.ndarray):
        return (grid.dw * np.sum(np.abs(values), axis=-1),
                np.sqrt(grid.dw * np.sum(values ** 2, axis=-1)),
                np.max(np.abs(values), axis=-1))

    result = norms(f.values - reference)
    if relative:
        result = tuple(e / r for e, r in zip(result, norms(reference)))
    return tuple(float(e) if np.ndim(e) == 0 else e for e in result)


def entropy_decay_rate(times: np.ndarray, values: np.ndarray, floor: float = 1e-13) -> ArrayLike:
    """
    Least-squares exponential rate r with H(t) ≈ C e^{-r t}, fitted to the
    entries above floor. Columns beyond the first axis are fitted separately.

    Args:
        times (array): Times, shape (n,)
        values (array): Entropy values, shape (n, ...)
        floor (float): Entries at or below this are roundoff and ignored

    Returns:
        float or array: Decay rate per column
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    columns = values.reshape(values.shape[0], -1)
    rates = np.empty(columns.shape[1])
    for j in range(columns.shape[1]):
        keep = columns[:, j] > floor
        if np.count_nonzero(keep) < 2:
            rates[j] = np.inf
            continue
        slope, _ = np.polyfit(times[keep], np.log(columns[keep, j]), 1)
        rates[j] = -slope
    rates = rates.reshape(values.shape[1:])
    return float(rates) if rates.ndim == 0 else rates

# kinetic/flux.py
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np

from kinetic.mesh import Density, VelocityGrid

logger = logging.getLogger('kinetic_uq')

# |λ| below this uses the series 1/2 - λ/12 + λ³/720. The direct 1/λ + 1/(1 - e^λ) loses
# about |log10 λ| digits to cancellation there, while the series truncation stays below λ⁵/30240.
_SERIES_CUTOFF = 1e-5

_OPEN_NEWTON_COTES = {
    "midpoint": ([1 / 2], [1.0]),
    "open_nc2": ([1 / 3, 2 / 3], [1 / 2, 1 / 2]),
    "open_nc4": ([1 / 4, 1 / 2, 3 / 4], [2 / 3, -1 / 3, 2 / 3]),
    "open_nc6": ([1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6], [11 / 20, -14 / 20, 26 / 20, -14 / 20, 11 / 20]),
}

DEFAULT_GAUSS_POINTS = 20


@dataclass(frozen=True)
class DriftDiffusion:
    """
    Drift functional and diffusion of a 1-D Fokker-Planck operator
    ∂_t f = ∂_w[B[f] f + ∂_w(D f)].

    drift_at(points, values) returns B[f] at the given points for cell values of
    shape (..., n_cells); the diffusion callables take points only. Results
    broadcast over the leading batch axes of the values.
    """

    drift_at: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion_at: Callable[[np.ndarray], np.ndarray]
    diffusion_prime_at: Callable[[np.ndarray], np.ndarray]
    density_dependent: bool = True


@dataclass(frozen=True)
class FluxWeights:
    """
    Per-face weights of a Chang-Cooper type flux, shape (..., n_cells + 1).

    Boundary faces carry zero drift and δ = 1/2; the flux there is set by the
    boundary rule.
    """

    c_tilde: np.ndarray
    lam: np.ndarray
    delta: np.ndarray

    @property
    def n_faces(self) -> int:
        return self.c_tilde.shape[-1]


@lru_cache(maxsize=None)
def quadrature_rule(rule: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reference nodes in (0, 1) and weights (summing to 1) of a face quadrature rule.

    Args:
        rule (str): midpoint, open_nc2, open_nc4, open_nc6, gauss or gauss(n)

    Returns:
        tuple: (nodes, weights)
    """
    name = rule.strip().lower()
    if name in _OPEN_NEWTON_COTES:
        nodes, weights = _OPEN_NEWTON_COTES[name]
        return np.array(nodes), np.array(weights)
    if name.startswith("gauss"):
        count = name[len("gauss"):].strip("()_ ")
        n = int(count) if count else DEFAULT_GAUSS_POINTS
        if n < 1:
            raise ValueError(f"Invalid Gauss rule '{rule}'")
        xi, weights = np.polynomial.legendre.leggauss(n)
        return (xi + 1.0) / 2.0, weights / 2.0
    raise ValueError(f"Unknown quadrature rule '{rule}'")


def delta_from_lambda(lam: np.ndarray) -> np.ndarray:
    """δ = 1/λ + 1/(1 - e^λ), with the removable singularity at λ = 0 taken as 1/2."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, lam)
    with np.errstate(over='ignore'):
        direct = 1.0 / safe - 1.0 / np.expm1(safe)
    series = 0.5 - lam / 12.0 + lam ** 3 / 720.0
    return np.where(small, series, direct)


def _pad_faces(inner: np.ndarray, fill: float) -> np.ndarray:
    pad = [(0, 0)] * (inner.ndim - 1) + [(1, 1)]
    return np.pad(inner, pad, constant_values=fill)


def _interior_diffusion(grid: VelocityGrid, dd: DriftDiffusion) -> np.ndarray:
    return np.asarray(dd.diffusion_at(grid.faces[1:-1]), dtype=float)


def _weights(grid: VelocityGrid, lam_inner: np.ndarray, d_inner: np.ndarray) -> FluxWeights:
    c_inner = d_inner * lam_inner / grid.dw
    lam_inner, c_inner = np.broadcast_arrays(lam_inner, c_inner)
    return FluxWeights(
        c_tilde=_pad_faces(c_inner, 0.0),
        lam=_pad_faces(lam_inner, 0.0),
        delta=_pad_faces(delta_from_lambda(lam_inner), 0.5),
    )


def cc_weights(f: Density, dd: DriftDiffusion, rule: str = "midpoint") -> FluxWeights:
    """
    Chang-Cooper weights from the quasi steady-state integral
    λ = ∫ (B[f] + D') / D dw over each interior cell-to-cell interval.

    Args:
        f (Density): Current density (drives nonlocal drifts)
        dd (DriftDiffusion): Drift and diffusion
        rule (str): Quadrature rule for λ

    Returns:
        FluxWeights: The weights
    """
    grid = f.grid
    nodes, weights = quadrature_rule(rule)
    points = (grid.centers[:-1, None] + nodes[None, :] * grid.dw).ravel()

    drift = np.asarray(dd.drift_at(points, f.values), dtype=float)
    diffusion = np.asarray(dd.diffusion_at(points), dtype=float)
    d_inner = _interior_diffusion(grid, dd)
    if np.any(diffusion <= 0) or np.any(d_inner <= 0):
        raise ValueError("singular diffusion")
    integrand = (drift + np.asarray(dd.diffusion_prime_at(points), dtype=float)) / diffusion
    integrand = integrand.reshape(integrand.shape[:-1] + (grid.n_cells - 1, nodes.size))
    lam_inner = grid.dw * (integrand @ weights)
    return _weights(grid, lam_inner, d_inner)


def exact_weights(f_inf: Density, dd: DriftDiffusion) -> FluxWeights:
    """
    Weights that make the flux vanish exactly on the steady state f_inf:
    λ = log(f_i / f_{i+1}). The diffusion only scales C̃ = D λ / dw.

    Args:
        f_inf (Density): Strictly positive steady state
        dd (DriftDiffusion): Diffusion used to scale C̃

    Returns:
        FluxWeights: The weights
    """
    if np.any(f_inf.values <= 0):
        raise ValueError("exact weights require a strictly positive steady state")
    logs = np.log(f_inf.values)
    lam_inner = logs[..., :-1] - logs[..., 1:]
    return _weights(f_inf.grid, lam_inner, _interior_diffusion(f_inf.grid, dd))


def _check_faces(f: Density, faces: np.ndarray) -> None:
    if faces.shape[-1] != f.grid.n_cells + 1:
        raise ValueError(f"Face array has {faces.shape[-1]} entries for {f.grid.n_cells} cells")


def cc_flux(f: Density, weights: FluxWeights, dd: DriftDiffusion) -> np.ndarray:
    """
    Chang-Cooper flux F = C̃ [(1 - δ) f_{i+1} + δ f_i] + D (f_{i+1} - f_i) / dw
    on every face; boundary faces are no-flux.
    """
    _check_faces(f, weights.c_tilde)
    grid = f.grid
    left, right = f.values[..., :-1], f.values[..., 1:]
    c = weights.c_tilde[..., 1:-1]
    delta = weights.delta[..., 1:-1]
    inner = c * ((1.0 - delta) * right + delta * left) + _interior_diffusion(grid, dd) * (right - left) / grid.dw
    return _pad_faces(inner, 0.0)


def central_flux(f: Density, weights: FluxWeights, dd: DriftDiffusion) -> np.ndarray:
    """Second-order centred flux: the Chang-Cooper flux with δ = 1/2 on every face."""
    centred = FluxWeights(weights.c_tilde, weights.lam, np.full_like(weights.delta, 0.5))
    return cc_flux(f, centred, dd)


def logarithmic_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Logarithmic mean (b - a) / (log b - log a) of positive values, equal to b
    when a == b.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    x = (b - a) / a
    near = np.abs(x) < 1e-6
    with np.errstate(divide='ignore', invalid='ignore'):
        direct = (b - a) / np.log1p(x)
    series = a * (1.0 + x / 2.0 - x ** 2 / 12.0 + x ** 3 / 24.0)
    return np.where(a == b, b, np.where(near, series, direct))


def entropic_delta(f_left: np.ndarray, f_right: np.ndarray) -> np.ndarray:
    """Weight δ^E with δ^E f_i + (1 - δ^E) f_{i+1} equal to the logarithmic mean."""
    return delta_from_lambda(np.log(f_left) - np.log(f_right))


def entropic_flux(f: Density, c_tilde: Union[np.ndarray, FluxWeights], dd: DriftDiffusion) -> np.ndarray:
    """
    Entropic-average flux F^E = (C̃ + D (log f_{i+1} - log f_i) / dw) f̃^E,
    f̃^E the logarithmic mean of the two neighbouring cells.

    Args:
        f (Density): Strictly positive density
        c_tilde (array or FluxWeights): C̃ on the faces
        dd (DriftDiffusion): Drift and diffusion

    Returns:
        array: Flux on every face, zero on the boundary
    """
    if isinstance(c_tilde, FluxWeights):
        c_tilde = c_tilde.c_tilde
    c_tilde = np.asarray(c_tilde, dtype=float)
    _check_faces(f, c_tilde)
    if np.any(f.values <= 0):
        raise ValueError("entropic flux requires positivity")

    grid = f.grid
    d_inner = _interior_diffusion(grid, dd)
    c = c_tilde[..., 1:-1]
    if grid.dw * np.max(np.abs(c)) > 2.0 * np.min(d_inner):
        logger.warning(f"Entropic flux mesh guard violated: dw*max|C| = {grid.dw * np.max(np.abs(c)):.3e} "
                       f"> 2*min D = {2.0 * np.min(d_inner):.3e}")

    left, right = f.values[..., :-1], f.values[..., 1:]
    log_jump = np.log(right) - np.log(left)
    inner = (c + d_inner * log_jump / grid.dw) * logarithmic_mean(left, right)
    return _pad_faces(inner, 0.0)


def potential_c_tilde(f: Density, potential: Union[Callable[[np.ndarray], np.ndarray], np.ndarray]) -> np.ndarray:
    """
    C̃ for a gradient-flow drift B = ∂_w(U * f): the face difference of the
    discrete convolution (U * f)_i = dw Σ_j U(w_i - w_j) f_j, divided by dw.

    Args:
        f (Density): Current density
        potential (callable or array): U as a function of the offset, or its
            samples U_{k} for k = -(N-1), ..., N-1

    Returns:
        array: C̃ on every face, zero on the boundary
    """
    convolution = interaction_field(f, potential)
    inner = (convolution[..., 1:] - convolution[..., :-1]) / f.grid.dw
    return _pad_faces(inner, 0.0)


def interaction_field(f: Density, potential: Union[Callable[[np.ndarray], np.ndarray], np.ndarray]) -> np.ndarray:
    """Discrete convolution (U * f)_i = dw Σ_j U_{i-j} f_j at the cell centres."""
    grid = f.grid
    n = grid.n_cells
    offsets = np.subtract.outer(np.arange(n), np.arange(n))
    if callable(potential):
        kernel = np.asarray(potential(offsets * grid.dw), dtype=float)
    else:
        samples = np.asarray(potential, dtype=float)
        if samples.shape[-1] != 2 * n - 1:
            raise ValueError(f"Potential needs {2 * n - 1} samples, got {samples.shape[-1]}")
        kernel = samples[offsets + n - 1]
    return grid.dw * f.values @ kernel.T


def micro_macro_flux(g: Density, f_inf: Density, weights: FluxWeights, dd: DriftDiffusion,
                     dd_full: Optional[DriftDiffusion] = None) -> np.ndarray:
    """
    Flux of the perturbation g = f - f_inf:
    F = F_cc[g] (weights exact for f_inf) + (B[f_inf + g] - B[f_inf]) (f_inf + g)_face.

    The first term is the linearised operator around f_inf; the second carries the
    drift change caused by g and vanishes with it, so g = 0 is a fixed point.

    Args:
        g (Density): Signed perturbation
        f_inf (Density): Steady state the weights were built from
        weights (FluxWeights): exact_weights(f_inf, dd)
        dd (DriftDiffusion): Drift and diffusion at the steady state
        dd_full (DriftDiffusion, optional): Drift of the full density when it is not
            a functional of the cell values alone (e.g. a prescribed local mean velocity)

    Returns:
        array: Flux on every face, zero on the boundary
    """
    return cc_flux(g, weights, dd) + drift_correction_flux(g, f_inf, dd, dd_full)


def drift_correction_flux(g: Density, f_inf: Density, dd: DriftDiffusion,
                          dd_full: Optional[DriftDiffusion] = None) -> np.ndarray:
    """(B[f_inf + g] - B[f_inf]) times the centred face value of f_inf + g."""
    grid = g.grid
    points = grid.faces[1:-1]
    full = f_inf.values + g.values
    drift_full = np.asarray((dd_full or dd).drift_at(points, full), dtype=float)
    change = drift_full - np.asarray(dd.drift_at(points, f_inf.values), dtype=float)
    inner = change * 0.5 * (full[..., :-1] + full[..., 1:])
    return _pad_faces(np.broadcast_to(inner, np.broadcast_shapes(inner.shape, full[..., 1:].shape)), 0.0)

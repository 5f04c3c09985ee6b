# uq/sampling.py
import logging
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from kinetic.flux import DriftDiffusion, FluxWeights, drift_correction_flux, exact_weights, micro_macro_flux
from kinetic.mesh import Density, RandomInput, VelocityGrid, quadrature_nodes
from kinetic.models import ModelSpec
from kinetic.solver import DeterministicSolver, PhaseSpaceSolver, SolverConfig
from kinetic.stepping import step_explicit, step_semi_implicit, step_ssp
from kinetic.transport import SpaceGrid, strang_split_step
from utils.errors import SolverError

logger = logging.getLogger('kinetic_uq')
failures_logger = logging.getLogger('solver_failures')

UQ_METHODS = ("collocation", "mc", "m3c", "fm3c", "galerkin")

# variance entries down to this are roundoff and clipped to zero
VARIANCE_ROUNDOFF = 1e-12


@dataclass
class UqEstimate:
    """
    Mean and pointwise variance of the solution at one time.

    Args:
        mean (Density): Expected density
        variance (Density): Pointwise variance, nonnegative
        method (str): collocation, mc, m3c, fm3c or galerkin
        n_nodes_or_samples (int): Nodes, samples or gPC modes used
        seed (int, optional): Master seed of sampled methods
        time (float): Time of the estimate
    """

    mean: Density
    variance: Density
    method: str
    n_nodes_or_samples: int
    seed: Optional[int] = None
    time: float = 0.0

    def __post_init__(self):
        if self.method not in UQ_METHODS:
            raise ValueError(f"Unknown uq method '{self.method}'")


def clip_variance(values: np.ndarray) -> np.ndarray:
    """Zero the roundoff negatives of a variance; larger negatives are an error."""
    values = np.asarray(values, dtype=float)
    if values.size and values.min() < -VARIANCE_ROUNDOFF:
        raise ValueError(f"Variance has negative entries beyond roundoff (min {values.min():.3e})")
    return np.maximum(values, 0.0)


@dataclass
class UqSeries:
    """
    Mean and variance at every snapshot time of a UQ run.

    Args:
        grid (VelocityGrid): Velocity mesh of the state
        times (array): Snapshot times
        mean (array): Mean per time, shape (n_t, ...state)
        variance (array): Variance per time, same shape
        method (str): Method id
        count (int): Nodes, samples (at t = 0) or modes
        seed (int, optional): Master seed
        traces (dict): Per-step scalar traces (perturbation variance, active samples)
        wall_times (dict): Seconds spent per phase of the run
    """

    grid: VelocityGrid
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    method: str
    count: int
    seed: Optional[int] = None
    traces: Dict[str, np.ndarray] = field(default_factory=dict)
    wall_times: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.variance = clip_variance(self.variance)

    def __len__(self) -> int:
        return len(self.times)

    def estimate(self, index: int) -> UqEstimate:
        mean = self.mean[index]
        return UqEstimate(
            mean=Density(self.grid, mean, signed=bool(np.any(mean < 0))),
            variance=Density(self.grid, self.variance[index]),
            method=self.method,
            n_nodes_or_samples=self.count,
            seed=self.seed,
            time=float(self.times[index]),
        )

    @property
    def final(self) -> UqEstimate:
        return self.estimate(len(self.times) - 1)


# ---------------------------------------------------------------------------
# Deterministic reductions
# ---------------------------------------------------------------------------

def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sum over the first axis by a fixed binary tree, independent of how the rows were produced."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        raise ValueError("Cannot reduce an empty ensemble")
    while values.shape[0] > 1:
        half = values.shape[0] // 2
        paired = values[:half] + values[half:2 * half]
        values = np.concatenate([paired, values[2 * half:]]) if values.shape[0] % 2 else paired
    return values[0]


def sample_statistics(values: np.ndarray, weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and pointwise variance over the first axis.

    With quadrature weights the variance is Σ ω_k (f_k - mean)²; without them
    the unbiased sample variance (zero for a single sample).

    Args:
        values (array): Ensemble, shape (M, ...)
        weights (array, optional): Quadrature weights summing to one

    Returns:
        tuple: (mean, variance)
    """
    values = np.asarray(values, dtype=float)
    count = values.shape[0]
    if weights is not None:
        shaped = np.asarray(weights, dtype=float).reshape((count,) + (1,) * (values.ndim - 1))
        mean = pairwise_sum(shaped * values)
        return mean, clip_variance(pairwise_sum(shaped * (values - mean) ** 2))
    mean = pairwise_sum(values) / count
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, clip_variance(pairwise_sum((values - mean) ** 2) / (count - 1))


def ensemble_variance(values: np.ndarray, cell_volume: float) -> float:
    """Scalar spread (1/M) Σ_k ||g_k - mean||² in the grid L2 norm."""
    values = np.asarray(values, dtype=float)
    count = values.shape[0]
    deviation = values - pairwise_sum(values) / count
    per_sample = cell_volume * np.sum(deviation.reshape(count, -1) ** 2, axis=-1)
    return float(pairwise_sum(per_sample) / count)


def run_chunks(task: Callable[[int, int], Any], count: int, executor: Optional[Executor] = None,
               chunk_size: Optional[int] = None, label: str = "node") -> List[Any]:
    """
    Run task(start, stop) over consecutive index ranges, returning the results in
    index order. Failures are re-raised as SolverError naming the range.

    Args:
        task (callable): Work on the half-open index range [start, stop)
        count (int): Number of indices
        executor (Executor, optional): Pool to run the chunks on
        chunk_size (int, optional): Indices per chunk; all at once by default
        label (str): Name of an index in failure messages

    Returns:
        list: One result per chunk
    """
    size = max(1, chunk_size or count)
    bounds = [(start, min(start + size, count)) for start in range(0, count, size)]

    def guarded(bound: Tuple[int, int]) -> Any:
        start, stop = bound
        try:
            return task(start, stop)
        except (SolverError, ValueError, FloatingPointError, np.linalg.LinAlgError) as err:
            message = f"{label}s {start}..{stop - 1} failed: {err}"
            failures_logger.error(message)
            raise SolverError(message, trace=getattr(err, "trace", None)) from err

    if executor is None:
        return [guarded(bound) for bound in bounds]
    return list(executor.map(guarded, bounds))


# ---------------------------------------------------------------------------
# Micro-Macro evolution
# ---------------------------------------------------------------------------

def evolve_micro_macro(g: Density, f_inf: Density, dd: DriftDiffusion, dt: float, mode: str = "explicit_euler",
                       weights: Optional[FluxWeights] = None) -> Density:
    """
    One step of the perturbation equation ∂_t g = ∂_w[B[f_inf] g + B[g](f_inf + g) + ∂_w(D g)]
    around the steady state f_inf, with the weights exact for f_inf.

    Args:
        g (Density): Signed perturbation f - f_inf
        f_inf (Density): Steady state of the same parameters
        dd (DriftDiffusion): Drift and diffusion of the model
        dt (float): Time step
        mode (str): explicit_euler, ssp_rk2, ssp_rk3 or semi_implicit
        weights (FluxWeights, optional): Precomputed exact_weights(f_inf, dd)

    Returns:
        Density: Perturbation after one step
    """
    weights = weights if weights is not None else exact_weights(f_inf, dd)
    if mode == "semi_implicit":
        return step_semi_implicit(g, weights, dd, dt, source=drift_correction_flux(g, f_inf, dd))
    if mode == "explicit_euler":
        return step_explicit(g, micro_macro_flux(g, f_inf, weights, dd), dt)
    if mode in ("ssp_rk2", "ssp_rk3"):
        return step_ssp(g, lambda state: micro_macro_flux(state, f_inf, weights, dd), dt,
                        2 if mode == "ssp_rk2" else 3)
    raise ValueError(f"Unknown stepping mode '{mode}'")


# ---------------------------------------------------------------------------
# Sweep backends: one per state space
# ---------------------------------------------------------------------------

class VelocitySweep:
    """Batched solves of a space-homogeneous model; states have shape (n_cells,)."""

    def __init__(self, model: ModelSpec, grid: VelocityGrid, config: SolverConfig):
        self.model = model
        self.grid = grid
        self.config = config
        self.solver = DeterministicSolver(model, grid, config)

    @property
    def cell_volume(self) -> float:
        return self.grid.dw

    def datum(self, thetas: np.ndarray) -> np.ndarray:
        return self.model.initial_datum(self.grid, thetas).values

    def equilibrium(self, thetas: np.ndarray) -> np.ndarray:
        """Per-sample steady states built from the moments of each sample's datum."""
        if self.model.equilibrium is None:
            raise ValueError(f"Model '{self.model.name}' has no steady-state constructor")
        return self.model.equilibrium(self.model.initial_datum(self.grid, thetas), thetas).values

    def solve(self, thetas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        run = self.solver.run(thetas)
        return run.times, run.snapshots

    def perturbation_stepper(self, thetas: np.ndarray, f_inf: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        dd = self.model.drift_diffusion(self.grid, thetas)
        steady = Density(self.grid, f_inf)
        weights = exact_weights(steady, dd)
        dt, mode = self.solver.control.dt, self.config.mode

        def advance(g: np.ndarray) -> np.ndarray:
            return evolve_micro_macro(Density(self.grid, g, signed=True), steady, dd, dt, mode, weights).values

        return advance


class PhaseSweep:
    """Batched Vlasov-Fokker-Planck solves; states have shape (n_x, n_v)."""

    def __init__(self, model: ModelSpec, grid: VelocityGrid, space: SpaceGrid, config: SolverConfig,
                 datum: np.ndarray, courant: Optional[float] = 1.0 / 6.0):
        self.model = model
        self.grid = grid
        self.space = space
        self.config = config
        self.initial = np.asarray(datum, dtype=float)
        self.solver = PhaseSpaceSolver(model, grid, space, config, courant)

    @property
    def cell_volume(self) -> float:
        return self.space.dx * self.grid.dw

    def datum(self, thetas: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.initial, np.shape(thetas) + self.initial.shape).copy()

    def equilibrium(self, thetas: np.ndarray) -> np.ndarray:
        return self.solver.homogeneous_equilibrium(thetas, self.initial)

    def solve(self, thetas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        run = self.solver.run(thetas, self.initial)
        if run.info["min_value"] < 0:
            failures_logger.warning(f"Phase-space run went negative (min {run.info['min_value']:.3e})")
        return run.times, run.snapshots

    def perturbation_stepper(self, thetas: np.ndarray, f_inf: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        stepper = self.solver.micro_macro_stepper(thetas, f_inf)
        dt = self.solver.control.dt

        def advance(g: np.ndarray) -> np.ndarray:
            return strang_split_step(g, stepper, dt, self.space, self.grid, self.solver.courant)

        return advance


def _evolve_perturbations(backend, thetas: np.ndarray, f_inf: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Micro-Macro runs from g0 = datum - f_inf; returns (times, g snapshots (n_t, M, ...))."""
    config = backend.config
    g = backend.datum(thetas) - f_inf
    advance = backend.perturbation_stepper(thetas, f_inf)
    dt = config.step
    times, snapshots = [0.0], [g.copy()]
    for index in range(1, config.n_steps + 1):
        g = advance(g)
        if config.keeps(index):
            times.append(index * dt)
            snapshots.append(g.copy())
    return np.array(times), np.array(snapshots)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _sweep_snapshots(backend, thetas: np.ndarray, executor: Optional[Executor], chunk_size: Optional[int],
                     label: str) -> Tuple[np.ndarray, np.ndarray]:
    results = run_chunks(lambda a, b: backend.solve(thetas[a:b]), len(thetas), executor, chunk_size, label)
    return results[0][0], np.concatenate([snapshots for _, snapshots in results], axis=1)


def _series_from_snapshots(backend, times: np.ndarray, snapshots: np.ndarray, method: str, count: int,
                           weights: Optional[np.ndarray] = None, seed: Optional[int] = None) -> UqSeries:
    stats = [sample_statistics(snapshots[t], weights) for t in range(len(times))]
    return UqSeries(
        grid=backend.grid,
        times=times,
        mean=np.array([mean for mean, _ in stats]),
        variance=np.array([variance for _, variance in stats]),
        method=method,
        count=count,
        seed=seed,
    )


def collocate(backend, random_input: RandomInput, M: int, executor: Optional[Executor] = None,
              chunk_size: Optional[int] = None) -> UqSeries:
    """
    Stochastic collocation: the deterministic solver at the M Gauss nodes of θ,
    mean and variance by the quadrature weights.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_input (RandomInput): Distribution of θ
        M (int): Number of nodes
        executor (Executor, optional): Pool for the node chunks
        chunk_size (int, optional): Nodes per batched solve

    Returns:
        UqSeries: Mean and variance at every snapshot time
    """
    if M < 1:
        raise ValueError("Collocation needs at least one node")
    nodes, weights = quadrature_nodes(random_input, M)
    started = time.perf_counter()
    times, snapshots = _sweep_snapshots(backend, nodes, executor, chunk_size, "collocation node")
    series = _series_from_snapshots(backend, times, snapshots, "collocation", M, weights)
    series.wall_times["solve"] = time.perf_counter() - started
    return series


def mc_ensemble(backend, random_inputs: List[RandomInput], M: int, executor: Optional[Executor] = None,
                chunk_size: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve M samples for each of several independent inputs in one batched sweep.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_inputs (list): One RandomInput per repetition
        M (int): Samples per repetition
        executor (Executor, optional): Pool for the sample chunks
        chunk_size (int, optional): Samples per batched solve

    Returns:
        tuple: (times, snapshots of shape (n_t, repetitions, M, ...state))
    """
    thetas = np.concatenate([random_input.sample(M) for random_input in random_inputs])
    times, snapshots = _sweep_snapshots(backend, thetas, executor, chunk_size, "sample")
    return times, snapshots.reshape((len(times), len(random_inputs), M) + snapshots.shape[2:])


def mc_estimate(backend, random_input: RandomInput, M: int, executor: Optional[Executor] = None,
                chunk_size: Optional[int] = None) -> UqSeries:
    """
    Plain Monte Carlo: M i.i.d. samples of θ from the input's seeded substreams,
    sample mean and unbiased sample variance.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_input (RandomInput): Distribution and seed of θ
        M (int): Number of samples, at least 2
        executor (Executor, optional): Pool for the sample chunks
        chunk_size (int, optional): Samples per batched solve

    Returns:
        UqSeries: Mean and variance at every snapshot time
    """
    if M < 2:
        raise ValueError("Monte Carlo needs at least two samples for a variance")
    started = time.perf_counter()
    times, snapshots = mc_ensemble(backend, [random_input], M, executor, chunk_size)
    series = _series_from_snapshots(backend, times, snapshots[:, 0], "mc", M, seed=random_input.seed)
    series.wall_times["solve"] = time.perf_counter() - started
    return series


@dataclass
class SampleEnsemble:
    """
    Micro-Macro sample set: θ values, per-sample steady states and perturbations.

    Args:
        thetas (array): Sampled θ of every sample ever active
        f_inf (array): Steady state of every sample
        g (array): Current perturbation of every sample
        active (array): Indices of the active samples; only ever shrinks
    """

    thetas: np.ndarray
    f_inf: np.ndarray
    g: np.ndarray
    active: np.ndarray

    @property
    def active_count(self) -> int:
        return int(self.active.size)

    def discard(self, keep: int) -> None:
        """Keep `keep` evenly spaced samples of the active list."""
        if keep > self.active_count:
            raise ValueError("Discarded samples cannot be re-activated")
        if keep == self.active_count:
            return
        picks = np.floor(np.linspace(0, self.active_count - 1, keep) + 0.5).astype(int)
        self.active = self.active[picks]


def equilibrium_expectation(backend, random_input: RandomInput, M_E: int, executor: Optional[Executor] = None,
                            chunk_size: Optional[int] = None,
                            quadrature: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    E[f_inf] from a bank of M_E sampled steady states or, when quadrature is
    given, from that many Gauss nodes of θ.

    Returns:
        tuple: (expected steady state, θ values used, their weights)
    """
    if quadrature is not None:
        nodes, weights = quadrature_nodes(random_input, quadrature)
        states = np.concatenate(run_chunks(lambda a, b: backend.equilibrium(nodes[a:b]), len(nodes), executor,
                                           chunk_size, "equilibrium node"))
        shaped = weights.reshape((len(nodes),) + (1,) * (states.ndim - 1))
        return pairwise_sum(shaped * states), nodes, weights
    thetas = random_input.sample(M_E)
    partial = run_chunks(lambda a, b: (pairwise_sum(backend.equilibrium(thetas[a:b])), b - a), M_E, executor,
                         chunk_size, "equilibrium sample")
    total = pairwise_sum(np.array([chunk_sum for chunk_sum, _ in partial]))
    return total / M_E, thetas, np.full(M_E, 1.0 / M_E)


@dataclass
class MicroMacroEnsemble:
    """
    Evolved perturbations of one or more repetitions of Micro-Macro Monte Carlo.

    Args:
        times (array): Snapshot times
        g (array): Perturbations, shape (n_t, repetitions, M, ...state)
        f_inf (array): Steady states of the evolved samples, shape (repetitions, M, ...state)
        expected_inf (array): Bank estimate of E[f_inf] per repetition
        wall_times (dict): Seconds spent on the bank and on the perturbation solves
    """

    times: np.ndarray
    g: np.ndarray
    f_inf: np.ndarray
    expected_inf: np.ndarray
    wall_times: Dict[str, float] = field(default_factory=dict)

    def series(self, backend, repetition: int = 0, count: Optional[int] = None,
               seed: Optional[int] = None) -> UqSeries:
        """Estimate from the first `count` perturbations of one repetition."""
        count = count or self.g.shape[2]
        g = self.g[:, repetition, :count]
        f_inf = self.f_inf[repetition, :count]
        means, variances, g_variance = [], [], []
        for index in range(len(self.times)):
            g_mean, _ = sample_statistics(g[index])
            _, variance = sample_statistics(f_inf + g[index])
            means.append(self.expected_inf[repetition] + g_mean)
            variances.append(variance)
            g_variance.append(ensemble_variance(g[index], backend.cell_volume))
        return UqSeries(
            grid=backend.grid,
            times=self.times,
            mean=np.array(means),
            variance=np.array(variances),
            method="m3c",
            count=count,
            seed=seed,
            traces={"perturbation_variance": np.array(g_variance)},
            wall_times=dict(self.wall_times),
        )


def m3c_ensemble(backend, random_inputs: List[RandomInput], M_E: int, M: int, executor: Optional[Executor] = None,
                 chunk_size: Optional[int] = None, quadrature: Optional[int] = None) -> MicroMacroEnsemble:
    """
    Steady-state banks and evolved perturbations for several repetitions, the
    perturbations of all repetitions advanced in one batched sweep.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_inputs (list): One RandomInput per repetition
        M_E (int): Size of each steady-state bank
        M (int): Evolved perturbations per repetition; the first M bank samples
        executor (Executor, optional): Pool for the chunks
        chunk_size (int, optional): Samples per batched solve
        quadrature (int, optional): Gauss nodes for E[f_inf] instead of the bank

    Returns:
        MicroMacroEnsemble: Perturbation snapshots and bank means
    """
    if M < 2:
        raise ValueError("Micro-Macro Monte Carlo needs at least two samples")
    if M > M_E:
        raise ValueError(f"M = {M} exceeds the equilibrium bank size M_E = {M_E}")

    started = time.perf_counter()
    expected_inf = np.array([
        equilibrium_expectation(backend, random_input, M_E, executor, chunk_size, quadrature)[0]
        for random_input in random_inputs
    ])
    bank_time = time.perf_counter() - started

    thetas = np.concatenate([random_input.sample(M) for random_input in random_inputs])

    def evolve(a: int, b: int):
        f_inf = backend.equilibrium(thetas[a:b])
        times, g = _evolve_perturbations(backend, thetas[a:b], f_inf)
        return times, g, f_inf

    started = time.perf_counter()
    results = run_chunks(evolve, len(thetas), executor, chunk_size, "sample")
    times = results[0][0]
    g = np.concatenate([chunk for _, chunk, _ in results], axis=1)
    f_inf = np.concatenate([chunk for _, _, chunk in results], axis=0)
    repetitions = len(random_inputs)
    return MicroMacroEnsemble(
        times=times,
        g=g.reshape((len(times), repetitions, M) + g.shape[2:]),
        f_inf=f_inf.reshape((repetitions, M) + f_inf.shape[1:]),
        expected_inf=expected_inf,
        wall_times={"equilibrium_bank": bank_time, "solve": time.perf_counter() - started},
    )


def m3c_estimate(backend, random_input: RandomInput, M_E: int, M: int, executor: Optional[Executor] = None,
                 chunk_size: Optional[int] = None, quadrature: Optional[int] = None) -> UqSeries:
    """
    Micro-Macro Monte Carlo: E[f] = E_{M_E}[f_inf] + E_M[g], the steady-state
    average taken once over a large bank and only the M perturbations evolved.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_input (RandomInput): Distribution and seed of θ
        M_E (int): Size of the steady-state bank
        M (int): Number of evolved perturbations, M ≤ M_E; the first M bank samples
        executor (Executor, optional): Pool for the chunks
        chunk_size (int, optional): Samples per batched solve
        quadrature (int, optional): Gauss nodes for E[f_inf] instead of the bank

    Returns:
        UqSeries: Mean and variance of f at every snapshot time; traces hold the
            scalar perturbation variance per snapshot
    """
    ensemble = m3c_ensemble(backend, [random_input], M_E, M, executor, chunk_size, quadrature)
    return ensemble.series(backend, 0, M, random_input.seed)


def next_sample_count(active: int, variance_before: float, variance_after: float) -> int:
    """
    Sample count after a step: ⌊M_n Var_after / Var_before⌋ clamped to [1, M_n].
    A variance that grows from zero cannot be followed, since samples are never re-added.
    """
    if variance_before == 0:
        if variance_after == 0:
            return active
        raise SolverError("perturbation variance grew from zero; the sample count cannot increase")
    count = int(np.floor(active * variance_after / variance_before))
    return min(active, max(1, count))


def fm3c_estimate(backend, random_input: RandomInput, M_E: int, M_0: int, chunk_size: Optional[int] = None,
                  executor: Optional[Executor] = None, quadrature: Optional[int] = None) -> UqSeries:
    """
    Fast Micro-Macro Monte Carlo: as m3c_estimate, but after every step the
    active sample count follows the decay of the perturbation variance and the
    surplus samples are discarded evenly.

    Args:
        backend (VelocitySweep or PhaseSweep): Solver front-end
        random_input (RandomInput): Distribution and seed of θ
        M_E (int): Size of the steady-state bank
        M_0 (int): Initial number of perturbations, M_0 ≤ M_E
        chunk_size (int, optional): Samples per chunk of the steady-state bank
        executor (Executor, optional): Pool for the steady-state bank
        quadrature (int, optional): Gauss nodes for E[f_inf] instead of the bank

    Returns:
        UqSeries: Mean and variance at every snapshot time; traces hold the active
            sample count and the perturbation variance after every step
    """
    if M_0 > M_E:
        raise ValueError(f"M_0 = {M_0} exceeds the equilibrium bank size M_E = {M_E}")
    if M_0 < 1:
        raise ValueError("FM3C needs at least one sample")

    started = time.perf_counter()
    expected_inf, _, _ = equilibrium_expectation(backend, random_input, M_E, executor, chunk_size, quadrature)
    bank_time = time.perf_counter() - started

    started = time.perf_counter()
    thetas = random_input.sample(M_0)
    f_inf = backend.equilibrium(thetas)
    ensemble = SampleEnsemble(thetas, f_inf, backend.datum(thetas) - f_inf, np.arange(M_0))
    config = backend.config
    advance = backend.perturbation_stepper(thetas, f_inf)

    def statistics() -> Tuple[np.ndarray, np.ndarray]:
        active = ensemble.active
        g_mean, _ = sample_statistics(ensemble.g[active])
        _, variance = sample_statistics(ensemble.f_inf[active] + ensemble.g[active])
        return expected_inf + g_mean, variance

    times, means, variances = [0.0], [], []
    mean, variance = statistics()
    means.append(mean)
    variances.append(variance)
    counts = [M_0]
    g_variance = [ensemble_variance(ensemble.g, backend.cell_volume)]

    for index in range(1, config.n_steps + 1):
        active = ensemble.active
        before = ensemble_variance(ensemble.g[active], backend.cell_volume)
        ensemble.g[active] = advance(ensemble.g[active])
        after = ensemble_variance(ensemble.g[active], backend.cell_volume)
        try:
            keep = next_sample_count(ensemble.active_count, before, after)
        except SolverError as err:
            failures_logger.error(f"FM3C step {index}: {err}")
            raise SolverError(str(err), trace=counts) from err
        if keep < ensemble.active_count:
            ensemble.discard(keep)
            advance = backend.perturbation_stepper(thetas[ensemble.active], f_inf[ensemble.active])
            logger.debug(f"FM3C step {index}: {len(active)} -> {keep} samples")
        counts.append(ensemble.active_count)
        g_variance.append(after)
        if config.keeps(index):
            times.append(index * config.step)
            mean, variance = statistics()
            means.append(mean)
            variances.append(variance)

    return UqSeries(
        grid=backend.grid,
        times=np.array(times),
        mean=np.array(means),
        variance=np.array(variances),
        method="fm3c",
        count=M_0,
        seed=random_input.seed,
        traces={"active_samples": np.array(counts), "perturbation_variance": np.array(g_variance)},
        wall_times={"equilibrium_bank": bank_time, "solve": time.perf_counter() - started},
    )

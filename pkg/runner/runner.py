# runner/runner.py
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from kinetic.diagnostics import EntropyTrace, entropy_decay_rate, error_norms
from kinetic.mesh import Density, expectation, quadrature_nodes
from kinetic.solver import DeterministicSolver
from runner.export import grid_metadata, version_string, write_manifest, write_series, write_table
from runner.scenario import Scenario
from uq.galerkin import GpcBasis, project, run_gpc, run_mm_gpc
from uq.sampling import (UqSeries, collocate, fm3c_estimate, m3c_ensemble, mc_ensemble, pairwise_sum,
                         sample_statistics)
from utils.config import Config
from utils.errors import SolverError

logger = logging.getLogger('kinetic_uq')
results_logger = logging.getLogger('run_results')


@dataclass
class ResultTable:
    """
    A CSV table under construction: a first column plus named statistic columns.

    Args:
        first_column (str): Name of the sweep or time column
        values (array): Its values
        columns (dict): Column name -> values
    """

    first_column: str
    values: np.ndarray
    columns: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, values: Any) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != np.shape(self.values):
            raise ValueError(f"column '{name}' does not match the {self.first_column} column")
        self.columns[name] = values


@dataclass
class ReferenceSolution:
    """
    Expected density and variance the estimates are measured against.

    Args:
        mean (array): Per snapshot (n_t, ...state), or a single state when steady
        variance (array): Same layout as mean
        steady (bool): One time-independent state
        source (str): How it was obtained
    """

    mean: np.ndarray
    variance: np.ndarray
    steady: bool
    source: str

    def at(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.steady:
            return self.mean, self.variance
        return self.mean[index], self.variance[index]


class ScenarioRunner:
    """
    Runs one scenario: every configured UQ method, its error tables against the
    reference solution, the CSV series and the run manifest.
    """

    def __init__(self, scenario: Scenario, threads: Optional[int] = None, output_dir: Optional[str] = None):
        """
        Initialize the runner

        Args:
            scenario (Scenario): Validated scenario
            threads (int, optional): Worker count, resolved through Config
            output_dir (str, optional): Overrides [output] directory
        """
        self.scenario = scenario
        self.threads = Config.resolve_threads(threads)
        self.output_dir = output_dir or scenario.output_dir
        self.random_input = scenario.random_input

        self.executor: Optional[ThreadPoolExecutor] = None
        self.artifacts: List[str] = []
        self.tables: Dict[str, ResultTable] = {}
        self.summary: Dict[str, Any] = {}
        self.wall_times: Dict[str, float] = {}
        self._reference: Optional[ReferenceSolution] = None
        self._times: Optional[np.ndarray] = None

    def start(self) -> None:
        """Create the worker pool and the output directory."""
        os.makedirs(self.output_dir, exist_ok=True)
        self.executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="kinetic-uq")
        logger.info(f"Scenario {self.scenario.id}: {', '.join(self.scenario.methods)} on {self.threads} "
                    f"thread(s), output in {self.output_dir}")

    def run(self) -> Dict[str, Any]:
        """
        Run every method of the scenario and write the artifacts.

        Returns:
            dict: {'success', 'message', 'status', 'artifacts', 'summary'}
        """
        if self.executor is None:
            self.start()
        handlers = {
            "collocation": self._run_collocation,
            "mc": self._run_mc,
            "m3c": self._run_m3c,
            "fm3c": self._run_fm3c,
            "gpc": self._run_galerkin,
            "mm_gpc": self._run_galerkin,
        }
        started = time.perf_counter()
        status, message = "ok", f"Scenario {self.scenario.id} finished"
        try:
            done = set()
            for method in self.scenario.methods:
                handler = handlers[method]
                if handler in done:
                    continue
                done.add(handler)
                method_started = time.perf_counter()
                handler()
                self.wall_times[method] = time.perf_counter() - method_started
        except (SolverError, ValueError, FloatingPointError) as e:
            status, message = "failed", f"Scenario {self.scenario.id} failed: {e}"
            logger.error(message)
        self.wall_times["total"] = time.perf_counter() - started

        self._write_tables()
        self._write_manifest(status)
        results_logger.info(f"{self.scenario.id}: status={status} wall={self.wall_times['total']:.2f}s "
                            + " ".join(f"{key}={_short(value)}" for key, value in self.summary.items()))
        return {
            "success": status == "ok",
            "message": message,
            "status": status,
            "artifacts": list(self.artifacts),
            "summary": dict(self.summary),
        }

    def stop(self) -> None:
        """Shut the worker pool down."""
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    # -- reference and error measures ---------------------------------------

    def reference(self) -> ReferenceSolution:
        """Closed-form expected steady state by quadrature, or high-node collocation with the same solver."""
        if self._reference is not None:
            return self._reference
        scenario = self.scenario
        started = time.perf_counter()
        if scenario.reference == "steady_state":
            nodes, weights = quadrature_nodes(self.random_input, scenario.reference_nodes)
            states = scenario.model.steady_state(scenario.grid, nodes).values
            mean = expectation(states, weights)
            variance = expectation((states - mean) ** 2, weights)
            self._reference = ReferenceSolution(mean, variance, True, f"steady_state({scenario.reference_nodes})")
        else:
            series = collocate(scenario.backend(), self.random_input, scenario.reference_nodes, self.executor,
                               scenario.chunk_size)
            self._remember_times(series.times)
            self._reference = ReferenceSolution(series.mean, series.variance, False,
                                                f"collocation({scenario.reference_nodes})")
        self.wall_times["reference"] = time.perf_counter() - started
        logger.info(f"Reference solution: {self._reference.source}")
        return self._reference

    def norms(self, values: np.ndarray, reference: np.ndarray) -> Tuple[Any, Any, Any]:
        """(L1, L2, Linf) of values - reference over the state axes, batched over leading axes."""
        scenario = self.scenario
        if scenario.phase_space:
            diff = values - reference
            volume = scenario.space.dx * scenario.grid.dw
            return (volume * np.sum(np.abs(diff), axis=(-2, -1)),
                    np.sqrt(volume * np.sum(diff ** 2, axis=(-2, -1))),
                    np.max(np.abs(diff), axis=(-2, -1)))
        return error_norms(Density(scenario.grid, values, signed=True), reference)

    def series_errors(self, series: UqSeries, norm: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and variance errors at every snapshot of a series."""
        reference = self.reference()
        mean_errors, variance_errors = [], []
        for index in range(len(series.times)):
            mean, variance = reference.at(index)
            mean_errors.append(self.norms(series.mean[index], mean)[norm])
            variance_errors.append(self.norms(series.variance[index], variance)[norm])
        return np.array(mean_errors), np.array(variance_errors)

    def _remember_times(self, times: np.ndarray) -> None:
        if self._times is None:
            self._times = np.asarray(times, dtype=float)
            self.tables["error_vs_time"] = ResultTable("time", self._times)
        elif len(times) != len(self._times) or not np.allclose(times, self._times, rtol=0, atol=1e-12):
            raise SolverError("snapshot times differ between methods of one scenario")

    def _time_column(self, name: str, times: np.ndarray, values: np.ndarray) -> None:
        self._remember_times(times)
        self.tables["error_vs_time"].add(name, values)

    def _report_indices(self, times: np.ndarray) -> List[Tuple[str, int]]:
        """Final time plus the closest snapshot to every requested report time."""
        picks = [("final", len(times) - 1)]
        for wanted in self.scenario.report_times:
            index = int(np.argmin(np.abs(times - wanted)))
            picks.append((f"t{_short(times[index])}", index))
        return picks

    def _sweep_table(self, name: str, first_column: str, values: List[int]) -> ResultTable:
        if name not in self.tables:
            self.tables[name] = ResultTable(first_column, np.asarray(values, dtype=float))
        return self.tables[name]

    def _write_series(self, label: str, series: UqSeries) -> None:
        scenario = self.scenario
        mean, variance = series.mean, series.variance
        metadata = [f"method={series.method} count={series.count} seed={_short(series.seed)}"]
        if scenario.phase_space:
            marginal = lambda values: scenario.space.dx * np.sum(values, axis=-2)
            mean, variance = marginal(mean), marginal(variance)
            metadata.append(f"velocity marginal over x in [{_short(scenario.space.x_min)}, "
                            f"{_short(scenario.space.x_max)}] n_x={scenario.space.n_x}")
        self.artifacts.append(write_series(os.path.join(self.output_dir, f"mean_{label}.csv"), series.times, mean,
                                           scenario.grid, metadata))
        self.artifacts.append(write_series(os.path.join(self.output_dir, f"variance_{label}.csv"), series.times,
                                           variance, scenario.grid, metadata))

    # -- methods ------------------------------------------------------------

    def _run_collocation(self) -> None:
        scenario = self.scenario
        table = self._sweep_table("error_vs_nodes", "nodes", scenario.nodes)
        for flux in scenario.fluxes:
            rules = scenario.rules if flux in ("cc", "entropic") else scenario.rules[:1]
            for rule in rules:
                label = flux if len(rules) == 1 else f"{flux}_{rule}"
                backend = scenario.backend(flux, rule)
                columns: Dict[str, List[float]] = {}
                series = None
                for M in scenario.nodes:
                    series = collocate(backend, self.random_input, M, self.executor, scenario.chunk_size)
                    mean_errors, variance_errors = self.series_errors(series)
                    for tag, index in self._report_indices(series.times):
                        columns.setdefault(f"{label}_mean_L1_{tag}", []).append(mean_errors[index])
                        columns.setdefault(f"{label}_variance_L1_{tag}", []).append(variance_errors[index])
                    self.summary[f"min_mean_{label}_M{M}"] = float(np.min(series.mean))
                for name, values in columns.items():
                    table.add(name, values)

                M = scenario.nodes[-1]
                mean_errors, variance_errors = self.series_errors(series)
                self._time_column(f"collocation_{label}_M{M}_mean_L1", series.times, mean_errors)
                self._time_column(f"collocation_{label}_M{M}_variance_L1", series.times, variance_errors)
                self._write_series(f"collocation_{label}_M{M}", series)
                self.summary[f"collocation_{label}_final_L1"] = float(mean_errors[-1])
                results_logger.info(f"{scenario.id}: collocation {label} final mean L1 by nodes "
                                    + ", ".join(f"M={m}: {e:.3e}" for m, e in
                                                zip(scenario.nodes, columns[f"{label}_mean_L1_final"])))

                if scenario.track_entropy and not scenario.phase_space:
                    self._entropy(flux, rule, label, M)

    def _entropy(self, flux: str, rule: str, label: str, M: int) -> None:
        """Expected relative entropy and dissipation at every step of the M-node collocation run."""
        scenario = self.scenario
        nodes, weights = quadrature_nodes(self.random_input, M)
        solver = DeterministicSolver(scenario.model, scenario.grid, scenario.solver_config(flux, rule, True))
        run = solver.run(nodes)
        trace: EntropyTrace = run.entropy.expected(weights)
        columns = {"relative_entropy": trace.values, "dissipation": trace.dissipation}
        path = os.path.join(self.output_dir, f"entropy_{label}.csv")
        self.artifacts.append(write_table(path, "time", trace.times, columns,
                                          [grid_metadata(scenario.grid), f"collocation nodes={M}"]))
        monotone = trace.is_non_increasing(1e-12)
        rate = entropy_decay_rate(trace.times, trace.values)
        self.summary[f"entropy_{label}_non_increasing"] = monotone
        self.summary[f"entropy_{label}_decay_rate"] = float(rate)
        if not monotone:
            logging.getLogger('solver_failures').warning(
                f"{scenario.id}: expected relative entropy increased for {label} "
                f"(largest step {np.max(trace.increments()):.3e})")
        results_logger.info(f"{scenario.id}: entropy {label} non-increasing={monotone} decay rate {rate:.3f}")

    def _repetition_inputs(self):
        return [self.random_input.repetition(r) for r in range(self.scenario.repetitions)]

    def _sample_errors(self, prefix: str, times: np.ndarray, mean_per_count: Dict[int, np.ndarray]) -> None:
        """
        Tables for sample sweeps. mean_per_count maps M to the estimated means of
        shape (n_t, repetitions, ...state); errors are averaged over repetitions.
        """
        scenario = self.scenario
        reference = self.reference()
        table = self._sweep_table("error_vs_samples", "samples", scenario.samples)
        finals = []
        columns: Dict[str, List[float]] = {}
        for M in scenario.samples:
            means = mean_per_count[M]
            errors = np.array([np.mean(self.norms(means[index], reference.at(index)[0])[0])
                               for index in range(len(times))])
            self._time_column(f"{prefix}_M{M}_mean_L1", times, errors)
            for tag, index in self._report_indices(times):
                columns.setdefault(f"{prefix}_mean_L1_{tag}", []).append(errors[index])
            finals.append(errors[-1])
        for name, values in columns.items():
            table.add(name, values)

        if len(scenario.samples) > 1 and np.all(np.asarray(finals) > 0):
            slope = float(np.polyfit(np.log(scenario.samples), np.log(finals), 1)[0])
            self.summary[f"{prefix}_error_slope"] = slope
            results_logger.info(f"{scenario.id}: {prefix} error slope in M {slope:.3f}")
        self.summary[f"{prefix}_final_L1"] = [float(e) for e in finals]

    def _run_mc(self) -> None:
        scenario = self.scenario
        largest = max(scenario.samples)
        times, snapshots = mc_ensemble(scenario.backend(), self._repetition_inputs(), largest, self.executor,
                                       scenario.chunk_size)
        means = {M: np.array([[pairwise_sum(snapshots[t, r, :M]) / M for r in range(snapshots.shape[1])]
                              for t in range(len(times))])
                 for M in scenario.samples}
        self._sample_errors("mc", times, means)

        stats = [sample_statistics(snapshots[t, 0]) for t in range(len(times))]
        series = UqSeries(scenario.grid, times, np.array([m for m, _ in stats]), np.array([v for _, v in stats]),
                          "mc", largest, scenario.seed)
        self._write_series(f"mc_M{largest}", series)
        self.summary["mc_min_value"] = float(np.min(snapshots))

    def _run_m3c(self) -> None:
        scenario = self.scenario
        backend = scenario.backend()
        largest = max(scenario.samples)
        ensemble = m3c_ensemble(backend, self._repetition_inputs(), scenario.bank or largest, largest,
                                self.executor, scenario.chunk_size, scenario.quadrature)
        self.wall_times.update({f"m3c_{key}": value for key, value in ensemble.wall_times.items()})

        means = {}
        for M in scenario.samples:
            per_repetition = [ensemble.series(backend, r, M, scenario.seed).mean
                              for r in range(scenario.repetitions)]
            means[M] = np.stack(per_repetition, axis=1)
        self._sample_errors("m3c", ensemble.times, means)

        series = ensemble.series(backend, 0, largest, scenario.seed)
        self._write_series(f"m3c_M{largest}", series)
        trace = series.traces["perturbation_variance"]
        self.artifacts.append(write_table(os.path.join(self.output_dir, "perturbation_variance.csv"), "time",
                                          series.times, {f"m3c_M{largest}": trace}))
        self.summary["m3c_variance_decreasing"] = bool(trace[-1] < trace[0])
        self.summary["m3c_min_value"] = float(np.min(ensemble.f_inf[None] + ensemble.g))

    def _run_fm3c(self) -> None:
        scenario = self.scenario
        backend = scenario.backend()
        M_0 = scenario.initial_samples
        series = fm3c_estimate(backend, self.random_input, scenario.bank or M_0, M_0, scenario.chunk_size,
                               self.executor, scenario.quadrature)
        self.wall_times.update({f"fm3c_{key}": value for key, value in series.wall_times.items()})
        mean_errors, _ = self.series_errors(series)
        self._time_column(f"fm3c_M{M_0}_mean_L1", series.times, mean_errors)
        self._write_series(f"fm3c_M{M_0}", series)

        counts = series.traces["active_samples"]
        step_times = np.arange(len(counts)) * backend.config.step
        self.artifacts.append(write_table(os.path.join(self.output_dir, "sample_trace.csv"), "time", step_times,
                                          {"active_samples": counts,
                                           "perturbation_variance": series.traces["perturbation_variance"]}))
        self.summary["fm3c_final_samples"] = int(counts[-1])
        self.summary["fm3c_final_L1"] = float(mean_errors[-1])
        results_logger.info(f"{scenario.id}: fm3c {M_0} -> {int(counts[-1])} samples, "
                            f"final mean L1 {mean_errors[-1]:.3e}")

    def _run_galerkin(self) -> None:
        scenario = self.scenario
        methods = [method for method in ("gpc", "mm_gpc") if method in scenario.methods]
        table = self._sweep_table("error_vs_order", "order", scenario.orders)
        columns: Dict[str, List[float]] = {}
        exact = scenario.reference == "steady_state"
        if exact:
            nodes, weights = quadrature_nodes(self.random_input, scenario.reference_nodes)
            exact_states = scenario.model.steady_state(scenario.grid, nodes).values

        for order in scenario.orders:
            basis = GpcBasis(order, self.random_input)
            for method in methods:
                if method == "gpc":
                    series, field = run_gpc(scenario.model, scenario.grid, basis, scenario.dt, scenario.horizon,
                                            scenario.snapshot_every)
                else:
                    series, g = run_mm_gpc(scenario.model, scenario.grid, basis, scenario.dt, scenario.horizon,
                                           scenario.snapshot_every)
                    field = project(lambda theta: scenario.model.steady_state(scenario.grid, theta), basis,
                                    scenario.grid) + g
                    self.summary[f"mm_gpc_P{order}_perturbation_size"] = float(series.traces["perturbation_size"][-1])
                mean_errors, _ = self.series_errors(series, norm=1)
                columns.setdefault(f"{method}_mean_L2", []).append(mean_errors[-1])
                if exact:
                    pointwise = self.norms(field.reconstruct(nodes), exact_states)[1]
                    columns.setdefault(f"{method}_expected_L2", []).append(float(np.dot(weights, pointwise)))
                if order == scenario.orders[-1]:
                    self._time_column(f"{method}_P{order}_mean_L2", series.times, mean_errors)
                    self._write_series(f"{method}_P{order}", series)
                    self.summary[f"{method}_final_L2"] = float(mean_errors[-1])
        for name, values in columns.items():
            table.add(name, values)
        results_logger.info(f"{scenario.id}: galerkin final mean L2 by order "
                            + "; ".join(f"{name}: " + ", ".join(f"{e:.3e}" for e in values)
                                        for name, values in columns.items() if name.endswith("mean_L2")))

    # -- artifacts ------------------------------------------------------------

    def _write_tables(self) -> None:
        metadata = [grid_metadata(self.scenario.grid), f"reference={self._reference.source if self._reference else ''}"]
        for name, table in self.tables.items():
            if not table.columns:
                continue
            path = os.path.join(self.output_dir, f"{name}.csv")
            self.artifacts.append(write_table(path, table.first_column, table.values, table.columns, metadata))

    def _write_manifest(self, status: str) -> None:
        entries: Dict[str, Any] = {"status": status, "partial": status != "ok", "version": version_string(),
                                   "threads": self.threads}
        entries.update(self.scenario.resolved())
        entries.update({f"env.{key}": value for key, value in Config.as_dict().items()})
        entries.update({f"wall_time.{key}": value for key, value in self.wall_times.items()})
        entries.update({f"result.{key}": value for key, value in self.summary.items()})
        entries["artifacts"] = [os.path.basename(path) for path in self.artifacts]
        path = os.path.join(self.output_dir, "manifest.txt")
        write_manifest(path, entries)
        self.artifacts.append(path)


def _short(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)

# runner/scenario.py
import ast
import configparser
import inspect
import logging
import os
import re
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from kinetic.flux import quadrature_rule
from kinetic.mesh import RandomInput, VelocityGrid
from kinetic.models import MODEL_FACTORIES, ModelSpec
from kinetic.solver import FLUX_KINDS, SolverConfig
from kinetic.stepping import STEP_MODES
from kinetic.transport import SpaceGrid, swarming_phase_datum
from uq.sampling import PhaseSweep, VelocitySweep
from utils.config import Config
from utils.errors import ScenarioError

logger = logging.getLogger('kinetic_uq')

SCENARIO_METHODS = ("collocation", "mc", "m3c", "fm3c", "gpc", "mm_gpc")
PHASE_METHODS = ("collocation", "mc", "m3c")
REFERENCE_KINDS = ("steady_state", "collocation")
DT_VARIABLES = ("dw", "dx", "L", "sigma2")

_REQUIRED = object()

_BINARY = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}
_UNARY = {
    ast.UAdd: lambda a: a,
    ast.USub: lambda a: -a,
}


class Expression:
    """
    Arithmetic expression over a fixed set of variable names: numbers, + - * / ^
    (or **), unary signs and parentheses. Nothing else is accepted.

    Args:
        text (str): Source, e.g. "dw^2/2"
        variables (tuple): Names the expression may reference
    """

    def __init__(self, text: str, variables: Tuple[str, ...]):
        self.text = text.strip()
        self.variables = tuple(variables)
        if not self.text:
            raise ValueError("empty expression")
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as err:
            raise ValueError(f"cannot parse '{self.text}'") from err
        self.names = set()
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node: ast.AST) -> None:
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            self._check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            pass
        elif isinstance(node, ast.Name):
            if node.id not in self.variables:
                raise ValueError(f"unknown variable '{node.id}' in '{self.text}' "
                                 f"(allowed: {', '.join(self.variables)})")
            self.names.add(node.id)
        else:
            raise ValueError(f"unsupported syntax in '{self.text}'")

    def _eval(self, node: ast.AST, values: Dict[str, Any]) -> Any:
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](self._eval(node.left, values), self._eval(node.right, values))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, values))
        if isinstance(node, ast.Constant):
            return float(node.value)
        return values[node.id]

    def evaluate(self, **values: Any) -> Any:
        missing = sorted(self.names - set(values))
        if missing:
            raise ValueError(f"'{self.text}' needs {', '.join(missing)}, which this scenario does not define")
        with np.errstate(divide='raise', invalid='raise', over='raise'):
            try:
                return self._eval(self._tree, values)
            except (ZeroDivisionError, FloatingPointError, OverflowError) as err:
                raise ValueError(f"cannot evaluate '{self.text}': {err}") from err

    @property
    def constant(self) -> bool:
        return not self.names


class DtRule(Expression):
    """Time-step rule such as "dw^2/2" or "dw/L", evaluated against the resolved grid."""

    def __init__(self, text: str):
        super().__init__(text, DT_VARIABLES)

    def evaluate(self, **values: Any) -> float:
        dt = float(super().evaluate(**values))
        if not np.isfinite(dt) or dt <= 0:
            raise ValueError(f"dt rule '{self.text}' must evaluate positive, got {dt}")
        return dt


def parameter_value(text: str) -> Any:
    """A model parameter: a number, or a function of theta when the expression uses it."""
    expression = Expression(text, ("theta",))
    if expression.constant:
        return float(expression.evaluate())

    def parameter(theta: Any) -> np.ndarray:
        return expression.evaluate(theta=np.asarray(theta, dtype=float))

    return parameter


def _split(text: str) -> List[str]:
    return [item.strip() for item in re.split(r"[,\s]+", text) if item.strip()]


class Scenario:
    """
    A scenario file, parsed and validated.

    Sections: [scenario] id and description; [model] name plus factory
    parameters; [grid] n_cells, velocity bounds and optional space mesh;
    [datum] phase-space datum; [time] horizon, dt rule and snapshots; [scheme]
    fluxes, rules, mode and entropy tracking; [uq] methods and their sizes;
    [output] directory. Every problem is reported as a ScenarioError anchored
    at the offending line.
    """

    def __init__(self, path: str, seed: Optional[int] = None):
        """
        Initialize the scenario from an INI file

        Args:
            path (str): Scenario file
            seed (int, optional): Overrides [uq] seed
        """
        self.path = path
        if not os.path.isfile(path):
            raise ScenarioError("scenario file not found", path=path)
        self.parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        self.parser.optionxform = str
        try:
            with open(path, "r") as f:
                text = f.read()
            self.parser.read_string(text, source=path)
        except configparser.Error as err:
            raise ScenarioError(f"malformed file: {err}", path=path,
                                line=getattr(err, "lineno", None)) from err
        self.lines = self._key_lines(text)
        self._seed_override = seed
        self._load()

    @staticmethod
    def _key_lines(text: str) -> Dict[Tuple[str, Optional[str]], int]:
        lines, section = {}, None
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line[0] in ";#":
                continue
            header = re.match(r"^\[([^\]]+)\]", line)
            if header:
                section = header.group(1).strip()
                lines[(section, None)] = number
                continue
            key = re.match(r"^([^=:]+?)\s*[=:]", line)
            if key and section is not None:
                lines.setdefault((section, key.group(1).strip()), number)
        return lines

    def error(self, message: str, section: str, key: Optional[str] = None) -> ScenarioError:
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        return ScenarioError(message, path=self.path, section=section, key=key, line=line)

    def _raw(self, section: str, key: str, default: Any) -> Any:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if default is _REQUIRED:
            raise self.error("missing required key", section, key)
        return default

    def _number(self, section: str, key: str, default: Any = None, kind: Callable = float) -> Any:
        raw = self._raw(section, key, default)
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            value = float(Expression(raw, ()).evaluate())
        except ValueError as err:
            raise self.error(f"not a number: {err}", section, key) from err
        if kind is int:
            if value != int(value):
                raise self.error(f"expected an integer, got {raw}", section, key)
            return int(value)
        return value

    def _integers(self, section: str, key: str) -> List[int]:
        raw = self._raw(section, key, "")
        values = []
        for item in _split(raw):
            if not re.fullmatch(r"\d+", item):
                raise self.error(f"expected a list of positive integers, got '{raw}'", section, key)
            values.append(int(item))
        return values

    def _flag(self, section: str, key: str, default: bool) -> bool:
        if not self.parser.has_option(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError as err:
            raise self.error(str(err), section, key) from err

    # -- parsing ----------------------------------------------------------

    def _load(self) -> None:
        self.id = self._raw("scenario", "id", os.path.splitext(os.path.basename(self.path))[0])
        self.description = self._raw("scenario", "description", "")
        self._load_model()
        self._load_grid()
        self._load_time()
        self._load_scheme()
        self._load_uq()
        self.output_dir = self._raw("output", "directory", os.path.join(Config.OUTPUT_DIR, self.id))

    def _load_model(self) -> None:
        name = self._raw("model", "name", _REQUIRED)
        if name not in MODEL_FACTORIES:
            raise self.error(f"unknown model '{name}' (known: {', '.join(MODEL_FACTORIES)})", "model", "name")
        self.model_name = name
        factory = MODEL_FACTORIES[name]
        accepted = inspect.signature(factory).parameters
        self.model_params: Dict[str, str] = {}
        arguments: Dict[str, Any] = {}
        for key, raw in self.parser.items("model"):
            if key == "name":
                continue
            if key not in accepted or key in ("initial_datum", "kernel", "domain"):
                raise self.error(f"model '{name}' has no parameter '{key}'", "model", key)
            try:
                arguments[key] = parameter_value(raw)
            except ValueError as err:
                raise self.error(str(err), "model", key) from err
            self.model_params[key] = raw.strip()

        bounds = None
        if self.parser.has_option("grid", "w_min") or self.parser.has_option("grid", "w_max"):
            if "domain" not in accepted:
                raise self.error(f"model '{name}' fixes its own velocity domain", "grid", "w_min")
            bounds = (self._number("grid", "w_min", _REQUIRED), self._number("grid", "w_max", _REQUIRED))
            arguments["domain"] = bounds
        try:
            self.model: ModelSpec = factory(**arguments)
        except ValueError as err:
            raise self.error(str(err), "model") from err

    def _load_grid(self) -> None:
        n_cells = self._number("grid", "n_cells", _REQUIRED, int)
        try:
            self.grid: VelocityGrid = self.model.grid(n_cells)
        except ValueError as err:
            raise self.error(str(err), "grid", "n_cells") from err

        self.space: Optional[SpaceGrid] = None
        self.datum: Optional[np.ndarray] = None
        if self.parser.has_option("grid", "n_x"):
            if self.model.local_drift_diffusion is None:
                raise self.error(f"model '{self.model_name}' has no phase-space form", "grid", "n_x")
            try:
                self.space = SpaceGrid(self._number("grid", "x_min", 0.0), self._number("grid", "x_max", _REQUIRED),
                                       self._number("grid", "n_x", _REQUIRED, int))
            except ValueError as err:
                raise self.error(str(err), "grid", "n_x") from err
            self.datum_params = {key: self._number("datum", key, default)
                                 for key, default in (("mu_x", 0.0), ("sigma_x", 0.25), ("mean_w", 1.5),
                                                      ("sigma2_w", 0.25))}
            self.datum = swarming_phase_datum(self.space, self.grid, **self.datum_params)

    def _load_time(self) -> None:
        self.horizon = self._number("time", "horizon", _REQUIRED)
        if self.horizon <= 0:
            raise self.error("horizon must be positive", "time", "horizon")
        try:
            self.dt_rule = DtRule(self._raw("time", "dt", _REQUIRED))
            self.dt = self.dt_rule.evaluate(**self.dt_variables())
        except ValueError as err:
            raise self.error(str(err), "time", "dt") from err
        self.snapshot_every = self._number("time", "snapshot_every", 0, int)
        if self.snapshot_every < 0:
            raise self.error("snapshot_every must be non-negative", "time", "snapshot_every")

    def dt_variables(self) -> Dict[str, float]:
        values = {"dw": self.grid.dw, "L": self.grid.length}
        if self.space is not None:
            values["dx"] = self.space.dx
        sigma2 = self.model_params.get("sigma2")
        if sigma2 is not None and Expression(sigma2, ("theta",)).constant:
            values["sigma2"] = float(Expression(sigma2, ()).evaluate())
        return values

    def _load_scheme(self) -> None:
        self.fluxes = _split(self._raw("scheme", "fluxes", "cc"))
        for flux in self.fluxes:
            if flux not in FLUX_KINDS:
                raise self.error(f"unknown flux '{flux}' (known: {', '.join(FLUX_KINDS)})", "scheme", "fluxes")
        self.rules = _split(self._raw("scheme", "rules", "midpoint"))
        for rule in self.rules:
            try:
                quadrature_rule(rule)
            except ValueError as err:
                raise self.error(str(err), "scheme", "rules") from err
        self.mode = self._raw("scheme", "mode", "explicit_euler")
        if self.mode not in STEP_MODES:
            raise self.error(f"unknown mode '{self.mode}' (known: {', '.join(STEP_MODES)})", "scheme", "mode")
        self.track_entropy = self._flag("scheme", "track_entropy", False)
        self.courant = self._number("scheme", "courant", 1.0 / 6.0)
        for flux in self.fluxes:
            try:
                self.solver_config(flux, self.rules[0])
            except ValueError as err:
                raise self.error(str(err), "scheme", "mode") from err
        if self.space is not None and any(flux not in ("cc", "exact") for flux in self.fluxes):
            raise self.error("phase-space runs use the cc or exact flux", "scheme", "fluxes")

    def _load_uq(self) -> None:
        self.methods = _split(self._raw("uq", "methods", _REQUIRED))
        for method in self.methods:
            if method not in SCENARIO_METHODS:
                raise self.error(f"unknown method '{method}' (known: {', '.join(SCENARIO_METHODS)})",
                                 "uq", "methods")
            if self.space is not None and method not in PHASE_METHODS:
                raise self.error(f"method '{method}' is not available for phase-space scenarios", "uq", "methods")

        self.nodes = self._integers("uq", "nodes")
        self.samples = self._integers("uq", "samples")
        self.orders = self._integers("uq", "orders")
        self.bank = self._number("uq", "bank", 0, int)
        self.initial_samples = self._number("uq", "initial_samples", 0, int)
        self.quadrature = self._number("uq", "quadrature", None, int)
        self.repetitions = self._number("uq", "repetitions", 1, int)
        self.chunk_size = self._number("uq", "chunk_size", 0, int) or None
        seed = self._number("uq", "seed", Config.DEFAULT_SEED, int)
        self.seed = self._seed_override if self._seed_override is not None else seed
        self.theta_bounds = (self._number("uq", "theta_min", -1.0), self._number("uq", "theta_max", 1.0))
        try:
            self.report_times = [float(Expression(item, ()).evaluate())
                                 for item in _split(self._raw("uq", "report_times", ""))]
        except ValueError as err:
            raise self.error(str(err), "uq", "report_times") from err

        default_reference = "steady_state" if self.model.steady_state is not None and self.space is None \
            else "collocation"
        self.reference = self._raw("uq", "reference", default_reference)
        if self.reference not in REFERENCE_KINDS:
            raise self.error(f"unknown reference '{self.reference}'", "uq", "reference")
        if self.reference == "steady_state" and (self.model.steady_state is None or self.space is not None):
            raise self.error("no closed-form steady state for this scenario", "uq", "reference")
        self.reference_nodes = self._number("uq", "reference_nodes", 40, int)

        self._check_counts()
        try:
            self.random_input
        except ValueError as err:
            raise self.error(str(err), "uq", "theta_min") from err

    def _check_counts(self) -> None:
        if self.repetitions < 1:
            raise self.error("repetitions must be at least 1", "uq", "repetitions")
        if self.reference_nodes < 1:
            raise self.error("reference_nodes must be at least 1", "uq", "reference_nodes")
        if self.seed < 0:
            raise self.error("seed must be non-negative", "uq", "seed")
        methods = set(self.methods)
        if "collocation" in methods and not self.nodes:
            raise self.error("collocation needs a nodes list", "uq", "nodes")
        if methods & {"mc", "m3c"}:
            if not self.samples:
                raise self.error("mc and m3c need a samples list", "uq", "samples")
            if min(self.samples) < 2:
                raise self.error("sample counts must be at least 2", "uq", "samples")
        if methods & {"m3c", "fm3c"} and self.bank < 1 and self.quadrature is None:
            raise self.error("m3c and fm3c need a bank size or a quadrature size", "uq", "bank")
        if "m3c" in methods and self.quadrature is None and max(self.samples) > self.bank:
            raise self.error(f"samples exceed the bank size {self.bank}", "uq", "samples")
        if "fm3c" in methods:
            if self.initial_samples < 1:
                raise self.error("fm3c needs initial_samples", "uq", "initial_samples")
            if self.quadrature is None and self.initial_samples > self.bank:
                raise self.error(f"initial_samples exceeds the bank size {self.bank}", "uq", "initial_samples")
        if methods & {"gpc", "mm_gpc"} and not self.orders:
            raise self.error("gpc and mm_gpc need an orders list", "uq", "orders")
        if "mm_gpc" in methods and self.model.steady_state is None:
            raise self.error("mm_gpc needs a closed-form steady state", "uq", "methods")
        if methods & {"m3c", "fm3c"} and self.model.equilibrium is None:
            raise self.error("m3c and fm3c need an equilibrium constructor", "uq", "methods")

    # -- resolved objects ---------------------------------------------------

    @property
    def random_input(self) -> RandomInput:
        return RandomInput(self.theta_bounds[0], self.theta_bounds[1], self.seed)

    @property
    def phase_space(self) -> bool:
        return self.space is not None

    def solver_config(self, flux: str, rule: str, track_entropy: bool = False) -> SolverConfig:
        return SolverConfig(
            dt=self.dt,
            horizon=self.horizon,
            flux=flux,
            rule=rule,
            mode=self.mode,
            snapshot_every=self.snapshot_every,
            track_entropy=track_entropy,
            cfl_safety=Config.CFL_SAFETY,
        )

    def backend(self, flux: Optional[str] = None, rule: Optional[str] = None):
        """Sweep front-end for one flux and rule: VelocitySweep, or PhaseSweep with a space mesh."""
        config = self.solver_config(flux or self.fluxes[0], rule or self.rules[0])
        if self.space is not None:
            return PhaseSweep(self.model, self.grid, self.space, config, self.datum, self.courant)
        return VelocitySweep(self.model, self.grid, config)

    def resolved(self) -> Dict[str, Any]:
        """Every setting after defaults, keyed section.key, for the run manifest."""
        settings = {
            "scenario.id": self.id,
            "scenario.path": self.path,
            "model.name": self.model_name,
            "grid.n_cells": self.grid.n_cells,
            "grid.w_min": self.grid.w_min,
            "grid.w_max": self.grid.w_max,
            "grid.dw": self.grid.dw,
            "time.horizon": self.horizon,
            "time.dt_rule": self.dt_rule.text,
            "time.dt": self.dt,
            "time.snapshot_every": self.snapshot_every,
            "scheme.fluxes": ", ".join(self.fluxes),
            "scheme.rules": ", ".join(self.rules),
            "scheme.mode": self.mode,
            "scheme.track_entropy": self.track_entropy,
            "uq.methods": ", ".join(self.methods),
            "uq.nodes": ", ".join(map(str, self.nodes)),
            "uq.samples": ", ".join(map(str, self.samples)),
            "uq.orders": ", ".join(map(str, self.orders)),
            "uq.bank": self.bank,
            "uq.initial_samples": self.initial_samples,
            "uq.quadrature": self.quadrature,
            "uq.repetitions": self.repetitions,
            "uq.chunk_size": self.chunk_size,
            "uq.seed": self.seed,
            "uq.theta_min": self.theta_bounds[0],
            "uq.theta_max": self.theta_bounds[1],
            "uq.reference": self.reference,
            "uq.reference_nodes": self.reference_nodes,
            "uq.report_times": ", ".join(repr(t) for t in self.report_times),
            "output.directory": self.output_dir,
        }
        settings.update({f"model.{key}": value for key, value in self.model_params.items()})
        if self.space is not None:
            settings.update({
                "grid.n_x": self.space.n_x,
                "grid.x_min": self.space.x_min,
                "grid.x_max": self.space.x_max,
                "scheme.courant": self.courant,
            })
            settings.update({f"datum.{key}": value for key, value in self.datum_params.items()})
        return settings


class ScenarioCatalog:
    """The bundled scenarios: every *.ini file of a directory, keyed by file name."""

    def __init__(self, directory: Optional[str] = None):
        """
        Initialize the catalog

        Args:
            directory (str, optional): Scenario directory, Config.SCENARIO_DIR by default
        """
        self.directory = directory or Config.SCENARIO_DIR

    def ids(self) -> List[str]:
        if not os.path.isdir(self.directory):
            logger.warning(f"Scenario directory {self.directory} not found")
            return []
        return sorted(os.path.splitext(name)[0] for name in os.listdir(self.directory) if name.endswith(".ini"))

    def resolve(self, name_or_path: str) -> str:
        """A path as given, the bundled file of that id, or the one bundled id starting with `<name>_`."""
        if os.path.isfile(name_or_path):
            return name_or_path
        candidate = os.path.join(self.directory, f"{name_or_path}.ini")
        if os.path.isfile(candidate):
            return candidate
        matches = [scenario_id for scenario_id in self.ids() if scenario_id.startswith(f"{name_or_path}_")]
        if len(matches) == 1:
            return os.path.join(self.directory, f"{matches[0]}.ini")
        if matches:
            raise ScenarioError(f"ambiguous scenario id, matches {', '.join(matches)}", path=name_or_path)
        raise ScenarioError("scenario file not found", path=name_or_path)

    def load(self, name_or_path: str, seed: Optional[int] = None) -> Scenario:
        return Scenario(self.resolve(name_or_path), seed)

    def describe(self) -> List[Tuple[str, str]]:
        """(id, description) of every bundled scenario; unreadable files show their error."""
        listing = []
        for scenario_id in self.ids():
            try:
                listing.append((scenario_id, self.load(scenario_id).description))
            except ScenarioError as err:
                listing.append((scenario_id, f"INVALID: {err.render()}"))
        return listing

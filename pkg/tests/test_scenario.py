# tests/test_scenario.py
import numpy as np
import pytest

from runner.scenario import DtRule, Expression, Scenario, ScenarioCatalog, parameter_value
from uq.sampling import VelocitySweep
from utils.errors import ScenarioError


class TestExpression:
    def test_evaluates_with_caret_power(self):
        assert Expression("dw^2/2", ("dw",)).evaluate(dw=0.1) == pytest.approx(0.005)

    def test_unknown_variable(self):
        with pytest.raises(ValueError, match="unknown variable 'dx'"):
            Expression("dx/2", ("dw",))

    @pytest.mark.parametrize("text", ["__import__('os')", "dw.real", "[dw]", "dw if dw else 1"])
    def test_rejects_other_syntax(self, text):
        with pytest.raises(ValueError):
            Expression(text, ("dw",))

    def test_division_by_zero(self):
        with pytest.raises(ValueError, match="cannot evaluate"):
            Expression("1/dw", ("dw",)).evaluate(dw=0.0)

    def test_dt_rule(self):
        assert DtRule("dw/L").evaluate(dw=0.1, L=2.0) == pytest.approx(0.05)
        with pytest.raises(ValueError, match="must evaluate positive"):
            DtRule("-dw").evaluate(dw=0.1)
        with pytest.raises(ValueError, match="needs dx"):
            DtRule("dx/2").evaluate(dw=0.1)

    def test_parameter_value(self):
        assert parameter_value("0.1") == pytest.approx(0.1)
        varying = parameter_value("0.1 + 5e-3*theta")
        np.testing.assert_allclose(varying(np.array([-1.0, 1.0])), [0.095, 0.105])


class TestScenario:
    def test_loads_defaults(self, write_scenario):
        scenario = Scenario(write_scenario())
        assert scenario.id == "tiny"
        assert scenario.grid.n_cells == 10
        assert scenario.dt == pytest.approx(0.02)
        assert scenario.mode == "explicit_euler"
        assert scenario.nodes == [2, 3]
        assert not scenario.phase_space
        assert isinstance(scenario.backend(), VelocitySweep)
        resolved = scenario.resolved()
        assert resolved["model.sigma2"] == "0.1"
        assert resolved["time.dt_rule"] == "dw^2/2"

    def test_seed_override(self, write_scenario):
        assert Scenario(write_scenario(), seed=99).random_input.seed == 99

    def test_bad_cell_count_names_its_line(self, write_scenario):
        path = write_scenario(replace={"n_cells = 10": "n_cells = 1"})
        with pytest.raises(ScenarioError) as info:
            Scenario(path)
        err = info.value
        assert err.section == "grid" and err.key == "n_cells"
        assert err.line == 12
        assert err.render() == f"{path}:12: [grid] n_cells: n_cells must be ≥ 2"

    def test_malformed_dt(self, write_scenario):
        with pytest.raises(ScenarioError) as info:
            Scenario(write_scenario(replace={"dt = dw^2/2": "dt = dw^^2"}))
        assert info.value.key == "dt"
        assert info.value.line == 16

    @pytest.mark.parametrize("old, new, key", [
        ("methods = collocation", "", "methods"),
        ("name = mixture_relaxation", "name = boltzmann", "name"),
        ("epsilon = 5e-3", "epsilon = 5e-3\nmass = 2", "mass"),
        ("fluxes = cc", "fluxes = upwind", "fluxes"),
        ("rules = midpoint", "rules = simpson", "rules"),
        ("nodes = 2, 3", "nodes = 2, x", "nodes"),
        ("methods = collocation", "methods = mc", "samples"),
        ("methods = collocation", "methods = fm3c", "bank"),
    ])
    def test_invalid_settings(self, write_scenario, old, new, key):
        with pytest.raises(ScenarioError) as info:
            Scenario(write_scenario(replace={old: new}))
        assert info.value.key == key

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            Scenario(str(tmp_path / "absent.ini"))


class TestCatalog:
    def test_bundled_scenarios_load(self, scenario_dir):
        catalog = ScenarioCatalog(scenario_dir)
        ids = catalog.ids()
        assert len(ids) == 9
        for scenario_id, description in catalog.describe():
            assert not description.startswith("INVALID"), description

    def test_phase_space_scenario(self, scenario_dir):
        scenario = ScenarioCatalog(scenario_dir).load("ex3_swarming")
        assert scenario.phase_space
        assert scenario.datum.shape == (scenario.space.n_x, scenario.grid.n_cells)

    def test_resolve_unknown(self, scenario_dir):
        with pytest.raises(ScenarioError):
            ScenarioCatalog(scenario_dir).resolve("fig99")

    def test_resolve_short_alias(self, scenario_dir):
        catalog = ScenarioCatalog(scenario_dir)
        assert catalog.resolve("fig2").endswith("fig2_entropy.ini")
        assert catalog.load("fig6").id == "fig6_gpc"

    def test_resolve_ambiguous_alias(self, tmp_path):
        for name in ("ex1_opinion", "ex1_opinion_fine"):
            (tmp_path / f"{name}.ini").write_text("[scenario]\n")
        catalog = ScenarioCatalog(str(tmp_path))
        assert catalog.resolve("ex1_opinion").endswith("ex1_opinion.ini")
        with pytest.raises(ScenarioError, match="ambiguous"):
            catalog.resolve("ex1")

# tests/test_config.py
import logging

from utils.config import Config
from utils.errors import ScenarioError, SolverError


class TestConfig:
    def test_defaults_are_valid(self):
        assert Config.validate() == {}

    def test_invalid_settings(self, monkeypatch):
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        monkeypatch.setattr(Config, "CFL_SAFETY", 1.5)
        monkeypatch.setattr(Config, "KINETIC_UQ_THREADS", -1)
        errors = Config.validate()
        assert set(errors) == {"LOG_LEVEL", "CFL_SAFETY", "KINETIC_UQ_THREADS"}

    def test_log_level(self, monkeypatch):
        monkeypatch.setattr(Config, "LOG_LEVEL", "debug")
        assert Config.get_log_level() == logging.DEBUG
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        assert Config.get_log_level() == logging.INFO

    def test_thread_resolution(self, monkeypatch):
        monkeypatch.setattr(Config, "KINETIC_UQ_THREADS", 2)
        assert Config.resolve_threads(3) == 3
        assert Config.resolve_threads(None) == 2
        monkeypatch.setattr(Config, "KINETIC_UQ_THREADS", 0)
        assert Config.resolve_threads(None) >= 1

    def test_as_dict(self):
        settings = Config.as_dict()
        assert settings["DEFAULT_SEED"] == Config.DEFAULT_SEED
        assert "validate" not in settings


class TestErrors:
    def test_scenario_error_render(self):
        err = ScenarioError("must evaluate positive", path="a.ini", section="time", key="dt", line=7)
        assert err.render() == "a.ini:7: [time] dt: must evaluate positive"
        assert str(err) == err.render()

    def test_scenario_error_without_location(self):
        assert ScenarioError("scenario file not found", path="b.ini").render() == "b.ini: scenario file not found"
        assert ScenarioError("bad").render() == "bad"

    def test_solver_error_trace(self):
        err = SolverError("diverged", trace=(3, 2, 1))
        assert err.trace == [3, 2, 1]
        assert SolverError("x").trace == []

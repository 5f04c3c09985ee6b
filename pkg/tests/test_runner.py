# tests/test_runner.py
import os

import numpy as np
import pytest

from main import main
from runner.export import read_manifest
from runner.runner import ScenarioRunner
from runner.scenario import Scenario
from utils.errors import SolverError

ALL_METHODS = {
    "methods = collocation": "methods = collocation, mc, m3c, fm3c, gpc, mm_gpc\n"
                             "samples = 2, 4\nbank = 8\ninitial_samples = 4\norders = 1, 2",
}


def _run(path, output_dir):
    runner = ScenarioRunner(Scenario(path), threads=2, output_dir=output_dir)
    try:
        runner.start()
        return runner, runner.run()
    finally:
        runner.stop()


class TestScenarioRunner:
    def test_collocation_run(self, write_scenario, tmp_path):
        out = str(tmp_path / "out")
        runner, result = _run(write_scenario(), out)
        assert result["success"] and result["status"] == "ok"
        for name in ("error_vs_nodes.csv", "error_vs_time.csv", "mean_collocation_cc_M3.csv",
                     "variance_collocation_cc_M3.csv", "manifest.txt"):
            assert os.path.join(out, name) in result["artifacts"]
            assert os.path.isfile(os.path.join(out, name))
        table = np.loadtxt(os.path.join(out, "error_vs_nodes.csv"), delimiter=",", ndmin=2)
        np.testing.assert_allclose(table[:, 0], [2, 3])
        assert np.all(table[:, 1:] >= 0)

    def test_manifest(self, write_scenario, tmp_path):
        out = str(tmp_path / "out")
        _run(write_scenario(), out)
        manifest = read_manifest(os.path.join(out, "manifest.txt"))
        assert manifest["status"] == "ok"
        assert manifest["partial"] == "false"
        assert manifest["uq.seed"] == "1"
        assert manifest["time.dt_rule"] == "dw^2/2"
        assert "wall_time.total" in manifest
        assert "mean_collocation_cc_M3.csv" in manifest["artifacts"]

    def test_every_method(self, write_scenario, tmp_path):
        out = str(tmp_path / "out")
        _, result = _run(write_scenario(replace=ALL_METHODS), out)
        assert result["success"], result["message"]
        written = {os.path.basename(path) for path in result["artifacts"]}
        assert {"error_vs_samples.csv", "error_vs_order.csv", "perturbation_variance.csv", "sample_trace.csv",
                "mean_mc_M4.csv", "mean_m3c_M4.csv", "mean_fm3c_M4.csv", "mean_gpc_P2.csv",
                "mean_mm_gpc_P2.csv"} <= written
        assert 1 <= result["summary"]["fm3c_final_samples"] <= 4
        samples = np.loadtxt(os.path.join(out, "error_vs_samples.csv"), delimiter=",", ndmin=2)
        np.testing.assert_allclose(samples[:, 0], [2, 4])

    def test_failure_is_reported(self, write_scenario, tmp_path, monkeypatch):
        def broken(*args, **kwargs):
            raise SolverError("singular tridiagonal system (zero pivot in row 3)")

        monkeypatch.setattr("runner.runner.collocate", broken)
        out = str(tmp_path / "out")
        _, result = _run(write_scenario(), out)
        assert not result["success"]
        assert "zero pivot" in result["message"]
        manifest = read_manifest(os.path.join(out, "manifest.txt"))
        assert manifest["status"] == "failed"
        assert manifest["partial"] == "true"

    def test_steady_reference(self, write_scenario, tmp_path):
        runner = ScenarioRunner(Scenario(write_scenario()), threads=1, output_dir=str(tmp_path))
        reference = runner.reference()
        assert reference.steady
        assert reference.mean.shape == (10,)
        assert np.all(reference.variance >= 0)


class TestCommandLine:
    def test_validate(self, write_scenario, capsys):
        assert main(["validate", "--config", write_scenario()]) == 0
        assert "tiny: ok" in capsys.readouterr().out

    def test_validate_invalid(self, write_scenario, capsys):
        path = write_scenario(replace={"n_cells = 10": "n_cells = 1"})
        assert main(["validate", "--config", path]) == 2
        assert f"{path}:12: [grid] n_cells" in capsys.readouterr().out

    def test_run(self, write_scenario, tmp_path):
        out = str(tmp_path / "cli")
        assert main(["run", "--config", write_scenario(), "--out", out, "--threads", "1", "--seed", "5"]) == 0
        assert read_manifest(os.path.join(out, "manifest.txt"))["uq.seed"] == "5"

    def test_run_rejects_threads(self, write_scenario, tmp_path):
        assert main(["run", "--config", write_scenario(), "--out", str(tmp_path), "--threads", "0"]) == 2

    def test_list(self, capsys):
        assert main(["list"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 9
        assert lines[0].startswith("ex1_opinion")

    def test_requires_command(self):
        with pytest.raises(SystemExit):
            main([])

# tests/test_export.py
import numpy as np
import pytest

from kinetic.mesh import VelocityGrid
from runner.export import format_value, grid_metadata, read_manifest, write_manifest, write_series, write_table


def _rows(path):
    with open(path) as f:
        lines = f.read().splitlines()
    header = [line for line in lines if line.startswith("#")]
    data = [line for line in lines if not line.startswith("#")]
    return header, data


class TestFormatting:
    def test_values(self):
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value([1, 2.5]) == "1, 2.5"
        assert format_value("cc") == "cc"

    def test_grid_metadata(self):
        text = grid_metadata(VelocityGrid(-1.0, 1.0, 4), n_x=8)
        assert text == "grid w_min=-1 w_max=1 n_cells=4 dw=0.5 n_x=8"


class TestTables:
    def test_write_table(self, tmp_path):
        path = write_table(str(tmp_path / "sub" / "table.csv"), "samples", [10, 100],
                           {"mc_mean_L1": [0.1, 0.03]}, ["grid w_min=-1"])
        header, data = _rows(path)
        assert header == ["# grid w_min=-1", "# samples,mc_mean_L1"]
        np.testing.assert_allclose(np.loadtxt(path, delimiter=","), [[10, 0.1], [100, 0.03]])
        assert len(data) == 2

    def test_column_length_checked(self, tmp_path):
        with pytest.raises(ValueError, match="expected 2"):
            write_table(str(tmp_path / "bad.csv"), "samples", [10, 100], {"mc": [0.1]})

    def test_write_series(self, tmp_path):
        grid = VelocityGrid(0.0, 1.0, 3)
        values = np.arange(6.0).reshape(2, 3)
        path = write_series(str(tmp_path / "mean.csv"), np.array([0.0, 1.0]), values, grid, ["method=mc"])
        header, _ = _rows(path)
        assert header[0].startswith("# grid w_min=0")
        assert header[-1] == "# time,w_0,w_1,w_2"
        loaded = np.loadtxt(path, delimiter=",")
        np.testing.assert_allclose(loaded[:, 1:], values)

    def test_series_shape_checked(self, tmp_path):
        with pytest.raises(ValueError):
            write_series(str(tmp_path / "x.csv"), np.array([0.0]), np.zeros((1, 4)), VelocityGrid(0.0, 1.0, 3))


def test_manifest_keeps_order(tmp_path):
    path = write_manifest(str(tmp_path / "manifest.txt"),
                          {"status": "ok", "time.dt": 0.02, "uq.quadrature": None, "artifacts": ["a.csv", "b.csv"]})
    entries = read_manifest(path)
    assert list(entries) == ["status", "time.dt", "uq.quadrature", "artifacts"]
    assert float(entries["time.dt"]) == 0.02
    assert entries["uq.quadrature"] == ""
    assert entries["artifacts"] == "a.csv, b.csv"

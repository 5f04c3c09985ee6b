# tests/conftest.py
import os

os.environ.setdefault("LOG_TO_FILE", "false")

import numpy as np
import pytest

from kinetic.mesh import VelocityGrid
from kinetic.models import linear_fp_model, mixture_relaxation_model

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


@pytest.fixture
def grid():
    return VelocityGrid(-1.0, 1.0, 20)


@pytest.fixture
def linear_model():
    return linear_fp_model(u=0.1, T=0.3)


@pytest.fixture
def mixture_model():
    return mixture_relaxation_model()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR


TINY_SCENARIO = """\
[scenario]
id = tiny
description = Small mixture relaxation run

[model]
name = mixture_relaxation
c = 0.1
sigma2 = 0.1
epsilon = 5e-3

[grid]
n_cells = 10

[time]
horizon = 0.01
dt = dw^2/2

[scheme]
fluxes = cc
rules = midpoint

[uq]
methods = collocation
nodes = 2, 3
seed = 1
reference = steady_state
reference_nodes = 5
"""


@pytest.fixture
def write_scenario(tmp_path):
    """Write scenario text to tmp_path and return its path; `replace` swaps whole lines."""
    def write(text: str = TINY_SCENARIO, name: str = "tiny.ini", replace=None) -> str:
        for old, new in (replace or {}).items():
            text = text.replace(old, new)
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return write

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chnsdg.fespace import Discretization  # noqa: E402
from chnsdg.mesh import build_mesh, validate_hypothesis  # noqa: E402

UNIT = (-0.5, 0.5, -0.5, 0.5)


def random_velocity(disc, rng, scale=1.0):
    u = scale * rng.standard_normal(disc.V.size)
    u[disc.velocity_fixed] = 0.0
    return u


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mesh2():
    m = build_mesh(UNIT, 2, 2)
    validate_hypothesis(m)
    return m


@pytest.fixture(scope="session")
def disc2(mesh2):
    return Discretization(mesh2)


@pytest.fixture(scope="session")
def disc4():
    m = build_mesh(UNIT, 4, 4)
    validate_hypothesis(m)
    return Discretization(m)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")

import json
from pathlib import Path

import numpy as np
import pytest

from nonadiabatic.model import make_model

DATA = Path(__file__).parent / "data"
ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_lines(request):
    """Shared list of ``CRITERION`` lines, echoed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture(scope="session")
def lz():
    return make_model("landau_zener", delta=1.0, slope=1.0)


@pytest.fixture(scope="session")
def goe():
    return make_model("goe_interp", dim=6, alpha=2.0, seed=1)


@pytest.fixture(scope="session")
def goe_points(goe):
    """Refined and action-tagged branch points of the seed-1 GOE model."""
    from nonadiabatic.actions import ActionTable
    from nonadiabatic.branchpoints import find_branch_points

    pts, _ = find_branch_points(goe)
    ActionTable.compute(goe, pts)
    return pts


def random_complex_symmetric(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

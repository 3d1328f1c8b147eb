import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from techtransit.core import Fleet, SystemState, Technology  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "techtransit" / "data"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_fleet(lifetimes, lead_times, cfs=None, effs=None, costs=None, intensity=True):
    n = len(lifetimes)
    cfs = cfs or [1.0] * n
    effs = effs or [1.0] * n
    costs = costs or [1.0] * n
    return Fleet(tuple(Technology(f"t{i}", lifetimes[i], lead_times[i], cfs[i], effs[i], costs[i])
                       for i in range(n)), intensity=intensity)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def two_fleet():
    return make_fleet([50.0, 50.0], [4.0, 4.0])


@pytest.fixture
def state_5050():
    return SystemState(0.0, np.array([50.0, 50.0]))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

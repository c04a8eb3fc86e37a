import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from floatpop.model import LandUse, StudyCalendar, TimeGrid, ZoneRecord  # noqa: E402

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


def box(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))


def make_zone(zone_id, ring, land_use="residential", area=1.0, pokepoints=0):
    return ZoneRecord(zone_id, (ring,), LandUse(land_use), area, pokepoints)


@pytest.fixture
def two_boxes():
    """Two unit squares sharing the edge x = 1."""
    return [make_zone("A", box(0, 0, 1, 1)), make_zone("B", box(1, 0, 2, 1))]


@pytest.fixture
def launch():
    return dt.date(2016, 8, 3)


@pytest.fixture
def calendar(launch):
    return StudyCalendar.around_launch(launch, 7)


@pytest.fixture
def short_grid():
    return TimeGrid(600, 659)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

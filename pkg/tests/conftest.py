import numpy as np
import pytest

from semidiscrete_ma.geom import ConvexPolygon
from semidiscrete_ma.measures import TargetDomain

# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def unit_square():
    return ConvexPolygon.box(0.0, 0.0, 1.0, 1.0)


@pytest.fixture
def uniform_target():
    return TargetDomain.unit_square()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

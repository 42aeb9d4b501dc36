import numpy as np
import pytest

from spikelab.entire import ExponentPair, solve_entire_ground_state


@pytest.fixture(scope="session")
def gs_233():
    return solve_entire_ground_state(ExponentPair(2, 3, 3))


@pytest.fixture(scope="session")
def gs_333():
    return solve_entire_ground_state(ExponentPair(3, 3, 3))


@pytest.fixture(scope="session")
def gs_1523():
    return solve_entire_ground_state(ExponentPair(1.5, 2, 3))


@pytest.fixture(scope="session")
def gs_sech():
    return solve_entire_ground_state(ExponentPair(3, 3, 1), M=4000)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

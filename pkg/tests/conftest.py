import numpy as np
import pytest

from resilient_routing import catalog

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def overflow():
    return catalog.overflow_detour()


@pytest.fixture
def grid():
    return catalog.cascade_grid()

import numpy as np
import pytest

from steerid import VehicleParams

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def f1tenth():
    return VehicleParams.f1tenth()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

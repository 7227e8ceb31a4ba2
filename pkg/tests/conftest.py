import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskacc import presets
from riskacc.mjls import AccParams

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fig3_rci():
    return presets.rci_sets(presets.FIG3)


@pytest.fixture(scope="session")
def safety_params() -> AccParams:
    return presets.params("safety")


@pytest.fixture(scope="session")
def safety_terminal(safety_params):
    return presets.terminal_set(safety_params)


@pytest.fixture(scope="session")
def performance_terminal():
    return presets.terminal_set(presets.params("performance"))


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])

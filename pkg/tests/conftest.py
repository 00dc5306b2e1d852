import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ejcbf.dynamics import RobotParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def params():
    return RobotParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

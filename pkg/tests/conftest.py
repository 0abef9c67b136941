import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sipk.instances import t1, t2

settings.register_profile("sipk", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sipk")


@pytest.fixture(scope="session")
def T1():
    return t1()


@pytest.fixture(scope="session")
def T2():
    return t2()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thinshell.surface import Surface

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def sphere():
    return Surface.sphere(1.0, 64, 64)


@pytest.fixture(scope="session")
def torus():
    return Surface.torus(3.0, 1.0, 64, 64)


@pytest.fixture(scope="session")
def sphere32():
    return Surface.sphere(1.0, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

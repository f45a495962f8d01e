import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from featsel import simenv

settings.register_profile(
    "featsel", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("featsel")


def random_spd(rng, n, ridge=1.0):
    X = rng.normal(size=(n, n))
    return X @ X.T + ridge * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_instance():
    return simenv.random_instance(7, 6, 3, sigma=0.5)


@pytest.fixture(scope="session")
def small_candidates(small_instance):
    return small_instance.candidates


# acceptance verdicts, echoed once more at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

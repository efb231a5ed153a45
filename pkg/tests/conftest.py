import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bowen_lab import systems as sysm

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


@functools.lru_cache(maxsize=None)
def cached_sample(name, budget, seed=0, **params):
    system = sysm.make_system(name, **params)
    return sysm.sample_lambda(system, budget, seed)


@pytest.fixture(scope="session")
def cat_sample():
    return cached_sample("cat", 200_000)


@pytest.fixture(scope="session")
def pcat_sample():
    return cached_sample("pcat", 200_000, eta=0.03)


@pytest.fixture(scope="session")
def solenoid_sample():
    return cached_sample("solenoid", 100_000)


@pytest.fixture(scope="session")
def prod4_sample():
    return cached_sample("prod4-linear", 1_000_000)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def max_dev(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))

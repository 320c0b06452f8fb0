import functools

import pytest
from hypothesis import HealthCheck, settings

from lsem.densities import make_density

settings.register_profile("lsem", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lsem")


@functools.lru_cache(maxsize=None)
def density(kind, r=None, unit_variance=True):
    """Shared density instances so calibration tables are built once per session."""
    return make_density(kind, r=r, unit_variance=unit_variance)


FAMILIES = {
    "gaussian": ("gaussian", None),
    "laplace": ("laplace", None),
    "logistic": ("logistic", None),
    "poly1.5": ("polynomial", 1.5),
    "poly3": ("polynomial", 3.0),
}


def family(name):
    return density(*FAMILIES[name])


@pytest.fixture(scope="session")
def gaussian():
    return density("gaussian")


@pytest.fixture(scope="session")
def laplace():
    return density("laplace")


@pytest.fixture(scope="session")
def logistic():
    return density("logistic")


# acceptance verdicts collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key:2d}: {line}")

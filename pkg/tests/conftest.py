import numpy as np
import pytest

from ddcoupling.analysis import find_equilibrium
from ddcoupling.model import make_catalog_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance gate")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def logistic():
    return make_catalog_model("logistic", {"p": 2.0, "q": 1.0})


@pytest.fixture(scope="session")
def sirs():
    return make_catalog_model("sirs", {"lam": 2.0, "gam": 1.0, "theta": 1.0})


@pytest.fixture(scope="session")
def logistic_eq(logistic):
    return find_equilibrium(logistic, [0.5])


@pytest.fixture(scope="session")
def sirs_eq(sirs):
    return find_equilibrium(sirs, [0.4, 0.3])


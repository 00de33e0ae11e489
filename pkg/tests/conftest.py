import numpy as np
import pytest

from quadmpc.certificates import synthesize
from quadmpc.harness import run_scenario
from quadmpc.model import ContinuousAxisModel, ThrustEnvelope, discretize_axis
from quadmpc.scenario import builtin_scenario

Q_CASE = np.diag([100.0, 1.0, 1.0, 1.0])
R_CASE = 0.01
CASE_DELTA = 5.6061

_ACCEPTANCE_LINES = []


def record_criterion(number, ok: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def axis_model():
    return discretize_axis(ContinuousAxisModel(0.26, 0.1), 0.05)


@pytest.fixture(scope="session")
def axis_certs(axis_model):
    return synthesize(axis_model, np.full(50, CASE_DELTA), Q_CASE, R_CASE)


@pytest.fixture(scope="session")
def envelope():
    return ThrustEnvelope(45.21)


@pytest.fixture(scope="session")
def circle_tv():
    return run_scenario(builtin_scenario("circle"))


@pytest.fixture(scope="session")
def circle_ti():
    return run_scenario(builtin_scenario("circle").with_variant("ti"))

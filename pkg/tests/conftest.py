import numpy as np
import pytest
from hypothesis import settings

from bilinstab import build_biorthogonal, load_model, shift_to_zero_ground, synthesize_null_control
from bilinstab.stabilization import draw_perturbation

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

T_BENCH = 0.5
N_BENCH = 6
RADIUS_BENCH = 0.05

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def dirichlet():
    return load_model("dirichlet-x2", N_BENCH)


@pytest.fixture(scope="session")
def shifted(dirichlet):
    return shift_to_zero_ground(dirichlet)


@pytest.fixture(scope="session")
def family(shifted):
    return build_biorthogonal(shifted.eigenvalues, T_BENCH)


@pytest.fixture(scope="session")
def v0():
    return draw_perturbation(N_BENCH, RADIUS_BENCH, 0)


@pytest.fixture(scope="session")
def control(shifted, family, v0):
    return synthesize_null_control(shifted, v0, T_BENCH, family)


@pytest.fixture(scope="session")
def e1():
    return np.eye(N_BENCH)[0]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

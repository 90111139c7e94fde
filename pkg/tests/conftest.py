import numpy as np
import pytest

from levybridge import (
    BrownianDrift,
    GammaSubordinator,
    LengthMeasure,
    NormalDensity,
    PinningMeasure,
    UniformDensity,
)

# acceptance lines collected by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def bm():
    return BrownianDrift()


@pytest.fixture
def tau12():
    return LengthMeasure.atomic(((1.0, 0.5), (2.0, 0.5)))


@pytest.fixture
def z_two_atom():
    return PinningMeasure.atomic(((-1.0, 0.5), (1.0, 0.5)))


@pytest.fixture
def z_normal():
    return PinningMeasure.continuous(NormalDensity(0.0, 1.0))


@pytest.fixture
def gamma():
    return GammaSubordinator()


@pytest.fixture
def z_uniform():
    return PinningMeasure.continuous(UniformDensity(0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)

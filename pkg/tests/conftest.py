import numpy as np
import pytest

from sgvi import PhaseState, get_system


@pytest.fixture
def kubo():
    return get_system("kubo", beta=0.1)


@pytest.fixture
def synchrotron():
    return get_system("synchrotron", beta=0.1)


@pytest.fixture
def anharmonic():
    return get_system("anharmonic", gamma=0.1, beta=0.1)


@pytest.fixture
def planar():
    return get_system("planar-rotational", sigma=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def state(q, p):
    return PhaseState(np.atleast_1d(np.asarray(q, float)), np.atleast_1d(np.asarray(p, float)))


def random_draw(rng, system, dt_range=(1e-3, 0.25)):
    """Random (z, dt, dW) with |dW| <= 3 sqrt(dt)."""
    N, M = system.dim, system.noise_channels
    z = PhaseState(rng.uniform(-1.5, 1.5, N), rng.uniform(-1.5, 1.5, N))
    dt = float(rng.uniform(*dt_range))
    dW = np.clip(rng.standard_normal(M), -3, 3) * np.sqrt(dt)
    return z, dt, dW


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

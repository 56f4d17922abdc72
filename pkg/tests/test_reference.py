import numpy as np
import pytest

from sgvi import Hamiltonian, get_system, make_system
from sgvi.model import ConfigurationError
from sgvi.reference import kubo_exact, milstein_ito_step, milstein_step, taylor32_step

from conftest import random_draw, state


def test_kubo_exact_examples():
    z = kubo_exact(0.0, 1.0, 0.0, np.pi / 2, 123.0)
    assert z.q[0] == pytest.approx(1.0, abs=1e-15) and z.p[0] == pytest.approx(0.0, abs=1e-15)
    z = kubo_exact(0.3, -0.4, 0.1, 0.0, 0.0)
    assert z.q[0] == 0.3 and z.p[0] == -0.4
    z = kubo_exact(0.0, 1.0, 0.1, 1.0, 2.0)
    assert z.q[0] == pytest.approx(np.sin(1.2), abs=1e-15) and z.p[0] == pytest.approx(np.cos(1.2), abs=1e-15)


def test_kubo_exact_conserves_energy(rng):
    t = rng.uniform(0, 100, 1000)
    W = rng.normal(0, 10, 1000)
    z = kubo_exact(0.3, 0.9, 0.1, t, W)
    H = 0.5 * (z.q ** 2 + z.p ** 2)
    assert np.max(np.abs(H - 0.5 * (0.09 + 0.81))) <= 1e-14


def test_milstein_without_noise_is_euler():
    system = get_system("kubo", beta=0.0)
    z, _ = milstein_step(system, state(0.3, 0.5), 0.1, 0.7)
    assert np.allclose(z.as_vector(), [0.3 + 0.1 * 0.5, 0.5 - 0.1 * 0.3], atol=1e-15)


def test_milstein_anharmonic_additive(anharmonic):
    q, p, dt, dW = 0.6, -0.2, 0.05, 0.3
    z, _ = milstein_step(anharmonic, state(q, p), dt, dW)
    assert np.allclose(z.as_vector(), [q + p * dt, p - 0.4 * q ** 3 * dt - 0.1 * dW], atol=1e-15)


def test_milstein_forms_agree(kubo, rng):
    for _ in range(20):
        z, dt, dW = random_draw(rng, kubo)
        a, _ = milstein_step(kubo, z, dt, dW)
        b, _ = milstein_ito_step(kubo, z, dt, dW)
        assert np.allclose(a.as_vector(), b.as_vector(), atol=1e-10)


def test_taylor32_noise_free_step_on_kubo():
    beta, dt = 0.1, 1e-3
    kubo = get_system("kubo", beta=beta)
    z, _ = taylor32_step(kubo, state(0.0, 1.0), dt, 0.0, dZ=0.0)
    # linear Ito SDE dz = A z dt + B z dW: with dW = dZ = 0 the scheme is
    # z + A z dt - (1/2) B^2 z dt + (1/2) A^2 z dt^2
    c = 0.5 * beta ** 2
    A = np.array([[-c, 1.0], [-1.0, -c]])
    B = beta * np.array([[0.0, 1.0], [-1.0, 0.0]])
    z0 = np.array([0.0, 1.0])
    expected = z0 + A @ z0 * dt - 0.5 * B @ B @ z0 * dt + 0.5 * A @ A @ z0 * dt ** 2
    assert np.allclose(z.as_vector(), expected, atol=1e-12, rtol=0)


def test_taylor32_deterministic_local_error():
    system = get_system("kubo", beta=0.0)
    for dt in (0.1, 0.05):
        z, _ = taylor32_step(system, state(0.0, 1.0), dt, 0.0, dZ=0.0)
        err = np.abs(z.as_vector() - [np.sin(dt), np.cos(dt)]).max()
        assert err <= dt ** 3


def test_taylor32_configuration_errors(kubo):
    two = make_system(1, kubo.H, [kubo.h[0], kubo.h[0]], separable=True)
    with pytest.raises(ConfigurationError):
        taylor32_step(two, state(0.0, 1.0), 0.1, np.zeros(2), dZ=np.zeros(2))
    with pytest.raises(ConfigurationError):
        taylor32_step(kubo, state(0.0, 1.0), 0.1, 0.1)

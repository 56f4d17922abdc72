import numpy as np
import pytest

from sgvi import GalerkinScheme, SolverConfig, StageVector, StepFailure, get_system
from sgvi import galerkin
from sgvi.model import ConfigurationError

from conftest import random_draw, state
from oracles import cayley_rotation, trapezoidal_lagrangian_harmonic, verlet_harmonic

MIDPOINT = GalerkinScheme.from_names(1, "midpoint", name="mid")
VERLET = GalerkinScheme.from_names(2, "trapezoidal", name="sv")
TRAP = GalerkinScheme.from_names(1, "trapezoidal", name="trap")


def test_residual_zero_at_deterministic_midpoint():
    system = get_system("kubo", beta=0.0)
    q, p, dt = 0.3, 0.8, 0.1
    q1, p1 = cayley_rotation(q, p, dt)
    stages = StageVector(np.array([[q1]]), np.array([[0.5 * (p + p1)]]))
    res = galerkin.residual(MIDPOINT, system, state(q, p), stages, dt, 0.0)
    assert np.max(np.abs(res)) <= 1e-12


def test_residual_zero_at_kubo_closed_form(kubo):
    q, p, dt, dW = 0.4, -0.6, 0.05, 0.2
    q1, p1 = cayley_rotation(q, p, dt + 0.1 * dW)
    stages = StageVector(np.array([[q1]]), np.array([[0.5 * (p + p1)]]))
    res = galerkin.residual(MIDPOINT, kubo, state(q, p), stages, dt, dW)
    assert np.max(np.abs(res)) <= 1e-10


def test_residual_nonzero_off_solution(kubo, rng):
    stages = StageVector(rng.normal(size=(1, 1)), rng.normal(size=(1, 1)))
    assert np.max(np.abs(galerkin.residual(MIDPOINT, kubo, state(0.1, 0.2), stages, 0.1, 0.1))) > 0


def test_residual_shape_checks(kubo):
    with pytest.raises(ValueError):
        galerkin.residual(MIDPOINT, kubo, state(0.1, 0.2), StageVector(np.zeros((2, 1)), np.zeros((1, 1))), 0.1, 0.0)


def test_step_kubo_deterministic_matches_midpoint(kubo):
    z, _, stats = galerkin.step(MIDPOINT, kubo, state(0.0, 1.0), 0.01, 0.0)
    q1, p1 = cayley_rotation(0.0, 1.0, 0.01)
    assert z.q[0] == pytest.approx(q1, abs=1e-13) and z.p[0] == pytest.approx(p1, abs=1e-13)
    assert stats.max_residual <= 1e-12


@pytest.mark.parametrize("scheme", [MIDPOINT, VERLET, TRAP])
def test_identity_step(scheme, synchrotron):
    z0 = state(0.3, -0.2)
    z, _, _ = galerkin.step(scheme, synchrotron, z0, 0.0, 0.0)
    assert np.array_equal(z.q, z0.q) and np.array_equal(z.p, z0.p)


def test_kubo_midpoint_conserves_energy(kubo, rng):
    for _ in range(10):
        z0, dt, dW = random_draw(rng, kubo)
        z, _, _ = galerkin.step(MIDPOINT, kubo, z0, dt, dW)
        assert kubo.energy(z.q, z.p) == pytest.approx(kubo.energy(z0.q, z0.p), abs=1e-10)


def test_deterministic_limits_harmonic():
    system = get_system("kubo", beta=0.0)
    q, p, dt = 0.7, -0.3, 0.2
    for scheme, oracle in ((MIDPOINT, cayley_rotation), (VERLET, verlet_harmonic),
                           (TRAP, trapezoidal_lagrangian_harmonic)):
        z, _, _ = galerkin.step(scheme, system, state(q, p), dt, 0.0)
        q1, p1 = oracle(q, p, dt)
        assert abs(z.q[0] - q1) <= 1e-12 and abs(z.p[0] - p1) <= 1e-12


def test_analytic_jacobian_matches_fd(kubo, synchrotron, rng):
    for system in (kubo, synchrotron):
        for scheme in (MIDPOINT, VERLET, GalerkinScheme.from_names(2, "open-trapezoidal")):
            z0, dt, dW = random_draw(rng, system)
            a, _, sa = galerkin.step(scheme, system, z0, dt, dW, SolverConfig(jacobian="analytic"))
            b, _, _ = galerkin.step(scheme, system, z0, dt, dW, SolverConfig(jacobian="fd"))
            assert np.allclose(a.as_vector(), b.as_vector(), atol=1e-11)


def test_batched_step_matches_rows(kubo, rng):
    q = rng.normal(size=(5, 1))
    p = rng.normal(size=(5, 1))
    dW = rng.normal(size=(5, 1)) * 0.3
    from sgvi import PhaseState
    zb, _, _ = galerkin.step(VERLET, kubo, PhaseState(q, p), 0.1, dW)
    for i in range(5):
        zi, _, _ = galerkin.step(VERLET, kubo, PhaseState(q[i], p[i]), 0.1, dW[i])
        assert np.allclose(zb.q[i], zi.q, atol=1e-14) and np.allclose(zb.p[i], zi.p, atol=1e-14)


def test_warm_start_gives_same_answer(synchrotron):
    z0 = state(0.5, 0.4)
    z, stages, _ = galerkin.step(VERLET, synchrotron, z0, 0.1, 0.2)
    z2, _, stats = galerkin.step(VERLET, synchrotron, z0, 0.1, 0.2, warm_start=stages)
    assert np.allclose(z.as_vector(), z2.as_vector(), atol=1e-13)
    assert stats.max_iterations <= 1


def test_step_failure_carries_residual(kubo):
    # the open-trapezoidal quadratic stage matrix is singular when dt + beta dW = 3
    scheme = GalerkinScheme.from_names(2, "open-trapezoidal")
    with pytest.raises(StepFailure) as info:
        galerkin.step(scheme, kubo, state(0.0, 1.0), 1.0, 20.0, SolverConfig(max_iter=5))
    assert info.value.residual is not None


def test_filtered_scheme_requires_h_of_q(kubo):
    scheme = GalerkinScheme.from_names(1, "rectangle", "trapezoidal")
    assert scheme.requires_h_independent_of_p
    with pytest.raises(ConfigurationError):
        galerkin.step(scheme, kubo, state(0.0, 1.0), 0.1, 0.1)


def test_zero_drift_weight_rejected():
    from sgvi import QuadratureRule
    with pytest.raises(ValueError):
        GalerkinScheme(1, QuadratureRule((0.0, 1.0), (0.0, 1.0)))


def test_multichannel_noise_sums_channels():
    # two copies of the Kubo noise with increments a, b act like one channel with a + b
    from sgvi import make_system
    kubo = get_system("kubo", beta=0.1)
    two = make_system(1, kubo.H, [kubo.h[0], kubo.h[0]], separable=True)
    z1, _, _ = galerkin.step(VERLET, two, state(0.2, 0.9), 0.1, np.array([0.15, -0.05]))
    z2, _, _ = galerkin.step(VERLET, kubo, state(0.2, 0.9), 0.1, 0.1)
    assert np.allclose(z1.as_vector(), z2.as_vector(), atol=1e-13)

"""Independent closed-form single steps used as test oracles."""
import numpy as np


def cayley_rotation(q, p, theta):
    """Implicit midpoint for ``H = (p^2 + q^2)/2`` with effective step ``theta``.

    Solves ``q1 = q + a (p + p1)``, ``p1 = p - a (q + q1)`` with ``a = theta/2``.
    """
    a = theta / 2.0
    M = np.array([[1.0, -a], [a, 1.0]])
    rhs = np.array([q + a * p, p - a * q])
    return np.linalg.solve(M, rhs)


def verlet_harmonic(q, p, theta):
    P = p - 0.5 * theta * q
    q1 = q + theta * P
    return q1, P - 0.5 * theta * q1


def trapezoidal_lagrangian_harmonic(q0, p0, dt):
    """Discrete Lagrangian ``dt/2 [L(q0, v) + L(q1, v)]``, ``L = v^2/2 - q^2/2``."""
    v = p0 - 0.5 * dt * q0
    q1 = q0 + dt * v
    return q1, v - 0.5 * dt * q1


def verlet_separable(q, p, dt, dW, dU, dh):
    """Stormer-Verlet with force ``dt U'(q) + dW h'(q)`` and kinetic ``p^2/2``."""
    P = p - 0.5 * (dt * dU(q) + dW * dh(q))
    q1 = q + dt * P
    return q1, P - 0.5 * (dt * dU(q1) + dW * dh(q1))

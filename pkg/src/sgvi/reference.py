"""Non-symplectic comparison schemes and the exact Kubo solution.

The Milstein and strong Taylor 1.5 steps are standard (Kloeden & Platen);
they serve as negative controls for structure preservation and as the
fine-step reference where no closed form exists.
"""
from __future__ import annotations

import numpy as np

from ._solve import as_batch, explicit_result, restore
from .model import ConfigurationError, PhaseState, SystemDef, diffusion_jacobian_action, ito_coefficients

__all__ = ["kubo_exact", "milstein_step", "milstein_ito_step", "taylor32_step", "ito_drift", "diffusion"]

# directional difference steps for derivatives of the Ito drift
FD_FIRST = 1e-5
FD_SECOND = 1e-4


def kubo_exact(q0, p0, beta, t, W_t) -> PhaseState:
    """Exact Kubo flow: rotation of ``(q0, p0)`` by the phase ``t + beta W(t)``."""
    theta = np.asarray(t, float) + beta * np.asarray(W_t, float)
    q0 = np.asarray(q0, float)
    p0 = np.asarray(p0, float)
    c, s = np.cos(theta), np.sin(theta)
    return PhaseState(p0 * s + q0 * c, p0 * c - q0 * s)


def _stack(q, p):
    return np.concatenate([q, p], axis=-1)


def _unstack(z, N):
    return z[..., :N], z[..., N:]


def strat_drift(system: SystemDef, z):
    N = system.dim
    q, p = _unstack(z, N)
    return _stack(system.H.dp(q, p) * 1.0, -system.H.dq(q, p))


def diffusion(system: SystemDef, z, m: int):
    """Column ``B_m(z) = (dh_m/dp, -dh_m/dq)``."""
    N = system.dim
    q, p = _unstack(z, N)
    hm = system.h[m]
    return _stack(hm.dp(q, p) * 1.0, -hm.dq(q, p))


def _DB(system: SystemDef, z, m: int, v):
    N = system.dim
    q, p = _unstack(z, N)
    vq, vp = _unstack(v, N)
    return _stack(*diffusion_jacobian_action(system.h[m], q, p, vq, vp))


def ito_drift(system: SystemDef, z):
    N = system.dim
    A, _ = ito_coefficients(system, PhaseState(*_unstack(z, N)))
    return A


def _batch_z(system, z_k, dW, dZ=None):
    q, p, dW, dZ, bshape = as_batch(z_k, dW, system.noise_channels, dZ)
    return _stack(q, p), dW, dZ, bshape


def _finish(system, z, z_old, bshape, cfg, what):
    N = system.dim
    q, p = _unstack(z, N)
    q0, p0 = _unstack(z_old, N)
    q, p, stats = explicit_result(q, p, q0, p0, cfg, what)
    return restore(q, p, bshape), stats


def milstein_step(system: SystemDef, z_k: PhaseState, dt, dW, cfg=None, dZ=None):
    """Milstein step written with the Stratonovich drift.

    ``z + A_S dt + sum_m B_m dW_m + 1/2 sum_{m,n} (DB_n B_m) dW_m dW_n``.  The
    mixed terms are exact only for commutative noise; with one channel this is
    the textbook scheme.
    """
    z, dW, _, bshape = _batch_z(system, z_k, dW)
    out = z + float(dt) * strat_drift(system, z)
    M = system.noise_channels
    cols = [diffusion(system, z, m) for m in range(M)]
    for m in range(M):
        out = out + dW[:, m, None] * cols[m]
        for n in range(M):
            out = out + 0.5 * (dW[:, m] * dW[:, n])[:, None] * _DB(system, z, n, cols[m])
    return _finish(system, out, z, bshape, cfg, "milstein")


def milstein_ito_step(system: SystemDef, z_k: PhaseState, dt, dW, cfg=None, dZ=None):
    """The same scheme written with the Ito drift: ``... + 1/2 sum (DB_n B_m)(dW_m dW_n - delta_mn dt)``."""
    z, dW, _, bshape = _batch_z(system, z_k, dW)
    dt = float(dt)
    out = z + dt * ito_drift(system, z)
    M = system.noise_channels
    cols = [diffusion(system, z, m) for m in range(M)]
    for m in range(M):
        out = out + dW[:, m, None] * cols[m]
        for n in range(M):
            w = dW[:, m] * dW[:, n] - (dt if m == n else 0.0)
            out = out + 0.5 * w[:, None] * _DB(system, z, n, cols[m])
    return _finish(system, out, z, bshape, cfg, "milstein")


def _scale(z, v, base):
    vn = np.max(np.abs(v), axis=-1, keepdims=True)
    zn = np.max(np.abs(z), axis=-1, keepdims=True)
    return base * (1.0 + zn) / np.where(vn > 0, vn, 1.0)


def _dir1(f, z, v):
    """``Df(z) v`` by a central difference along ``v``."""
    e = _scale(z, v, FD_FIRST)
    return (f(z + e * v) - f(z - e * v)) / (2 * e)


def _dir2(f, z, v, fz):
    """``D^2 f(z)[v, v]`` by a second central difference along ``v``."""
    e = _scale(z, v, FD_SECOND)
    return (f(z + e * v) - 2 * fz + f(z - e * v)) / (e * e)


def taylor32_step(system: SystemDef, z_k: PhaseState, dt, dW, cfg=None, dZ=None):
    """Strong Ito-Taylor scheme of order 1.5 for one noise channel.

    ``Db`` is evaluated from Hessians; derivatives of the Ito drift and the
    second derivative of ``b`` use directional central differences.
    """
    if system.noise_channels != 1:
        raise ConfigurationError("taylor32 supports a single noise channel")
    if dZ is None:
        raise ConfigurationError("taylor32 needs dZ increments")
    z, dW, dZ, bshape = _batch_z(system, z_k, dW, dZ)
    dt = float(dt)
    w = dW[:, :1]
    zz = dZ[:, :1]

    def a_of(x):
        return ito_drift(system, x)

    def b_of(x):
        return diffusion(system, x, 0)

    a = a_of(z)
    b = b_of(z)
    Db_b = _DB(system, z, 0, b)                 # L1 b
    Db_a = _DB(system, z, 0, a)
    D2b_bb = _dir2(b_of, z, b, b)
    L0b = Db_a + 0.5 * D2b_bb
    L1a = _dir1(a_of, z, b)
    L0a = _dir1(a_of, z, a) + 0.5 * _dir2(a_of, z, b, a)
    L1L1b = D2b_bb + _DB(system, z, 0, Db_b)
    out = (z + a * dt + b * w + 0.5 * Db_b * (w * w - dt) + L1a * zz + L0b * (w * dt - zz)
           + 0.5 * L0a * dt * dt + 0.5 * L1L1b * (w * w / 3.0 - dt) * w)
    return _finish(system, out, z, bshape, cfg, "taylor32")

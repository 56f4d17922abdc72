"""Stochastic partitioned Runge-Kutta methods.

Stage equations, for one noise channel (channels add up)::

    Q_i = q + dt sum_j a_ij dH/dp(Q_j, P_j) + dW sum_j b_ij dh/dp(Q_j, P_j)
    P_i = p - dt sum_j abar_ij dH/dq(Q_j, P_j) - dW sum_j bbar_ij dh/dq(Q_j, P_j)

followed by the weighted updates with ``alpha`` (drift) and ``beta``
(diffusion).  The order-3/2 variant for separable ``H = T(p) + U(q)`` and
``h = h(q)`` adds ``dZ/dt`` terms with their own coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from ._solve import SolverConfig, as_batch, explicit_result, newton, restore, solve_with_policy
from .model import ConfigurationError, PhaseState, SystemDef
from .quadrature import cardinal_integrals, weights_from_nodes

__all__ = [
    "SprkTableau",
    "Sprk32Tableau",
    "check_symplectic",
    "galerkin_to_sprk",
    "sprk_step",
    "sprk32_step",
    "milstein32_tableau",
    "format_tableau",
    "ConversionError",
]


class ConversionError(ValueError):
    """A Galerkin scheme that has no equivalent SPRK tableau."""


def _mat(x, s, label):
    x = np.array(x, dtype=float)
    if x.shape != (s, s):
        raise ValueError(f"{label} must be {s}x{s}, got {x.shape}")
    return x


def _vec(x, s, label):
    x = np.array(x, dtype=float).reshape(-1)
    if x.shape != (s,):
        raise ValueError(f"{label} must have length {s}")
    return x


@dataclass(frozen=True)
class SprkTableau:
    a: np.ndarray
    abar: np.ndarray
    b: np.ndarray
    bbar: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    name: str = ""

    def __post_init__(self):
        s = len(np.atleast_1d(self.alpha))
        for label in ("a", "abar", "b", "bbar"):
            object.__setattr__(self, label, _mat(getattr(self, label), s, label))
        for label in ("alpha", "beta"):
            object.__setattr__(self, label, _vec(getattr(self, label), s, label))

    @property
    def stages(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class Sprk32Tableau:
    """Order-3/2 tableau: ``a`` for positions, ``abar``/``bbar``/``lambar`` for momenta.

    ``alpha`` weights the kinetic term in the ``q`` update, ``alphabar`` the
    potential term in the ``p`` update; ``betabar`` and ``gammabar`` weight
    ``dW`` and ``dZ/dt`` in the ``p`` update.
    """

    a: np.ndarray
    abar: np.ndarray
    bbar: np.ndarray
    lambar: np.ndarray
    alpha: np.ndarray
    alphabar: np.ndarray
    betabar: np.ndarray
    gammabar: np.ndarray
    name: str = ""

    def __post_init__(self):
        s = len(np.atleast_1d(self.alpha))
        for label in ("a", "abar", "bbar", "lambar"):
            object.__setattr__(self, label, _mat(getattr(self, label), s, label))
        for label in ("alpha", "alphabar", "betabar", "gammabar"):
            object.__setattr__(self, label, _vec(getattr(self, label), s, label))

    @property
    def stages(self) -> int:
        return len(self.alpha)

    @property
    def explicit(self) -> bool:
        return (not np.any(np.triu(self.a)) and not np.any(np.triu(self.abar, 1))
                and not np.any(np.triu(self.bbar, 1)) and not np.any(np.triu(self.lambar, 1)))


def check_symplectic(tab: SprkTableau) -> float:
    """Largest violation of the four algebraic symplecticity conditions."""
    a, ab, b, bb, al, be = tab.a, tab.abar, tab.b, tab.bbar, tab.alpha, tab.beta
    outer_aa = np.outer(al, al)
    outer_ba = np.outer(be, al)
    outer_ab = np.outer(al, be)
    outer_bb = np.outer(be, be)
    c1 = al[:, None] * ab + al[None, :] * a.T - outer_aa
    c2 = be[:, None] * ab + al[None, :] * b.T - outer_ba
    c3 = al[:, None] * bb + be[None, :] * a.T - outer_ab
    c4 = be[:, None] * bb + be[None, :] * b.T - outer_bb
    return float(max(np.max(np.abs(c)) for c in (c1, c2, c3, c4)))


def galerkin_to_sprk(scheme, tol: float = 1e-13) -> SprkTableau:
    """Tableau of the SPRK method equivalent to a Galerkin scheme with ``r = s``.

    Needs one shared node set for drift and diffusion, ``r`` equal to the
    polynomial degree, drift weights equal to the integrals of the cardinal
    polynomials on the nodes, and no zero drift weight.
    """
    c = np.array(scheme.drift_rule.nodes, float)
    s = scheme.degree
    if len(c) != s:
        raise ConversionError(f"{scheme.name}: needs r = s, got r={len(c)}, s={s}")
    c_w = np.array(scheme.diffusion_rule.nodes, float)
    if len(c_w) != s or not np.allclose(c, c_w, rtol=0, atol=1e-15):
        raise ConversionError(f"{scheme.name}: drift and diffusion rules must share their nodes")
    alpha = np.array(scheme.drift_rule.weights, float)
    beta = np.array(scheme.diffusion_rule.weights, float)
    if np.any(alpha == 0):
        raise ConversionError(f"{scheme.name}: zero drift weight")
    if not np.allclose(alpha, weights_from_nodes(scheme.drift_rule.nodes), rtol=0, atol=tol):
        raise ConversionError(f"{scheme.name}: drift weights are not the interpolatory weights of the nodes")
    a = cardinal_integrals(scheme.drift_rule.nodes, scheme.drift_rule.nodes)
    # abar_ij = alpha_j (alpha_i - a_ji) / alpha_i, likewise with beta_j
    diff = alpha[:, None] - a.T
    abar = alpha[None, :] * diff / alpha[:, None]
    bbar = beta[None, :] * diff / alpha[:, None]
    b = beta[None, :] * a / alpha[None, :]
    return SprkTableau(a, abar, b, bbar, alpha, beta, name=scheme.name)


def milstein32_tableau() -> Sprk32Tableau:
    """The two-stage order-3/2 coefficient set for separable systems with ``h = h(q)``."""
    F = Fraction
    def f(rows):
        return np.array([[float(x) for x in r] for r in rows])
    return Sprk32Tableau(
        a=f([[F(0), F(0)], [F(2, 3), F(0)]]),
        abar=f([[F(1, 4), F(0)], [F(1, 4), F(3, 4)]]),
        bbar=f([[F(-1, 2), F(0)], [F(-1, 2), F(3, 2)]]),
        lambar=f([[F(3, 2), F(0)], [F(3, 2), F(-3, 2)]]),
        alpha=np.array([2 / 3, 1 / 3]),
        alphabar=np.array([1 / 4, 3 / 4]),
        betabar=np.array([-1 / 2, 3 / 2]),
        gammabar=np.array([3 / 2, -3 / 2]),
        name="SPRK32Milstein",
    )


# -- stepping ----------------------------------------------------------------

class _SprkSystem:
    def __init__(self, tab: SprkTableau, system: SystemDef, q, p, dt, dW):
        self.tab, self.sys = tab, system
        self.q, self.p, self.dt, self.dW = q, p, float(dt), dW
        self.s, self.N = tab.stages, q.shape[-1]

    def _terms(self, Q, P, rows):
        Hp = self.sys.H.dp(Q, P)
        Hq = self.sys.H.dq(Q, P)
        hp = np.zeros_like(Q)
        hq = np.zeros_like(Q)
        dW = self.dW[rows]
        for m, hm in enumerate(self.sys.h):
            w = dW[:, m, None, None]
            hq += w * hm.dq(Q, P)
            if not self.sys.h_independent_of_p:
                hp += w * hm.dp(Q, P)
        return Hp, Hq, hp, hq

    def split(self, x):
        B = x.shape[0]
        s, N = self.s, self.N
        return x[:, : s * N].reshape(B, s, N), x[:, s * N:].reshape(B, s, N)

    def __call__(self, x, rows):
        t, dt = self.tab, self.dt
        Q, P = self.split(x)
        Hp, Hq, hp, hq = self._terms(Q, P, rows)
        RQ = Q - self.q[rows][:, None] - dt * np.einsum("ij,bjn->bin", t.a, Hp) - np.einsum("ij,bjn->bin", t.b, hp)
        RP = P - self.p[rows][:, None] + dt * np.einsum("ij,bjn->bin", t.abar, Hq) + np.einsum("ij,bjn->bin", t.bbar, hq)
        return np.concatenate([RQ.reshape(x.shape[0], -1), RP.reshape(x.shape[0], -1)], axis=1)

    def update(self, x, rows):
        t, dt = self.tab, self.dt
        Q, P = self.split(x)
        Hp, Hq, hp, hq = self._terms(Q, P, rows)
        q1 = self.q[rows] + dt * np.einsum("i,bin->bn", t.alpha, Hp) + np.einsum("i,bin->bn", t.beta, hp)
        p1 = self.p[rows] - dt * np.einsum("i,bin->bn", t.alpha, Hq) - np.einsum("i,bin->bn", t.beta, hq)
        return q1, p1


def sprk_step(tab: SprkTableau, system: SystemDef, z_k: PhaseState, dt, dW, cfg: Optional[SolverConfig] = None):
    """One SPRK step; returns ``(z_next, stats)``.

    Stages start from ``Q_i = q_k``, ``P_i = p_k`` and are solved with the
    finite-difference Newton iteration.
    """
    cfg = cfg or SolverConfig()
    q, p, dW, _, bshape = as_batch(z_k, dW, system.noise_channels)
    B, s = q.shape[0], tab.stages
    x0 = np.concatenate([np.tile(q, (1, s)), np.tile(p, (1, s))], axis=1)
    rows = np.arange(B)

    def attempt(dW_, _dZ):
        ss = _SprkSystem(tab, system, q, p, dt, dW_)
        x, iters, res, failed = newton(ss, x0, cfg)
        q1, p1 = ss.update(x, rows)
        return q1, p1, iters, res, failed, None

    q1, p1, stats, _ = solve_with_policy(attempt, q, p, dW, cfg, tab.name or "sprk")
    return restore(q1, p1, bshape), stats


def _check_sprk32_system(system: SystemDef):
    if not (system.separable and system.h_independent_of_p):
        raise ConfigurationError("the order-3/2 method needs a separable H and h = h(q)")
    if system.noise_channels != 1:
        raise ConfigurationError("the order-3/2 method supports a single noise channel")


def sprk32_step(tab: Sprk32Tableau, system: SystemDef, z_k: PhaseState, dt, dW, dZ,
                cfg: Optional[SolverConfig] = None):
    """One step of the order-3/2 method; returns ``(z_next, stats)``.

    For separable systems ``dH/dp`` is evaluated as ``T'(P)`` and ``dH/dq``
    as ``U'(Q)``.  Lower-triangular tableaus are evaluated stage by stage
    without Newton iterations.
    """
    if dZ is None:
        raise ConfigurationError("the order-3/2 method needs dZ increments")
    _check_sprk32_system(system)
    cfg = cfg or SolverConfig()
    q, p, dW, dZ, bshape = as_batch(z_k, dW, 1, dZ)
    B, s, N = q.shape[0], tab.stages, q.shape[1]
    dt = float(dt)
    h = system.h[0]

    def coeffs(dW_, dZ_):
        z_over = dZ_[:, 0] / dt if dt != 0 else np.zeros(B)
        # per-row weights of h'(Q_j) in stage i and in the final update
        stage = dW_[:, 0, None, None] * tab.bbar + z_over[:, None, None] * tab.lambar
        final = dW_[:, 0, None] * tab.betabar + z_over[:, None] * tab.gammabar
        return stage, final

    def finish_update(Q, P, final):
        Tp = system.H.dp(Q, P)
        Uq = system.H.dq(Q, P)
        hq = h.dq(Q, P)
        q1 = q + dt * np.einsum("i,bin->bn", tab.alpha, Tp)
        p1 = p - dt * np.einsum("i,bin->bn", tab.alphabar, Uq) - np.einsum("bi,bin->bn", final, hq)
        return q1, p1

    if tab.explicit:
        stage, final = coeffs(dW, dZ)
        Tp = np.zeros((B, s, N))
        Uq = np.zeros((B, s, N))
        hq = np.zeros((B, s, N))
        for i in range(s):
            Qi = q + dt * np.einsum("j,bjn->bn", tab.a[i, :i], Tp[:, :i])
            Uq[:, i] = system.H.dq(Qi, p)
            hq[:, i] = h.dq(Qi, p)
            Pi = (p - dt * np.einsum("j,bjn->bn", tab.abar[i, : i + 1], Uq[:, : i + 1])
                  - np.einsum("bj,bjn->bn", stage[:, i, : i + 1], hq[:, : i + 1]))
            Tp[:, i] = system.H.dp(q, Pi)
        q1 = q + dt * np.einsum("i,bin->bn", tab.alpha, Tp)
        p1 = p - dt * np.einsum("i,bin->bn", tab.alphabar, Uq) - np.einsum("bi,bin->bn", final, hq)
        q1, p1, stats = explicit_result(q1, p1, q, p, cfg, tab.name or "sprk32")
        return restore(q1, p1, bshape), stats

    x0 = np.concatenate([np.tile(q, (1, s)), np.tile(p, (1, s))], axis=1)

    def attempt(dW_, dZ_):
        stage, final = coeffs(dW_, dZ_)

        def F(x, rows):
            Bx = x.shape[0]
            Q = x[:, : s * N].reshape(Bx, s, N)
            P = x[:, s * N:].reshape(Bx, s, N)
            Tp = system.H.dp(Q, P)
            Uq = system.H.dq(Q, P)
            hq = h.dq(Q, P)
            RQ = Q - q[rows][:, None] - dt * np.einsum("ij,bjn->bin", tab.a, Tp)
            RP = (P - p[rows][:, None] + dt * np.einsum("ij,bjn->bin", tab.abar, Uq)
                  + np.einsum("bij,bjn->bin", stage[rows], hq))
            return np.concatenate([RQ.reshape(Bx, -1), RP.reshape(Bx, -1)], axis=1)

        x, iters, res, failed = newton(F, x0, cfg)
        Q = x[:, : s * N].reshape(B, s, N)
        P = x[:, s * N:].reshape(B, s, N)
        q1, p1 = finish_update(Q, P, final)
        return q1, p1, iters, res, failed, None

    q1, p1, stats, _ = solve_with_policy(attempt, q, p, dW, cfg, tab.name or "sprk32", dZ)
    return restore(q1, p1, bshape), stats


# -- printing ------------------------------------------------------------------

def fraction_text(x: float) -> str:
    """``x`` as a small-denominator fraction when exact to 1e-13, else ``%.6g``."""
    fr = Fraction(x).limit_denominator(1000)
    if abs(float(fr) - x) < 1e-13:
        return str(fr)
    return f"{x:.6g}"


def _block(label, M):
    M = np.atleast_2d(M)
    cells = [[fraction_text(v) for v in row] for row in M]
    width = max(len(c) for row in cells for c in row)
    lines = [f"{label}:"]
    for row in cells:
        lines.append("  " + "  ".join(c.rjust(width) for c in row))
    return lines


def format_tableau(tab) -> str:
    """Aligned coefficient tables; SPRK tableaus also report the symplecticity violation."""
    lines = [f"tableau {tab.name or '(unnamed)'}  stages={tab.stages}"]
    if isinstance(tab, SprkTableau):
        for label in ("a", "abar", "b", "bbar"):
            lines += _block(label, getattr(tab, label))
        for label in ("alpha", "beta"):
            lines += _block(label, getattr(tab, label)[None, :])
        lines.append(f"symplectic condition violation: {check_symplectic(tab):.3e}")
    else:
        for label in ("a", "abar", "bbar", "lambar"):
            lines += _block(label, getattr(tab, label))
        for label in ("alpha", "alphabar", "betabar", "gammabar"):
            lines += _block(label, getattr(tab, label)[None, :])
    return "\n".join(lines)

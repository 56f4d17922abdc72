"""Registry of the named integrators and their structure-exploiting steppers.

Names follow the ``PsNrQu`` pattern: polynomial degree ``s``, ``r``
quadrature nodes, quadrature order ``u``, then the rule family (Gau, Lob,
Otr, Mil, Rec).  A second ``NrQu`` block names the rule used for the
Stratonovich integral when it differs from the drift rule.

``fast_step`` evaluates the reduced forms: explicit updates where the method
is explicit for the given system structure, and the smallest implicit
subsystem otherwise.  Every reduced form agrees with the generic Galerkin
stepper to solver tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import galerkin, sprk
from ._solve import SolverConfig, StepStats, as_batch, newton, restore, solve_with_policy
from .galerkin import GalerkinScheme
from .model import ConfigurationError, PhaseState, SystemDef

__all__ = ["SchemeInfo", "SCHEME_IDS", "build", "fast_step", "canonical_id", "generic_step"]


@dataclass(frozen=True)
class SchemeInfo:
    """Descriptor plus capability flags.

    ``explicit_when`` is ``None`` (always implicit), ``"separable"`` or
    ``"separable-additive"`` (separable ``H`` and constant ``dh/dq``).
    """

    id: str
    scheme: object
    tableau: Optional[sprk.SprkTableau]
    explicit_when: Optional[str]
    requires_h_independent_of_p: bool
    supports_multichannel: bool = True
    description: str = ""

    @property
    def explicit_for_separable(self) -> bool:
        return self.explicit_when == "separable"

    @property
    def is_order32(self) -> bool:
        return isinstance(self.scheme, sprk.Sprk32Tableau)

    def is_explicit_for(self, system: SystemDef) -> bool:
        if self.explicit_when == "separable":
            return system.separable
        if self.explicit_when == "separable-additive":
            return system.separable and system.additive_noise
        return False

    def check(self, system: SystemDef) -> None:
        if self.requires_h_independent_of_p and not system.h_independent_of_p:
            raise ConfigurationError(f"{self.id} requires noise Hamiltonians independent of p")
        if not self.supports_multichannel and system.noise_channels != 1:
            raise ConfigurationError(f"{self.id} supports a single noise channel only")
        if self.is_order32 and not system.separable:
            raise ConfigurationError(f"{self.id} requires a separable Hamiltonian")


_REGISTRY = {
    # id: (degree, drift rule, diffusion rule, explicit_when, h(q) only, description)
    "P1N1Q2Gau": (1, "midpoint", None, None, False, "stochastic midpoint"),
    "P2N2Q2Lob": (2, "trapezoidal", None, "separable", False, "stochastic Stormer-Verlet"),
    "P1N2Q2Lob": (1, "trapezoidal", None, "separable", False, "stochastic trapezoidal"),
    "P1N3Q4Lob": (1, "simpson", None, None, False, "Simpson rule, linear polynomials"),
    "P1N2Q2Otr": (1, "open-trapezoidal", None, None, False, "open trapezoidal, linear polynomials"),
    "P2N2Q2Otr": (2, "open-trapezoidal", None, None, False, "open trapezoidal, quadratic polynomials"),
    "P1N3Q4Mil": (1, "milne", None, None, False, "Milne rule, linear polynomials"),
    "P1N1Q1Rec": (1, "rectangle", "rectangle", "separable", True, "stochastic symplectic Euler"),
    "P1N1Q1RecN2Q2Lob": (1, "rectangle", "trapezoidal", "separable", True, "rectangle drift, trapezoidal noise"),
    "P1N1Q1RecN1Q2Gau": (1, "rectangle", "midpoint", "separable-additive", True, "rectangle drift, midpoint noise"),
    "P2N2Q2LobN1Q1Rec": (2, "trapezoidal", "rectangle", "separable", True, "Stormer-Verlet drift, rectangle noise"),
    "P1N1Q2GauN2Q2Lob": (1, "midpoint", "trapezoidal", None, True, "midpoint drift, trapezoidal noise"),
    "P1N2Q2LobN1Q2Gau": (1, "trapezoidal", "midpoint", "separable-additive", True, "trapezoidal drift, midpoint noise"),
}
SCHEME_IDS = tuple(_REGISTRY) + ("SPRK32Milstein",)
_LOOKUP = {k.lower(): k for k in SCHEME_IDS}


def canonical_id(name: str) -> str:
    key = name.strip().lower()
    if key not in _LOOKUP:
        raise KeyError(f"unknown scheme {name!r}; choose from {', '.join(SCHEME_IDS)}")
    return _LOOKUP[key]


_CACHE: dict = {}


def build(name: str) -> SchemeInfo:
    """Descriptor for a registry id (case-insensitive)."""
    sid = canonical_id(name)
    if sid in _CACHE:
        return _CACHE[sid]
    if sid == "SPRK32Milstein":
        info = SchemeInfo(sid, sprk.milstein32_tableau(), None, "separable", True, False,
                          "two-stage order-3/2 partitioned method")
    else:
        degree, drift, diff, explicit_when, h_of_q, desc = _REGISTRY[sid]
        sc = GalerkinScheme.from_names(degree, drift, diff, requires_h_independent_of_p=h_of_q, name=sid)
        try:
            tab = sprk.galerkin_to_sprk(sc)
        except sprk.ConversionError:
            tab = None
        info = SchemeInfo(sid, sc, tab, explicit_when, h_of_q, True, desc)
    _CACHE[sid] = info
    return info


# -- reduced forms ---------------------------------------------------------------

class _Ctx:
    """Batch data for one step plus the drift/noise force and velocity terms.

    ``F = dt dH/dq + sum_m dW_m dh_m/dq`` and ``V = dt dH/dp + sum_m dW_m dh_m/dp``;
    the ``d``/``w`` suffixes select the drift or noise part alone.
    """

    def __init__(self, system: SystemDef, q, p, dt, dW, cfg: SolverConfig):
        self.sys, self.q, self.p, self.dt, self.dW, self.cfg = system, q, p, float(dt), dW, cfg
        B = q.shape[0]
        self.rows = np.arange(B)
        self.iters = np.zeros(B, int)
        self.res = np.zeros(B)
        self.failed = np.zeros(B, bool)

    def Fd(self, Q, P):
        return self.dt * self.sys.H.dq(Q, P)

    def Vd(self, Q, P):
        return self.dt * self.sys.H.dp(Q, P)

    def Fw(self, Q, P, rows):
        out = np.zeros(np.shape(Q))
        for m, hm in enumerate(self.sys.h):
            out += self.dW[rows, m, None] * hm.dq(Q, P)
        return out

    def Vw(self, Q, P, rows):
        out = np.zeros(np.shape(Q))
        if self.sys.h_independent_of_p:
            return out
        for m, hm in enumerate(self.sys.h):
            out += self.dW[rows, m, None] * hm.dp(Q, P)
        return out

    def F(self, Q, P, rows):
        return self.Fd(Q, P) + self.Fw(Q, P, rows)

    def V(self, Q, P, rows):
        return self.Vd(Q, P) + self.Vw(Q, P, rows)

    def solve(self, G, x0):
        """Newton on ``G(x, rows)``; counts accumulate across sub-solves."""
        x, it, res, failed = newton(G, x0, self.cfg)
        self.iters += it
        self.res = np.maximum(self.res, res)
        self.failed |= failed
        return x

    def result(self, q1, p1):
        return q1, p1, self.iters, self.res, self.failed


def _split(x, n, N):
    return [x[:, i * N:(i + 1) * N] for i in range(n)]


def _midpoint(c: _Ctx, separable):
    q, p, N = c.q, c.p, c.q.shape[1]
    if separable:
        def p_of(q1, rows):
            return p[rows] - c.F(0.5 * (q[rows] + q1), p[rows], rows)

        def G(x, rows):
            Pm = 0.5 * (p[rows] + p_of(x, rows))
            return x - q[rows] - c.V(q[rows], Pm, rows)
        q1 = c.solve(G, q.copy())
        return c.result(q1, p_of(q1, c.rows))

    def G(x, rows):
        q1, p1 = _split(x, 2, N)
        Qm, Pm = 0.5 * (q[rows] + q1), 0.5 * (p[rows] + p1)
        return np.concatenate([q1 - q[rows] - c.V(Qm, Pm, rows), p1 - p[rows] + c.F(Qm, Pm, rows)], axis=1)
    q1, p1 = _split(c.solve(G, np.concatenate([q, p], axis=1)), 2, N)
    return c.result(q1, p1)


def _stormer_verlet(c: _Ctx, separable, noise_rect=False):
    """P2N2Q2Lob, and with ``noise_rect`` the variant with all noise at the end point."""
    q, p, rows = c.q, c.p, c.rows
    half_w = 0.0 if noise_rect else 0.5
    if separable:
        P1 = p - 0.5 * c.Fd(q, p) - half_w * c.Fw(q, p, rows)
    else:
        P1 = c.solve(lambda x, r: x - p[r] + 0.5 * c.Fd(q[r], x) + half_w * c.Fw(q[r], x, r), p.copy())
    if separable:
        q1 = q + c.Vd(q, P1) + (0.0 if noise_rect else c.Vw(q, P1, rows))
    else:
        def G(x, r):
            v = 0.5 * (c.Vd(q[r], P1[r]) + c.Vd(x, P1[r]))
            if not noise_rect:
                v = v + 0.5 * (c.Vw(q[r], P1[r], r) + c.Vw(x, P1[r], r))
            return x - q[r] - v
        q1 = c.solve(G, q.copy())
    p1 = P1 - 0.5 * c.Fd(q1, P1) - (1.0 if noise_rect else 0.5) * c.Fw(q1, P1, rows)
    return c.result(q1, p1)


def _trapezoidal(c: _Ctx, separable, noise_mid=False):
    """P1N2Q2Lob, and with ``noise_mid`` the midpoint-noise variant P1N2Q2LobN1Q2Gau."""
    q, p, rows, N = c.q, c.p, c.rows, c.q.shape[1]

    def noise_terms(r, q1, P1, P2):
        # noise force entering the p_k and p_{k+1} relations
        if noise_mid:
            f = 0.5 * c.Fw(0.5 * (q[r] + q1), p[r], r)
            return f, f
        return 0.5 * c.Fw(q[r], P1, r), 0.5 * c.Fw(q1, P2, r)

    if separable and (not noise_mid or c.sys.additive_noise):
        f0, _ = noise_terms(rows, q, p, p)
        P1 = p - 0.5 * c.Fd(q, p) - f0
        q1 = q + c.V(q, P1, rows) if not noise_mid else q + c.Vd(q, P1)
        _, f1 = noise_terms(rows, q1, P1, P1)
        return c.result(q1, P1 - 0.5 * c.Fd(q1, P1) - f1)
    if separable:
        # midpoint noise, non-additive: P1 = P2 explicit in q_{k+1}
        def P_of(q1, r):
            f0, _ = noise_terms(r, q1, None, None)
            return p[r] - 0.5 * c.Fd(q[r], p[r]) - f0

        q1 = c.solve(lambda x, r: x - q[r] - c.Vd(q[r], P_of(x, r)), q.copy())
        P1 = P_of(q1, rows)
        _, f1 = noise_terms(rows, q1, P1, P1)
        return c.result(q1, P1 - 0.5 * c.Fd(q1, P1) - f1)

    def vel(Q, P, r):
        return c.Vd(Q, P) if noise_mid else c.V(Q, P, r)

    def G(x, r):
        P1, P2, q1 = _split(x, 3, N)
        f0, _ = noise_terms(r, q1, P1, P2)
        return np.concatenate([
            0.5 * (P1 + P2) + 0.5 * c.Fd(q[r], P1) + f0 - p[r],
            q1 - q[r] - vel(q[r], P1, r),
            q1 - q[r] - vel(q1, P2, r),
        ], axis=1)
    P1, P2, q1 = _split(c.solve(G, np.concatenate([p, p, q], axis=1)), 3, N)
    _, f1 = noise_terms(rows, q1, P1, P2)
    return c.result(q1, 0.5 * (P1 + P2) - 0.5 * c.Fd(q1, P2) - f1)


# interior nodes and weights of the linear-polynomial three-node methods in
# the separable reduction: P1 = p - sum w_in F(Q_i), p1 = p - sum w F(Q_i)
_THREE_NODE = {
    "simpson": ((0.0, 0.5, 1.0), (1 / 6, 1 / 3, 0.0), (1 / 6, 2 / 3, 1 / 6)),
    "milne": ((0.25, 0.5, 0.75), (1 / 2, -1 / 6, 1 / 6), (2 / 3, -1 / 3, 2 / 3)),
}


def _linear_three_node(c: _Ctx, rule):
    """P1N3Q4Lob / P1N3Q4Mil for separable systems: a single unknown ``q_{k+1}``."""
    q, p, rows = c.q, c.p, c.rows
    nodes, w_in, w = _THREE_NODE[rule]

    def forces(q1, r):
        return [c.F((1 - t) * q[r] + t * q1, p[r], r) for t in nodes]

    def P_of(q1, r):
        return p[r] - sum(wi * f for wi, f in zip(w_in, forces(q1, r)))

    q1 = c.solve(lambda x, r: x - q[r] - c.V(q[r], P_of(x, r), r), q.copy())
    p1 = p - sum(wi * f for wi, f in zip(w, forces(q1, rows)))
    return c.result(q1, p1)


def _open_trapezoidal(c: _Ctx, separable):
    q, p, rows, N = c.q, c.p, c.rows, c.q.shape[1]

    def nodes(r, q1):
        return (2 * q[r] + q1) / 3, (q[r] + 2 * q1) / 3

    if separable:
        def P_of(q1, r):
            Q1, Q2 = nodes(r, q1)
            return p[r] - c.F(Q1, p[r], r) / 3 - c.F(Q2, p[r], r) / 6

        q1 = c.solve(lambda x, r: x - q[r] - c.V(q[r], P_of(x, r), r), q.copy())
        P1 = P_of(q1, rows)
        Q1, Q2 = nodes(rows, q1)
        return c.result(q1, P1 - c.F(Q1, P1, rows) / 6 - c.F(Q2, P1, rows) / 3)

    def G(x, r):
        P1, P2, q1 = _split(x, 3, N)
        Q1, Q2 = nodes(r, q1)
        return np.concatenate([
            0.5 * (P1 + P2) + c.F(Q1, P1, r) / 3 + c.F(Q2, P2, r) / 6 - p[r],
            q1 - q[r] - c.V(Q1, P1, r),
            q1 - q[r] - c.V(Q2, P2, r),
        ], axis=1)
    P1, P2, q1 = _split(c.solve(G, np.concatenate([p, p, q], axis=1)), 3, N)
    Q1, Q2 = nodes(rows, q1)
    return c.result(q1, 0.5 * (P1 + P2) - c.F(Q1, P1, rows) / 6 - c.F(Q2, P2, rows) / 3)


def _open_trapezoidal_quadratic(c: _Ctx, separable):
    """P2N2Q2Otr through its tableau: a11=abar22=1/2, a12=abar12=-1/6, a21=abar21=2/3, a22=abar11=0."""
    q, p, rows, N = c.q, c.p, c.rows, c.q.shape[1]
    if separable:
        # P1 = p + F(Q2)/6 with Q2 = q + 2/3 V(P1)
        P1 = c.solve(lambda x, r: x - p[r] - c.F(q[r] + 2 / 3 * c.V(q[r], x, r), p[r], r) / 6, p.copy())
        V1 = c.V(q, P1, rows)
        Q2 = q + 2 / 3 * V1
        F2 = c.F(Q2, p, rows)

        def G(x, r):
            Q1 = q[r] + 0.5 * V1[r] - c.V(q[r], x, r) / 6
            return x - p[r] + 2 / 3 * c.F(Q1, p[r], r) + 0.5 * F2[r]
        P2 = c.solve(G, p.copy())
        Q1 = q + 0.5 * V1 - c.V(q, P2, rows) / 6
        q1 = q + 0.5 * (V1 + c.V(q, P2, rows))
        return c.result(q1, p - 0.5 * (c.F(Q1, p, rows) + F2))

    def stages(x, r):
        Q1, P1, P2 = _split(x, 3, N)
        Q2 = q[r] + 2 / 3 * c.V(Q1, P1, r)
        return Q1, P1, P2, Q2

    def G(x, r):
        Q1, P1, P2, Q2 = stages(x, r)
        return np.concatenate([
            Q1 - q[r] - 0.5 * c.V(Q1, P1, r) + c.V(Q2, P2, r) / 6,
            P1 - p[r] - c.F(Q2, P2, r) / 6,
            P2 - p[r] + 2 / 3 * c.F(Q1, P1, r) + 0.5 * c.F(Q2, P2, r),
        ], axis=1)
    x = c.solve(G, np.concatenate([q, p, p], axis=1))
    Q1, P1, P2, Q2 = stages(x, rows)
    q1 = q + 0.5 * (c.V(Q1, P1, rows) + c.V(Q2, P2, rows))
    p1 = p - 0.5 * (c.F(Q1, P1, rows) + c.F(Q2, P2, rows))
    return c.result(q1, p1)


def _rect(c: _Ctx, separable, noise):
    """Rectangle drift (node 1) with rectangle, trapezoidal or midpoint noise; needs h = h(q)."""
    q, p, rows = c.q, c.p, c.rows

    def P_of(q1, r):
        if noise == "rect":
            return p[r]
        if noise == "trap":
            return p[r] - 0.5 * c.Fw(q[r], p[r], r)
        return p[r] - 0.5 * c.Fw(0.5 * (q[r] + q1), p[r], r)

    explicit_P = noise != "mid" or c.sys.additive_noise
    if separable and explicit_P:
        P1 = P_of(q, rows)
        q1 = q + c.Vd(q, P1)
    elif explicit_P:
        P1 = P_of(q, rows)
        q1 = c.solve(lambda x, r: x - q[r] - c.Vd(x, P1[r]), q.copy())
    else:
        q1 = c.solve(lambda x, r: x - q[r] - c.Vd(x, P_of(x, r)), q.copy())
        P1 = P_of(q1, rows)
    if noise == "rect":
        fw = c.Fw(q1, p, rows)
    elif noise == "trap":
        fw = 0.5 * (c.Fw(q, p, rows) + c.Fw(q1, p, rows))
    else:
        fw = c.Fw(0.5 * (q + q1), p, rows)
    return c.result(q1, p - c.Fd(q1, P1) - fw)


def _midpoint_trap_noise(c: _Ctx, separable):
    """P1N1Q2GauN2Q2Lob: midpoint drift, trapezoidal noise."""
    q, p, rows, N = c.q, c.p, c.rows, c.q.shape[1]

    def P_of(q1, p1, r):
        return 0.5 * (p[r] + p1) + 0.25 * (c.Fw(q1, p[r], r) - c.Fw(q[r], p[r], r))

    if separable:
        def p_of(q1, r):
            return p[r] - c.Fd(0.5 * (q[r] + q1), p[r]) - 0.5 * (c.Fw(q[r], p[r], r) + c.Fw(q1, p[r], r))

        q1 = c.solve(lambda x, r: x - q[r] - c.Vd(q[r], P_of(x, p_of(x, r), r)), q.copy())
        return c.result(q1, p_of(q1, rows))

    def G(x, r):
        q1, p1 = _split(x, 2, N)
        Qm, P1 = 0.5 * (q[r] + q1), P_of(q1, p1, r)
        return np.concatenate([
            q1 - q[r] - c.Vd(Qm, P1),
            p1 - p[r] + c.Fd(Qm, P1) + 0.5 * (c.Fw(q[r], p[r], r) + c.Fw(q1, p[r], r)),
        ], axis=1)
    q1, p1 = _split(c.solve(G, np.concatenate([q, p], axis=1)), 2, N)
    return c.result(q1, p1)


_FAST: dict = {
    "P1N1Q2Gau": lambda c, sep: _midpoint(c, sep),
    "P2N2Q2Lob": lambda c, sep: _stormer_verlet(c, sep),
    "P1N2Q2Lob": lambda c, sep: _trapezoidal(c, sep),
    "P1N2Q2Otr": lambda c, sep: _open_trapezoidal(c, sep),
    "P2N2Q2Otr": lambda c, sep: _open_trapezoidal_quadratic(c, sep),
    "P1N1Q1Rec": lambda c, sep: _rect(c, sep, "rect"),
    "P1N1Q1RecN2Q2Lob": lambda c, sep: _rect(c, sep, "trap"),
    "P1N1Q1RecN1Q2Gau": lambda c, sep: _rect(c, sep, "mid"),
    "P2N2Q2LobN1Q1Rec": lambda c, sep: _stormer_verlet(c, sep, noise_rect=True),
    "P1N1Q2GauN2Q2Lob": lambda c, sep: _midpoint_trap_noise(c, sep),
    "P1N2Q2LobN1Q2Gau": lambda c, sep: _trapezoidal(c, sep, noise_mid=True),
}


def generic_step(name: str, system: SystemDef, z_k: PhaseState, dt, dW, cfg: Optional[SolverConfig] = None,
                 dZ=None):
    """Step with the general Galerkin solver (or the order-3/2 tableau); returns ``(z, stats)``."""
    info = build(name)
    info.check(system)
    if info.is_order32:
        return sprk.sprk32_step(info.scheme, system, z_k, dt, dW, dZ, cfg)
    z, _, stats = galerkin.step(info.scheme, system, z_k, dt, dW, cfg)
    return z, stats


def fast_step(name: str, system: SystemDef, z_k: PhaseState, dt, dW, cfg: Optional[SolverConfig] = None,
              dZ=None):
    """One step of a named scheme through its reduced form; returns ``(z, stats)``."""
    info = build(name)
    info.check(system)
    cfg = cfg or SolverConfig()
    if info.is_order32:
        return sprk.sprk32_step(info.scheme, system, z_k, dt, dW, dZ, cfg)
    sid = info.id
    separable = bool(system.separable)
    if sid in ("P1N3Q4Lob", "P1N3Q4Mil") and not separable:
        return generic_step(sid, system, z_k, dt, dW, cfg)
    q, p, dW, _, bshape = as_batch(z_k, dW, system.noise_channels)
    if dt == 0 and not np.any(dW):
        return restore(q.copy(), p.copy(), bshape), StepStats.explicit(q.shape[0])

    def attempt(dW_, _dZ):
        c = _Ctx(system, q, p, dt, dW_, cfg)
        if sid == "P1N3Q4Lob":
            out = _linear_three_node(c, "simpson")
        elif sid == "P1N3Q4Mil":
            out = _linear_three_node(c, "milne")
        else:
            out = _FAST[sid](c, separable)
        return (*out, None)

    q1, p1, stats, _ = solve_with_policy(attempt, q, p, dW, cfg, sid)
    return restore(q1, p1, bshape), stats


def stepper(name: str) -> Callable:
    """``f(system, z, dt, dW, cfg=None, dZ=None) -> (z, stats)`` for a registry id."""
    sid = canonical_id(name)

    def f(system, z, dt, dW, cfg=None, dZ=None):
        return fast_step(sid, system, z, dt, dW, cfg, dZ)
    f.__name__ = sid
    return f

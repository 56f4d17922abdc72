"""General stochastic Galerkin variational integrator.

The trajectory over one step is a degree-``s`` polynomial in ``q`` with
control values ``q^0 = q_k, q^1, .., q^s`` and free momenta ``P_i`` at the
drift quadrature nodes.  The drift integral uses the rule ``(alpha, c)``,
the Stratonovich integral the rule ``(beta, c~)``.  Unknowns are
``q^1..q^s`` and ``P_1..P_r``; the equations are the stationarity
conditions of the discrete Hamiltonian with respect to ``q^0..q^{s-1}`` and
the discrete Legendre transform at each drift node.  After the solve,
``q_{k+1} = q^s`` and ``p_{k+1}`` follows explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._solve import SolverConfig, StepStats, as_batch, newton, restore, solve_with_policy
from .model import ConfigurationError, PhaseState, SystemDef, hessian_blocks
from .quadrature import LagrangeBasis, QuadratureRule, named_rule

__all__ = ["GalerkinScheme", "StageVector", "residual", "step", "stage_system"]


class GalerkinScheme:
    """Polynomial degree plus drift and diffusion quadrature rules.

    Drift weights must be non-zero (nodes with a zero drift weight carry no
    momentum unknown and are left out).  A diffusion node without a matching
    drift node is only meaningful when the noise Hamiltonians do not depend on
    ``p``; such schemes have ``requires_h_independent_of_p`` set.
    """

    def __init__(self, degree: int, drift_rule: QuadratureRule, diffusion_rule: Optional[QuadratureRule] = None,
                 *, control_points=None, requires_h_independent_of_p: Optional[bool] = None, name: str = ""):
        if diffusion_rule is None:
            diffusion_rule = drift_rule
        if any(w == 0 for w in drift_rule.weights):
            raise ValueError("drift rule weights must be non-zero; drop zero-weight nodes")
        self.basis = LagrangeBasis(degree, control_points)
        self.drift_rule = drift_rule
        self.diffusion_rule = diffusion_rule
        self.name = name or f"P{degree}"

        c_d = np.array(drift_rule.nodes, float)
        c_w = np.array(diffusion_rule.nodes, float)
        self.alpha = np.array(drift_rule.weights, float)
        self.beta = np.array(diffusion_rule.weights, float)
        self.L_drift = self.basis.values(c_d)
        self.D_drift = self.basis.derivatives(c_d)
        self.L_diff = self.basis.values(c_w)

        # diffusion node j -> drift node index, -1 if the node has no momentum unknown
        self.shared = np.array([int(np.flatnonzero(np.isclose(c_d, c))[0]) if np.any(np.isclose(c_d, c)) else -1
                                for c in c_w])
        # weight ratio beta/alpha entering the Legendre-transform rows
        self.legendre_ratio = np.zeros(len(c_d))
        for j, i in enumerate(self.shared):
            if i >= 0:
                self.legendre_ratio[i] = self.beta[j] / self.alpha[i]

        same_rule = (len(c_d) == len(c_w) and np.allclose(c_d, c_w) and np.allclose(self.alpha, self.beta))
        if requires_h_independent_of_p is None:
            requires_h_independent_of_p = not same_rule
        if not requires_h_independent_of_p and np.any(self.shared < 0):
            raise ValueError("diffusion nodes off the drift nodes need h independent of p")
        self.requires_h_independent_of_p = bool(requires_h_independent_of_p)

    @classmethod
    def from_names(cls, degree: int, drift: str, diffusion: Optional[str] = None, **kw) -> "GalerkinScheme":
        return cls(degree, named_rule(drift), named_rule(diffusion) if diffusion else None, **kw)

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def r_drift(self) -> int:
        return len(self.alpha)

    def n_unknowns(self, N: int) -> int:
        return (self.degree + self.r_drift) * N

    def __repr__(self):
        return (f"GalerkinScheme({self.name!r}, s={self.degree}, drift={self.drift_rule.name or self.drift_rule.nodes}, "
                f"diffusion={self.diffusion_rule.name or self.diffusion_rule.nodes})")

    def check_compatible(self, system: SystemDef) -> None:
        if self.requires_h_independent_of_p and not system.h_independent_of_p:
            raise ConfigurationError(f"{self.name} requires noise Hamiltonians independent of p")


@dataclass(frozen=True)
class StageVector:
    """Control values ``q^1..q^s`` (``(..., s, N)``) and stage momenta ``P_i`` (``(..., r, N)``)."""

    q_controls: np.ndarray
    P_stages: np.ndarray

    def pack(self) -> np.ndarray:
        B = self.q_controls.shape[0]
        return np.concatenate([self.q_controls.reshape(B, -1), self.P_stages.reshape(B, -1)], axis=1)

    @classmethod
    def unpack(cls, x, s: int, r: int, N: int) -> "StageVector":
        B = x.shape[0]
        return cls(x[:, : s * N].reshape(B, s, N), x[:, s * N:].reshape(B, r, N))


class _StageSystem:
    """Residual, Jacobian and momentum update of the stage equations for one batch."""

    def __init__(self, scheme: GalerkinScheme, system: SystemDef, q, p, dt, dW):
        self.sc, self.sys = scheme, system
        self.q, self.p, self.dt, self.dW = q, p, float(dt), dW
        self.s, self.r, self.N = scheme.degree, scheme.r_drift, q.shape[-1]
        self.need_hp = not system.h_independent_of_p

    def split(self, x, rows):
        B = x.shape[0]
        qc = x[:, : self.s * self.N].reshape(B, self.s, self.N)
        P = x[:, self.s * self.N:].reshape(B, self.r, self.N)
        qall = np.concatenate([self.q[rows][:, None, :], qc], axis=1)
        return qall, P

    def _diffusion_momenta(self, P, rows):
        sh = self.sc.shared
        Pw = np.empty((P.shape[0], len(sh), self.N))
        for j, i in enumerate(sh):
            Pw[:, j] = P[:, i] if i >= 0 else self.p[rows]
        return Pw

    def forces(self, x, rows):
        """Per-row rows of the momentum equations for mu = 0..s (before adding p_k)."""
        sc, dt = self.sc, self.dt
        qall, P = self.split(x, rows)
        Qd = np.einsum("im,bmn->bin", sc.L_drift, qall)
        Qw = np.einsum("jm,bmn->bjn", sc.L_diff, qall)
        Hq = self.sys.H.dq(Qd, P)
        dW = self.dW[rows]
        Pw = self._diffusion_momenta(P, rows)
        G = np.zeros_like(Qw)
        for m, hm in enumerate(self.sys.h):
            G += dW[:, m, None, None] * hm.dq(Qw, Pw)
        R = (np.einsum("i,im,bin->bmn", sc.alpha, sc.D_drift, P)
             - dt * np.einsum("i,im,bin->bmn", sc.alpha, sc.L_drift, Hq)
             - np.einsum("j,jm,bjn->bmn", sc.beta, sc.L_diff, G))
        return R, qall, P, Qd

    def __call__(self, x, rows):
        sc, dt = self.sc, self.dt
        R, qall, P, Qd = self.forces(x, rows)
        R = R[:, : self.s].copy()
        R[:, 0] += self.p[rows]
        S = np.einsum("im,bmn->bin", sc.D_drift, qall) - dt * self.sys.H.dp(Qd, P)
        if self.need_hp:
            dW = self.dW[rows]
            V = np.zeros_like(S)
            for m, hm in enumerate(self.sys.h):
                V += dW[:, m, None, None] * hm.dp(Qd, P)
            S -= sc.legendre_ratio[None, :, None] * V
        return np.concatenate([R.reshape(x.shape[0], -1), S.reshape(x.shape[0], -1)], axis=1)

    def p_next(self, x, rows):
        R, *_ = self.forces(x, rows)
        return R[:, self.s]

    def jacobian(self, x, rows):
        sc, dt, s, r, N = self.sc, self.dt, self.s, self.r, self.N
        B = x.shape[0]
        qall, P = self.split(x, rows)
        Qd = np.einsum("im,bmn->bin", sc.L_drift, qall)
        Qw = np.einsum("jm,bmn->bjn", sc.L_diff, qall)
        Pw = self._diffusion_momenta(P, rows)
        dW = self.dW[rows]
        Hqq, Hqp, Hpp = hessian_blocks(self.sys.H, Qd, P)
        Gqq = np.zeros(Qw.shape + (N,))
        Gqp = np.zeros_like(Gqq)
        hqp_d = np.zeros(Qd.shape + (N,))
        hpp_d = np.zeros_like(hqp_d)
        for m, hm in enumerate(self.sys.h):
            w = dW[:, m, None, None, None]
            qq, qp, _ = hessian_blocks(hm, Qw, Pw)
            Gqq += w * qq
            Gqp += w * qp
            if self.need_hp:
                _, qp_d, pp_d = hessian_blocks(hm, Qd, P)
                hqp_d += w * qp_d
                hpp_d += w * pp_d
        eye = np.eye(N)
        J = np.zeros((B, s + r, N, s + r, N))
        Ld, Dd, Lw = sc.L_drift, sc.D_drift, sc.L_diff
        # momentum rows mu = 0..s-1 against controls nu = 1..s
        for mu in range(s):
            for nu in range(1, s + 1):
                J[:, mu, :, nu - 1, :] = (-dt * np.einsum("i,bikl->bkl", sc.alpha * Ld[:, mu] * Ld[:, nu], Hqq)
                                          - np.einsum("j,bjkl->bkl", sc.beta * Lw[:, mu] * Lw[:, nu], Gqq))
            for i in range(r):
                blk = sc.alpha[i] * Dd[i, mu] * eye - dt * sc.alpha[i] * Ld[i, mu] * Hqp[:, i]
                for j in np.flatnonzero(sc.shared == i):
                    blk = blk - sc.beta[j] * Lw[j, mu] * Gqp[:, j]
                J[:, mu, :, s + i, :] = blk
        # Legendre rows
        for i in range(r):
            pq = dt * np.swapaxes(Hqp[:, i], -1, -2) + sc.legendre_ratio[i] * np.swapaxes(hqp_d[:, i], -1, -2)
            for nu in range(1, s + 1):
                J[:, s + i, :, nu - 1, :] = Dd[i, nu] * eye - Ld[i, nu] * pq
            J[:, s + i, :, s + i, :] = -dt * Hpp[:, i] - sc.legendre_ratio[i] * hpp_d[:, i]
        return J.reshape(B, (s + r) * N, (s + r) * N)


def stage_system(scheme: GalerkinScheme, system: SystemDef, z_k: PhaseState, dt, dW):
    """The stage-equation object for a batch (exposed for diagnostics and tests)."""
    q, p, dW, _, _ = as_batch(z_k, dW, system.noise_channels)
    return _StageSystem(scheme, system, q, p, dt, dW)


def residual(scheme: GalerkinScheme, system: SystemDef, z_k: PhaseState, stages: StageVector, dt, dW) -> np.ndarray:
    """Residual of the stage equations; zero exactly at a solution.

    Row blocks: the ``p_k`` equation, the interior-control equations
    (``mu = 1..s-1``), then one Legendre-transform equation per drift node.
    """
    scheme.check_compatible(system)
    N, s, r = system.dim, scheme.degree, scheme.r_drift
    if z_k.dim != N:
        raise ValueError(f"state dimension {z_k.dim} does not match system dimension {N}")
    qc = np.asarray(stages.q_controls, float)
    P = np.asarray(stages.P_stages, float)
    if qc.shape[-2:] != (s, N) or P.shape[-2:] != (r, N):
        raise ValueError(f"stage shapes {qc.shape}, {P.shape} do not match s={s}, r={r}, N={N}")
    ss = stage_system(scheme, system, z_k, dt, dW)
    B = ss.q.shape[0]
    x = StageVector(qc.reshape(B, s, N), P.reshape(B, r, N)).pack()
    out = ss(x, np.arange(B))
    return out.reshape(z_k.batch_shape + (out.shape[-1],))


def step(scheme: GalerkinScheme, system: SystemDef, z_k: PhaseState, dt, dW, cfg: Optional[SolverConfig] = None,
         warm_start: Optional[StageVector] = None):
    """Advance one step; returns ``(z_next, stages, stats)``.

    The default initial guess replicates ``(q_k, p_k)`` over all stages.
    """
    cfg = cfg or SolverConfig()
    scheme.check_compatible(system)
    N, s, r = system.dim, scheme.degree, scheme.r_drift
    q, p, dW, _, bshape = as_batch(z_k, dW, system.noise_channels)
    B = q.shape[0]
    if dt == 0 and not np.any(dW):
        stages = StageVector(np.repeat(q[:, None], s, 1), np.repeat(p[:, None], r, 1))
        return restore(q.copy(), p.copy(), bshape), stages, StepStats.explicit(B)
    if warm_start is not None:
        x0 = StageVector(np.asarray(warm_start.q_controls, float).reshape(B, s, N),
                         np.asarray(warm_start.P_stages, float).reshape(B, r, N)).pack()
    else:
        x0 = StageVector(np.repeat(q[:, None], s, 1), np.repeat(p[:, None], r, 1)).pack()
    use_jac = cfg.jacobian == "analytic" and system.has_hessians

    def attempt(dW_, _dZ):
        ss = _StageSystem(scheme, system, q, p, dt, dW_)
        x, iters, res, failed = newton(ss, x0, cfg, ss.jacobian if use_jac else None)
        rows = np.arange(B)
        q_new = x[:, (s - 1) * N: s * N].copy()
        p_new = ss.p_next(x, rows)
        return q_new, p_new, iters, res, failed, x

    q_new, p_new, stats, x = solve_with_policy(attempt, q, p, dW, cfg, scheme.name)
    stages = StageVector.unpack(x, s, r, N)
    return restore(q_new, p_new, bshape), stages, stats

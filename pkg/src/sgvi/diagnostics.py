"""Structure-preservation measurements."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._solve import SolverConfig
from .model import PhaseState, SystemDef, diffusion_jacobian_action

__all__ = [
    "SymplecticReport",
    "CommutativityReport",
    "symplectic_defect",
    "momentum_series",
    "angular_momentum",
    "commutativity_defect",
    "energy_series",
    "DEFECT_SOLVER",
]

# Newton tolerance used while differentiating implicit steps
DEFECT_SOLVER = SolverConfig(tol=1e-13, max_iter=50)


@dataclass
class SymplecticReport:
    defect: float
    fd_step: float
    jacobian: np.ndarray
    details: dict = field(default_factory=dict)


@dataclass
class CommutativityReport:
    Gamma: np.ndarray   # (M, M, N): Gamma[i, j]
    Lambda: np.ndarray
    max_asymmetry: float


def _symplectic_residual(J: np.ndarray) -> np.ndarray:
    """``J^T Omega J - Omega`` assembled blockwise (``Omega = [[0, I], [-I, 0]]``)."""
    N = J.shape[-1] // 2
    A, C = J[..., :N, :], J[..., N:, :]
    out = np.swapaxes(A, -1, -2) @ C - np.swapaxes(C, -1, -2) @ A
    idx = np.arange(N)
    out[..., idx, N + idx] -= 1.0
    out[..., N + idx, idx] += 1.0
    return out


def symplectic_defect(stepper: Callable, system: SystemDef, z: PhaseState, dt, dW, fd_step: float = 1e-6,
                      dZ=None, cfg: Optional[SolverConfig] = None) -> SymplecticReport:
    """Central-difference Jacobian ``J`` of the one-step map at fixed noise, and ``max|J^T Omega J - Omega|``.

    ``stepper(system, z, dt, dW, cfg, dZ) -> (z_next, stats)``.  All ``4N``
    perturbed states are stepped as one batch; rows are solved independently.
    """
    cfg = cfg or DEFECT_SOLVER
    x = z.as_vector().reshape(-1)
    n = x.size
    N = n // 2
    eps = fd_step * (1.0 + np.max(np.abs(x)))
    pert = np.concatenate([np.eye(n), -np.eye(n)]) * eps
    X = x[None, :] + pert
    M = system.noise_channels
    dW_b = np.broadcast_to(np.asarray(dW, float).reshape(-1), (2 * n, M)) if M else np.zeros((2 * n, 0))
    dZ_b = None if dZ is None else np.broadcast_to(np.asarray(dZ, float).reshape(-1), (2 * n, M))
    out, stats = stepper(system, PhaseState(X[:, :N], X[:, N:]), dt, dW_b, cfg, dZ_b)
    Y = out.as_vector()
    J = ((Y[:n] - Y[n:]) / (2 * eps)).T
    defect = float(np.max(np.abs(_symplectic_residual(J))))
    details = {"eps": eps, "newton_iterations": int(np.max(stats.iterations)) if stats is not None else 0}
    return SymplecticReport(defect, fd_step, J, details)


def momentum_series(trajectory, generator, shift=None) -> np.ndarray:
    """``J(q_k, p_k) = p_k . (G q_k + c)`` along a trajectory.

    ``trajectory`` is a :class:`PhaseState` with a leading time axis (or a
    ``(q, p)`` pair); ``generator`` is the matrix ``G`` of the linear
    infinitesimal action ``xi_Q(q) = G q + c``.
    """
    if isinstance(trajectory, PhaseState):
        q, p = trajectory.q, trajectory.p
    else:
        q, p = (np.asarray(a, float) for a in trajectory)
    G = np.asarray(generator, float)
    xi = q @ G.T
    if shift is not None:
        xi = xi + np.asarray(shift, float)
    return np.sum(p * xi, axis=-1)


ROTATION_GENERATOR = np.array([[0.0, -1.0], [1.0, 0.0]])


def angular_momentum(trajectory) -> np.ndarray:
    """Planar angular momentum ``q1 p2 - q2 p1``."""
    return momentum_series(trajectory, ROTATION_GENERATOR)


def commutativity_defect(system: SystemDef, z: PhaseState) -> CommutativityReport:
    """``Gamma_ij`` and ``Lambda_ij``: the ``q`` and ``p`` blocks of ``DB_j B_i``.

    The order-1 guarantee carries over to several channels when both are
    symmetric in ``(i, j)``.
    """
    M = system.noise_channels
    if M < 2:
        raise ValueError("commutativity needs at least two noise channels")
    q, p = np.asarray(z.q, float), np.asarray(z.p, float)
    N = q.shape[-1]
    Gamma = np.zeros((M, M, N))
    Lam = np.zeros((M, M, N))
    for i, hi in enumerate(system.h):
        vq, vp = hi.dp(q, p) * 1.0, -hi.dq(q, p)
        for j, hj in enumerate(system.h):
            Gamma[i, j], Lam[i, j] = diffusion_jacobian_action(hj, q, p, vq, vp)
    asym = 0.0
    for i in range(M):
        for j in range(M):
            if i != j:
                asym = max(asym, float(np.max(np.abs(Gamma[i, j] - Gamma[j, i]))),
                           float(np.max(np.abs(Lam[i, j] - Lam[j, i]))))
    return CommutativityReport(Gamma, Lam, asym)


def energy_series(trajectory, system: SystemDef) -> np.ndarray:
    """``H(q_k, p_k)`` along a trajectory (any leading axes)."""
    if isinstance(trajectory, PhaseState):
        q, p = trajectory.q, trajectory.p
    else:
        q, p = (np.asarray(a, float) for a in trajectory)
    return np.asarray(system.energy(q, p), float)


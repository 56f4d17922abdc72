"""Batched Newton iteration shared by every implicit stepper.

Each row of the unknown array is an independent nonlinear system (one
Monte Carlo path).  Rows are iterated until their own residual meets the
tolerance and are then frozen, so a row's result never depends on which
other rows share its batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import PhaseState

__all__ = ["SolverConfig", "StepStats", "StepFailure", "newton", "as_batch", "restore", "finish",
           "solve_with_policy", "fd_jacobian"]


@dataclass(frozen=True)
class SolverConfig:
    """Newton settings.

    ``on_failure`` is ``"raise"`` (default) or ``"mask"``; with ``"mask"``
    failed rows keep their input state and are flagged in :class:`StepStats`.
    ``truncate_A``, when set, retries failed rows once with increments
    clamped to ``[-A, A]``.
    """

    tol: float = 1e-12
    max_iter: int = 50
    jacobian: str = "fd"
    fd_step: float = 1e-7
    on_failure: str = "raise"
    truncate_A: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.jacobian not in ("fd", "analytic"):
            raise ValueError("jacobian must be 'fd' or 'analytic'")
        if self.on_failure not in ("raise", "mask"):
            raise ValueError("on_failure must be 'raise' or 'mask'")


@dataclass
class StepStats:
    iterations: np.ndarray
    residual: np.ndarray
    failed: np.ndarray
    truncated: np.ndarray = field(default=None)

    @property
    def max_iterations(self) -> int:
        return int(self.iterations.max()) if self.iterations.size else 0

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0

    @classmethod
    def explicit(cls, batch: int) -> "StepStats":
        return cls(np.zeros(batch, int), np.zeros(batch), np.zeros(batch, bool))


class StepFailure(RuntimeError):
    """Newton did not converge; ``residual`` is the last residual max-norm per row."""

    def __init__(self, message: str, residual=None, failed=None):
        super().__init__(message)
        self.residual = residual
        self.failed = failed


def _solve_rows(J, r):
    try:
        return np.linalg.solve(J, -r[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(r)
        for i in range(r.shape[0]):
            out[i] = np.linalg.lstsq(J[i], -r[i], rcond=None)[0]
        return out


def fd_jacobian(F, x, r, rows, step):
    n = x.shape[1]
    J = np.empty((x.shape[0], r.shape[1], n))
    for j in range(n):
        h = step * (1.0 + np.abs(x[:, j]))
        xp = x.copy()
        xp[:, j] += h
        J[:, :, j] = (F(xp, rows) - r) / h[:, None]
    return J


def newton(F: Callable, x0: np.ndarray, cfg: SolverConfig, jac: Optional[Callable] = None):
    """Solve ``F(x, rows) = 0`` row by row.

    ``F`` receives the unknowns of the selected rows and the index array of
    those rows, and returns their residuals.  Returns ``(x, iterations,
    residual, failed)``.
    """
    x = np.array(x0, dtype=float)
    B = x.shape[0]
    rows = np.arange(B)
    r = F(x, rows)
    res = np.max(np.abs(r), axis=1) if r.shape[1] else np.zeros(B)
    iters = np.zeros(B, dtype=int)
    done = res <= cfg.tol
    for _ in range(cfg.max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        xa, ra = x[act], r[act]
        J = jac(xa, act) if jac is not None else fd_jacobian(F, xa, ra, act, cfg.fd_step)
        xa = xa + _solve_rows(J, ra)
        ra = F(xa, act)
        x[act], r[act] = xa, ra
        res[act] = np.max(np.abs(ra), axis=1)
        iters[act] += 1
        done[act] = res[act] <= cfg.tol
    failed = ~done | ~np.isfinite(res)
    return x, iters, res, failed


def as_batch(z: PhaseState, dW, M: int, dZ=None):
    """Flatten a (possibly batched) state and broadcast increments to ``(B, M)``."""
    N = z.dim
    bshape = z.batch_shape
    q = z.q.reshape(-1, N)
    p = z.p.reshape(-1, N)
    dW = np.asarray(dW, dtype=float)
    dW = np.broadcast_to(dW.reshape(1) if dW.ndim == 0 else dW, bshape + (M,)).reshape(q.shape[0], M)
    if dZ is not None:
        dZ = np.asarray(dZ, dtype=float)
        dZ = np.broadcast_to(dZ.reshape(1) if dZ.ndim == 0 else dZ, bshape + (M,)).reshape(q.shape[0], M)
    return q, p, dW, dZ, bshape


def restore(q, p, bshape) -> PhaseState:
    N = q.shape[-1]
    return PhaseState(q.reshape(bshape + (N,)), p.reshape(bshape + (N,)))


def finish(q_new, p_new, q_old, p_old, iters, res, failed, cfg: SolverConfig, what: str):
    """Apply the failure policy and build the stats record.

    Rows whose new state is not finite count as failed.
    """
    failed = failed | ~(np.all(np.isfinite(q_new), axis=1) & np.all(np.isfinite(p_new), axis=1))
    stats = StepStats(iters, res, failed)
    if failed.any():
        if cfg.on_failure == "raise":
            raise StepFailure(f"{what}: step failed on {int(failed.sum())} row(s), "
                              f"residual {np.nanmax(res[failed]):.3e}", res, failed)
        q_new = np.where(failed[:, None], q_old, q_new)
        p_new = np.where(failed[:, None], p_old, p_new)
    return q_new, p_new, stats


def solve_with_policy(attempt: Callable, q_old, p_old, dW, cfg: SolverConfig, what: str, dZ=None):
    """Run ``attempt(dW, dZ) -> (q, p, iters, res, failed, extra)`` under the failure policy.

    ``extra`` is an array with one leading row per path (e.g. converged
    stages) or ``None``.  Rows that fail are retried once with truncated
    increments when ``cfg.truncate_A`` is set.
    """
    q, p, iters, res, failed, extra = attempt(dW, dZ)
    truncated = np.zeros_like(failed)
    if failed.any() and cfg.truncate_A is not None:
        A = cfg.truncate_A
        q2, p2, it2, res2, f2, extra2 = attempt(np.clip(dW, -A, A), dZ)
        fix = failed & ~f2
        q[fix], p[fix], iters[fix], res[fix] = q2[fix], p2[fix], it2[fix], res2[fix]
        if extra is not None:
            extra[fix] = extra2[fix]
        failed = failed & f2
        truncated = fix
    q, p, stats = finish(q, p, q_old, p_old, iters, res, failed, cfg, what)
    stats.truncated = truncated
    return q, p, stats, extra


def explicit_result(q_new, p_new, q_old, p_old, cfg: Optional[SolverConfig], what: str):
    """Failure policy for explicit steps (only non-finite rows can fail)."""
    B = q_old.shape[0]
    return finish(q_new, p_new, q_old, p_old, np.zeros(B, int), np.zeros(B), np.zeros(B, bool),
                  cfg or SolverConfig(), what)

"""Wiener increments: sampling, coarsening, truncation and a binary dump format.

Increments are stored with the step axis second to last and the channel axis
last, so an array of shape ``(K, M)`` is one path and ``(B, K, M)`` is a batch
of ``B`` independent paths.  ``dZ`` is the time integral of the Wiener path
over the step, ``int_{t_k}^{t_k+dt} (W(t) - W(t_k)) dt``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "WienerPath",
    "trial_rng",
    "increments_from_normals",
    "sample_path",
    "sample_paths",
    "coarsen",
    "coarsen_increments",
    "truncate_increment",
    "default_truncation",
    "dump_path",
    "load_path",
]

_MAGIC = b"SGVIWP01"
_HEADER = struct.Struct("<8sQQdQB")


@dataclass(frozen=True)
class WienerPath:
    dt: float
    dW: np.ndarray
    dZ: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        dW = np.asarray(self.dW, dtype=float)
        if dW.ndim < 2:
            raise ValueError("dW must have shape (..., K, M)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "dW", dW)
        if self.dZ is not None:
            dZ = np.asarray(self.dZ, dtype=float)
            if dZ.shape != dW.shape:
                raise ValueError("dZ must have the same shape as dW")
            object.__setattr__(self, "dZ", dZ)

    @property
    def n_steps(self) -> int:
        return self.dW.shape[-2]

    @property
    def channels(self) -> int:
        return self.dW.shape[-1]

    @property
    def with_dZ(self) -> bool:
        return self.dZ is not None

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def W(self) -> np.ndarray:
        """Path values ``W(t_k)`` for ``k = 0..K``, with ``W(0) = 0``."""
        zero = np.zeros(self.dW.shape[:-2] + (1, self.channels))
        return np.concatenate([zero, np.cumsum(self.dW, axis=-2)], axis=-2)

    def W_final(self) -> np.ndarray:
        return np.sum(self.dW, axis=-2)

    def coarsen(self, factor: int) -> "WienerPath":
        return coarsen(self, factor)

    def trial(self, i: int) -> "WienerPath":
        """Extract one path from a batched path."""
        return WienerPath(self.dt, self.dW[i], None if self.dZ is None else self.dZ[i], self.seed)


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent stream for ``(seed, trial)``; scheduling cannot change it."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial)])
    return np.random.Generator(np.random.PCG64(ss))


def increments_from_normals(chi, dt: float, eta=None):
    """Map standard normals to ``(dW, dZ)``.

    ``dW = chi sqrt(dt)`` and ``dZ = dt^1.5 (chi + eta/sqrt(3)) / 2``; ``dZ`` is
    ``None`` when ``eta`` is not given.
    """
    chi = np.asarray(chi, dtype=float)
    dW = chi * np.sqrt(dt)
    if eta is None:
        return dW, None
    dZ = 0.5 * dt ** 1.5 * (chi + np.asarray(eta, dtype=float) / np.sqrt(3.0))
    return dW, dZ


def _validate(K, dt, M):
    if K < 1:
        raise ValueError("K must be at least 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if M < 1:
        raise ValueError("M must be at least 1")


def _draw(rng, K, dt, M, with_dZ):
    # chi first so dW does not depend on with_dZ
    chi = rng.standard_normal((K, M))
    eta = rng.standard_normal((K, M)) if with_dZ else None
    return increments_from_normals(chi, dt, eta)


def sample_path(seed: int, K: int, dt: float, M: int = 1, with_dZ: bool = False,
                trial: int = 0) -> WienerPath:
    """One path of ``K`` steps drawn from the stream of ``(seed, trial)``."""
    _validate(K, dt, M)
    dW, dZ = _draw(trial_rng(seed, trial), K, dt, M, with_dZ)
    return WienerPath(dt, dW, dZ, seed)


def sample_paths(seed: int, trials, K: int, dt: float, M: int = 1, with_dZ: bool = False) -> WienerPath:
    """Batched paths; row ``i`` is exactly ``sample_path(seed, ..., trial=trials[i])``."""
    _validate(K, dt, M)
    if isinstance(trials, int):
        trials = range(trials)
    trials = list(trials)
    dW = np.empty((len(trials), K, M))
    dZ = np.empty_like(dW) if with_dZ else None
    for row, t in enumerate(trials):
        w, z = _draw(trial_rng(seed, t), K, dt, M, with_dZ)
        dW[row] = w
        if with_dZ:
            dZ[row] = z
    return WienerPath(dt, dW, dZ, seed)


def coarsen_increments(dW, dZ, dt: float, factor: int):
    """Merge ``factor`` consecutive steps of size ``dt``.

    ``dW`` adds up.  Merging ``[0, d1]`` with ``[d1, d1 + d2]`` gives
    ``dZ = dZ1 + dZ2 + dW1 * d2``; applied left to right over equal sub-steps
    this is ``sum_j dZ_j + dt * sum_j (factor - 1 - j) dW_j``.
    """
    dW = np.asarray(dW, float)
    K = dW.shape[-2]
    if factor < 1 or K % factor:
        raise ValueError(f"factor {factor} does not divide the number of steps {K}")
    if factor == 1:
        return dW, dZ
    shape = dW.shape[:-2] + (K // factor, factor, dW.shape[-1])
    w = dW.reshape(shape)
    W = w.sum(axis=-2)
    if dZ is None:
        return W, None
    lag = (factor - 1 - np.arange(factor))[:, None] * dt
    Z = np.asarray(dZ, float).reshape(shape).sum(axis=-2) + np.sum(w * lag, axis=-2)
    return W, Z


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    """Path with ``factor`` times fewer, ``factor`` times longer steps."""
    if factor == 1:
        return path
    dW, dZ = coarsen_increments(path.dW, path.dZ, path.dt, factor)
    return WienerPath(path.dt * factor, dW, dZ, path.seed)


def truncate_increment(dW, A: float):
    """Clamp increments to ``[-A, A]``."""
    if not A > 0:
        raise ValueError("A must be positive")
    return np.clip(dW, -A, A)


def default_truncation(dt: float, beta: float) -> float:
    """Truncation level ``(3 - dt) / (2 beta)`` keeping the Kubo P2N2Q2Otr stage system solvable."""
    if not 0 < dt < 3:
        raise ValueError("default truncation requires 0 < dt < 3")
    return (3.0 - dt) / (2.0 * abs(beta))


def dump_path(path: WienerPath, fh) -> None:
    """Write a single (unbatched) path: fixed header then little-endian float64 payload."""
    if path.dW.ndim != 2:
        raise ValueError("only single paths can be dumped")
    K, M = path.dW.shape
    fh.write(_HEADER.pack(_MAGIC, int(path.seed) & 0xFFFFFFFFFFFFFFFF, K, float(path.dt), M,
                          1 if path.with_dZ else 0))
    fh.write(np.ascontiguousarray(path.dW, dtype="<f8").tobytes())
    if path.with_dZ:
        fh.write(np.ascontiguousarray(path.dZ, dtype="<f8").tobytes())


def load_path(fh) -> WienerPath:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated path header")
    magic, seed, K, dt, M, flag = _HEADER.unpack(head)
    if magic != _MAGIC:
        raise ValueError("not a Wiener path dump")
    n = K * M * 8
    dW = np.frombuffer(fh.read(n), dtype="<f8")
    dZ = np.frombuffer(fh.read(n), dtype="<f8") if flag else None
    if dW.size != K * M or (dZ is not None and dZ.size != K * M):
        raise ValueError("truncated path payload")
    return WienerPath(dt, dW.reshape(K, M).astype(float),
                      None if dZ is None else dZ.reshape(K, M).astype(float), seed)

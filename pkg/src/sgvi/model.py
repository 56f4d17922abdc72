"""Stochastic Hamiltonian systems.

A system is described by a drift Hamiltonian ``H`` and ``M`` diffusion
Hamiltonians ``h_1 .. h_M``, each driven by an independent Wiener channel
in the Stratonovich sense::

    dq =  dH/dp dt + sum_m dh_m/dp o dW_m
    dp = -dH/dq dt - sum_m dh_m/dq o dW_m

All evaluators act on the last axis, so ``q`` and ``p`` may carry any number
of leading batch dimensions (one row per Monte Carlo path, say).  Evaluators
must be pure functions; they are shared between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "PhaseState",
    "Hamiltonian",
    "SystemDef",
    "ConfigurationError",
    "EvaluatorError",
    "make_system",
    "kubo",
    "synchrotron",
    "anharmonic",
    "planar_rotational",
    "get_system",
    "BUILTIN_SYSTEMS",
    "hessian_blocks",
    "check_gradients",
    "ito_coefficients",
    "diffusion_jacobian_action",
]

FD_HESSIAN_STEP = 1e-5


class ConfigurationError(ValueError):
    """A scheme, system or option combination that cannot work together."""


class EvaluatorError(RuntimeError):
    """An evaluator of a system raised; ``name`` identifies which one."""

    def __init__(self, name: str, exc: BaseException):
        super().__init__(f"evaluator {name!r} failed: {exc}")
        self.name = name


@dataclass(frozen=True)
class PhaseState:
    """Canonical coordinates ``(q, p)``, optionally batched along leading axes."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape:
            raise ValueError(f"q and p shapes differ: {q.shape} vs {p.shape}")
        if q.shape[-1] < 1:
            raise ValueError("phase space dimension must be at least 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("PhaseState entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.q.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.q.shape[:-1]

    def as_vector(self) -> np.ndarray:
        """Stack into ``z = (q, p)`` along the last axis."""
        return np.concatenate([self.q, self.p], axis=-1)

    @classmethod
    def from_vector(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        n = z.shape[-1] // 2
        return cls(z[..., :n], z[..., n:])


@dataclass(frozen=True)
class Hamiltonian:
    """A scalar function on phase space with its gradient blocks.

    ``hessian``, when given, returns ``(d2/dq dq, d2/dq dp, d2/dp dp)`` with
    ``qp[..., i, j] = d2 f / dq_i dp_j``.
    """

    value: Callable
    dq: Callable
    dp: Callable
    hessian: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True)
class SystemDef:
    dim: int
    H: Hamiltonian
    h: tuple = ()
    separable: bool = False
    h_independent_of_p: bool = False
    additive_noise: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def noise_channels(self) -> int:
        return len(self.h)

    @property
    def has_hessians(self) -> bool:
        return self.H.hessian is not None and all(hm.hessian is not None for hm in self.h)

    def energy(self, q, p) -> np.ndarray:
        return self.H.value(np.asarray(q, float), np.asarray(p, float))

    def with_flags(self, **flags) -> "SystemDef":
        """Copy with structural flags overridden (used to force generic code paths)."""
        return replace(self, **flags)

    def evaluators(self):
        """Yield ``(name, callable)`` for every first-derivative evaluator."""
        yield "H.dq", self.H.dq
        yield "H.dp", self.H.dp
        for m, hm in enumerate(self.h, start=1):
            yield f"h{m}.dq", hm.dq
            yield f"h{m}.dp", hm.dp

    def validate(self, n_points: int = 20, seed: int = 0, tol: float = 1e-6) -> None:
        """Spot-check the structural flags and supplied gradients at random points."""
        rng = np.random.default_rng(seed)
        q = rng.uniform(-2.0, 2.0, size=(n_points, self.dim))
        p = rng.uniform(-2.0, 2.0, size=(n_points, self.dim))
        if self.h_independent_of_p:
            for m, hm in enumerate(self.h, start=1):
                if np.any(hm.dp(q, p) != 0.0):
                    raise ConfigurationError(f"h{m}.dp is not identically zero")
        if self.separable:
            q2 = rng.uniform(-2.0, 2.0, size=q.shape)
            p2 = rng.uniform(-2.0, 2.0, size=p.shape)
            for label, ham in [("H", self.H)] + [(f"h{m}", hm) for m, hm in enumerate(self.h, 1)]:
                if not (np.allclose(ham.dq(q, p), ham.dq(q, p2), rtol=1e-12, atol=1e-12)
                        and np.allclose(ham.dp(q, p), ham.dp(q2, p), rtol=1e-12, atol=1e-12)):
                    raise ConfigurationError(f"{label} is flagged separable but is not")
        if self.additive_noise:
            q2 = rng.uniform(-2.0, 2.0, size=q.shape)
            p2 = rng.uniform(-2.0, 2.0, size=p.shape)
            for m, hm in enumerate(self.h, start=1):
                if not (np.allclose(hm.dq(q, p), hm.dq(q2, p2)) and np.allclose(hm.dp(q, p), hm.dp(q2, p2))):
                    raise ConfigurationError(f"h{m} is flagged additive but its gradient varies")
        for i in range(n_points):
            report = check_gradients(self, PhaseState(q[i], p[i]), 1e-6)
            worst = max(report.values())
            if worst > tol:
                raise ConfigurationError(f"gradient check failed: {report}")


def make_system(dim: int, H: Hamiltonian, h: Sequence[Hamiltonian] = (), *, validate: bool = True,
                **flags) -> SystemDef:
    """Build a :class:`SystemDef` and (by default) spot-check its flags and gradients."""
    if dim < 1:
        raise ValueError("dim must be positive")
    system = SystemDef(dim=dim, H=H, h=tuple(h), **flags)
    if validate:
        system.validate()
    return system


# -- builtin systems ---------------------------------------------------------

def _eye_like(x, scale=1.0):
    n = x.shape[-1]
    return np.broadcast_to(scale * np.eye(n), x.shape[:-1] + (n, n)).copy()


def _zeros_hess(x):
    n = x.shape[-1]
    return np.zeros(x.shape[:-1] + (n, n))


def kubo(beta: float = 0.1) -> SystemDef:
    """Kubo oscillator: ``H = (p^2 + q^2)/2``, ``h = beta * H``."""

    def H(q, p):
        return 0.5 * np.sum(p * p + q * q, axis=-1)

    def hess(q, p):
        return _eye_like(q), _zeros_hess(q), _eye_like(q)

    ham = Hamiltonian(H, lambda q, p: q * 1.0, lambda q, p: p * 1.0, hess, "H")
    noise = Hamiltonian(
        lambda q, p: beta * H(q, p),
        lambda q, p: beta * q,
        lambda q, p: beta * p,
        lambda q, p: (_eye_like(q, beta), _zeros_hess(q), _eye_like(q, beta)),
        "h",
    )
    return SystemDef(1, ham, (noise,), separable=True, name="kubo", params={"beta": beta})


def synchrotron(beta: float = 0.1) -> SystemDef:
    """Synchrotron oscillations: ``H = p^2/2 - cos q``, ``h = beta sin q``."""

    def hess_H(q, p):
        return np.cos(q)[..., None], _zeros_hess(q), _eye_like(q)

    ham = Hamiltonian(
        lambda q, p: np.sum(0.5 * p * p - np.cos(q), axis=-1),
        lambda q, p: np.sin(q),
        lambda q, p: p * 1.0,
        hess_H,
        "H",
    )
    noise = Hamiltonian(
        lambda q, p: beta * np.sum(np.sin(q), axis=-1),
        lambda q, p: beta * np.cos(q),
        lambda q, p: np.zeros_like(p),
        lambda q, p: ((-beta * np.sin(q))[..., None], _zeros_hess(q), _zeros_hess(q)),
        "h",
    )
    return SystemDef(1, ham, (noise,), separable=True, h_independent_of_p=True,
                     name="synchrotron", params={"beta": beta})


def anharmonic(gamma: float = 0.1, beta: float = 0.1) -> SystemDef:
    """Anharmonic oscillator: ``H = p^2/2 + gamma q^4``, ``h = beta q`` (additive noise)."""
    ham = Hamiltonian(
        lambda q, p: np.sum(0.5 * p * p + gamma * q ** 4, axis=-1),
        lambda q, p: 4.0 * gamma * q ** 3,
        lambda q, p: p * 1.0,
        lambda q, p: ((12.0 * gamma * q * q)[..., None], _zeros_hess(q), _eye_like(q)),
        "H",
    )
    noise = Hamiltonian(
        lambda q, p: beta * np.sum(q, axis=-1),
        lambda q, p: np.full_like(q, beta),
        lambda q, p: np.zeros_like(p),
        lambda q, p: (_zeros_hess(q), _zeros_hess(q), _zeros_hess(q)),
        "h",
    )
    return SystemDef(1, ham, (noise,), separable=True, h_independent_of_p=True, additive_noise=True,
                     name="anharmonic", params={"gamma": gamma, "beta": beta})


def planar_rotational(sigma: float = 0.1) -> SystemDef:
    """Rotation-invariant planar system: ``H = |p|^2/2 + |q|^4/4``, ``h = sigma |q|^2/2``."""

    def hess_H(q, p):
        r2 = np.sum(q * q, axis=-1)[..., None, None]
        return r2 * np.eye(2) + 2.0 * q[..., :, None] * q[..., None, :], _zeros_hess(q), _eye_like(q)

    ham = Hamiltonian(
        lambda q, p: 0.5 * np.sum(p * p, axis=-1) + 0.25 * np.sum(q * q, axis=-1) ** 2,
        lambda q, p: np.sum(q * q, axis=-1, keepdims=True) * q,
        lambda q, p: p * 1.0,
        hess_H,
        "H",
    )
    noise = Hamiltonian(
        lambda q, p: 0.5 * sigma * np.sum(q * q, axis=-1),
        lambda q, p: sigma * q,
        lambda q, p: np.zeros_like(p),
        lambda q, p: (_eye_like(q, sigma), _zeros_hess(q), _zeros_hess(q)),
        "h",
    )
    return SystemDef(2, ham, (noise,), separable=True, h_independent_of_p=True,
                     name="planar-rotational", params={"sigma": sigma})


BUILTIN_SYSTEMS = {
    "kubo": (kubo, ("beta",)),
    "synchrotron": (synchrotron, ("beta",)),
    "anharmonic": (anharmonic, ("gamma", "beta")),
    "planar-rotational": (planar_rotational, ("sigma",)),
}


def get_system(name: str, **params) -> SystemDef:
    """Look up a builtin system by its CLI name; unused ``None`` params are ignored."""
    key = name.strip().lower().replace("_", "-")
    if key not in BUILTIN_SYSTEMS:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(BUILTIN_SYSTEMS)}")
    factory, accepted = BUILTIN_SYSTEMS[key]
    kwargs = {k: v for k, v in params.items() if k in accepted and v is not None}
    return factory(**kwargs)


# -- derivatives ---------------------------------------------------------------

def _call(name, fn, *args):
    try:
        return np.asarray(fn(*args), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with the evaluator identity
        raise EvaluatorError(name, exc) from exc


def _fd_hessian(ham: Hamiltonian, q, p, step):
    n = q.shape[-1]
    qq = np.empty(q.shape[:-1] + (n, n))
    qp = np.empty_like(qq)
    pp = np.empty_like(qq)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        # column j: derivative with respect to q_j / p_j
        qq[..., :, j] = (ham.dq(q + e, p) - ham.dq(q - e, p)) / (2 * step)
        pp[..., :, j] = (ham.dp(q, p + e) - ham.dp(q, p - e)) / (2 * step)
        # qp[i, j] = d/dp_j (dH/dq_i)
        qp[..., :, j] = (ham.dq(q, p + e) - ham.dq(q, p - e)) / (2 * step)
    return qq, qp, pp


def hessian_blocks(ham: Hamiltonian, q, p, *, allow_fd: bool = True, step: float = FD_HESSIAN_STEP):
    """Second-derivative blocks ``(qq, qp, pp)``; analytic if supplied, else central FD."""
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    if ham.hessian is not None:
        qq, qp, pp = ham.hessian(q, p)
        shape = q.shape[:-1] + (q.shape[-1],) * 2
        return (np.broadcast_to(qq, shape), np.broadcast_to(qp, shape), np.broadcast_to(pp, shape))
    if not allow_fd:
        raise ConfigurationError(f"{ham.name or 'Hamiltonian'} has no second derivatives and FD is disabled")
    return _fd_hessian(ham, q, p, step)


def check_gradients(system: SystemDef, point: PhaseState, step: float = 1e-6) -> dict:
    """Compare every supplied derivative with central differences.

    Returns a mapping from evaluator name to the maximum of
    ``|analytic - fd| / (1 + |analytic|)`` over its components.  Hessian
    evaluators, when present, are checked against differences of the gradients.
    """
    if not (0 < step <= 1e-2):
        raise ValueError("step must lie in (0, 1e-2]")
    q = np.asarray(point.q, float)
    p = np.asarray(point.p, float)
    n = q.shape[-1]
    report = {}
    hams = [("H", system.H)] + [(f"h{m}", hm) for m, hm in enumerate(system.h, start=1)]
    for label, ham in hams:
        dq = _call(f"{label}.dq", ham.dq, q, p)
        dp = _call(f"{label}.dp", ham.dp, q, p)
        fq = np.empty_like(dq)
        fp = np.empty_like(dp)
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            fq[..., j] = (_call(f"{label}.value", ham.value, q + e, p)
                          - _call(f"{label}.value", ham.value, q - e, p)) / (2 * step)
            fp[..., j] = (_call(f"{label}.value", ham.value, q, p + e)
                          - _call(f"{label}.value", ham.value, q, p - e)) / (2 * step)
        report[f"{label}.dq"] = float(np.max(np.abs(dq - fq) / (1 + np.abs(dq))))
        report[f"{label}.dp"] = float(np.max(np.abs(dp - fp) / (1 + np.abs(dp))))
        if ham.hessian is not None:
            try:
                exact = hessian_blocks(ham, q, p)
            except Exception as exc:  # noqa: BLE001
                raise EvaluatorError(f"{label}.hessian", exc) from exc
            approx = _fd_hessian(ham, q, p, max(step, 1e-5))
            err = max(float(np.max(np.abs(a - b) / (1 + np.abs(a)))) for a, b in zip(exact, approx))
            report[f"{label}.hessian"] = err
    return report


def diffusion_jacobian_action(ham: Hamiltonian, q, p, vq, vp, *, allow_fd: bool = True):
    """Apply the Jacobian of ``B = (dh/dp, -dh/dq)`` to the vector ``(vq, vp)``."""
    qq, qp, pp = hessian_blocks(ham, q, p, allow_fd=allow_fd)
    # d(dh/dp)_i/dq_j = qp[j, i]
    out_q = np.einsum("...ji,...j->...i", qp, vq) + np.einsum("...ij,...j->...i", pp, vp)
    out_p = -np.einsum("...ij,...j->...i", qq, vq) - np.einsum("...ij,...j->...i", qp, vp)
    return out_q, out_p


def ito_coefficients(system: SystemDef, z: PhaseState, *, allow_fd: bool = True):
    """Drift ``A`` and diffusion columns ``B_m`` of the equivalent Ito equation.

    ``A = A_strat + 1/2 sum_m DB_m B_m`` with ``A_strat = (dH/dp, -dH/dq)``;
    vectors are stacked as ``(q-part, p-part)`` of length ``2N``.
    """
    if system.noise_channels < 1:
        raise ConfigurationError("Ito coefficients need at least one noise channel")
    q, p = z.q, z.p
    aq = system.H.dp(q, p) * 1.0
    ap = -system.H.dq(q, p)
    B = []
    for hm in system.h:
        bq = hm.dp(q, p) * 1.0
        bp = -hm.dq(q, p)
        cq, cp = diffusion_jacobian_action(hm, q, p, bq, bp, allow_fd=allow_fd)
        aq = aq + 0.5 * cq
        ap = ap + 0.5 * cp
        B.append(np.concatenate([bq, bp], axis=-1))
    return np.concatenate([aq, ap], axis=-1), B


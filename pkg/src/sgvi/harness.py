"""Monte Carlo experiments: mean-square convergence and long-time energy statistics.

Trials are independent: trial ``i`` draws its Brownian path from the stream
``(seed, i)``, so results do not depend on how trials are split into chunks
or on the number of worker threads.  Chunks are reduced in trial order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import reference, schemes
from ._solve import SolverConfig
from .model import ConfigurationError, PhaseState, SystemDef
from .noise import WienerPath, sample_path, sample_paths

__all__ = [
    "Method",
    "ExperimentFailure",
    "ConvergenceResult",
    "EnergyResult",
    "TrajectoryResult",
    "make_stepper",
    "integrate",
    "ms_convergence",
    "convergence_study",
    "energy_experiment",
    "trajectory",
    "fit_order",
    "fit_line",
    "REFERENCE_REFINEMENT",
]

# fine-step reference uses dt_min / REFERENCE_REFINEMENT
REFERENCE_REFINEMENT = 32
DEFAULT_CHUNK = 100
BOOTSTRAP_SAMPLES = 200


class ExperimentFailure(RuntimeError):
    """Too many trials failed, or the experiment could not be completed."""


@dataclass(frozen=True)
class Method:
    name: str
    step: Callable
    symplectic: bool
    needs_dZ: bool
    info: Optional[schemes.SchemeInfo] = None

    def check(self, system: SystemDef) -> None:
        if self.info is not None:
            self.info.check(system)
        elif self.name == "taylor32" and system.noise_channels != 1:
            raise ConfigurationError("taylor32 supports a single noise channel")


_REFERENCE_METHODS = {
    "milstein": reference.milstein_step,
    "milstein-ito": reference.milstein_ito_step,
    "taylor32": reference.taylor32_step,
}


def make_stepper(name: str) -> Method:
    """Registry id (case-insensitive) or one of ``milstein``, ``milstein-ito``, ``taylor32``."""
    key = name.strip().lower()
    if key in _REFERENCE_METHODS:
        return Method(key, _REFERENCE_METHODS[key], False, key == "taylor32")
    info = schemes.build(name)
    return Method(info.id, schemes.stepper(info.id), True, info.is_order32, info)


def _as_method(m) -> Method:
    return m if isinstance(m, Method) else make_stepper(m)


def _batch_z0(z0: PhaseState, B: int) -> PhaseState:
    q = np.broadcast_to(np.asarray(z0.q, float).reshape(-1), (B, z0.dim)).copy()
    p = np.broadcast_to(np.asarray(z0.p, float).reshape(-1), (B, z0.dim)).copy()
    return PhaseState(q, p)


@dataclass
class _Run:
    final: PhaseState
    failed: np.ndarray
    max_iterations: int
    energy: Optional[np.ndarray] = None      # (B, K+1)
    states: Optional[np.ndarray] = None      # (K+1, B, 2N)


def integrate(method, system: SystemDef, z0: PhaseState, path: WienerPath, cfg: Optional[SolverConfig] = None,
              record_energy: bool = False, record_states: bool = False) -> _Run:
    """Step a batch of paths ``(B, K, M)`` from a common (or per-row) initial state.

    Failed rows are flagged; under ``on_failure="mask"`` they keep stepping
    from their last good state so the batch stays aligned.
    """
    method = _as_method(method)
    method.check(system)
    if method.needs_dZ and not path.with_dZ:
        raise ConfigurationError(f"{method.name} needs dZ increments")
    cfg = cfg or SolverConfig(on_failure="mask")
    dW = path.dW if path.dW.ndim == 3 else path.dW[None]
    dZ = None if path.dZ is None else (path.dZ if path.dZ.ndim == 3 else path.dZ[None])
    B, K, _ = dW.shape
    z = z0 if z0.batch_shape == (B,) else _batch_z0(z0, B)
    failed = np.zeros(B, bool)
    iters = 0
    energy = np.empty((B, K + 1)) if record_energy else None
    states = np.empty((K + 1, B, 2 * system.dim)) if record_states else None
    if record_energy:
        energy[:, 0] = system.energy(z.q, z.p)
    if record_states:
        states[0] = z.as_vector()
    # divergent rows are caught by the failure policy, so overflow is not an error here
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            dz = None if dZ is None else dZ[:, k]
            z, stats = method.step(system, z, path.dt, dW[:, k], cfg, dz)
            failed |= stats.failed
            iters = max(iters, stats.max_iterations)
            if record_energy:
                energy[:, k + 1] = system.energy(z.q, z.p)
            if record_states:
                states[k + 1] = z.as_vector()
    return _Run(z, failed, iters, energy, states)


def _map_chunks(fn, trials: np.ndarray, threads: int, chunk: int):
    parts = [trials[i:i + chunk] for i in range(0, len(trials), chunk)]
    if threads <= 1 or len(parts) == 1:
        return [fn(c) for c in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, parts))


def _check_drops(n_drop: int, n_total: int, max_drop: float, what: str):
    if n_drop > max_drop * n_total:
        raise ExperimentFailure(f"{what}: {n_drop} of {n_total} trials failed "
                                f"(limit {max_drop:.1%})")


# -- fitting --------------------------------------------------------------------

def fit_line(x, y):
    """Least-squares ``(slope, intercept)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.stack([x, np.ones_like(x)], axis=-1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(coef[1])


def fit_order(dt_levels, errors) -> float:
    """Least-squares slope of ``log error`` against ``log dt``."""
    dt_levels = np.asarray(dt_levels, float)
    errors = np.asarray(errors, float)
    if dt_levels.size < 2 or dt_levels.shape != errors.shape:
        raise ValueError("need at least two (dt, error) pairs of matching length")
    if np.any(errors <= 0) or np.any(dt_levels <= 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors and step sizes must be positive and finite")
    return fit_line(np.log(dt_levels), np.log(errors))[0]


def _bootstrap_orders(dts, sq, seed, n_boot):
    """Fitted orders over trial resamples (trials resampled jointly across levels)."""
    n = sq.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0xB007]))
    x = np.log(dts)
    xc = x - x.mean()
    out = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        y = 0.5 * np.log(sq[:, idx].mean(axis=1))
        out[b] = np.dot(xc, y - y.mean()) / np.dot(xc, xc)
    return out


# -- convergence ----------------------------------------------------------------

@dataclass
class ConvergenceResult:
    scheme: str
    system: str
    dt_levels: list
    ms_errors: list
    stderr: list
    fitted_order: float
    order_stderr: float
    n_paths: int
    n_dropped: int
    seed: int
    reference: str
    T: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _levels(T, dt_levels, refine):
    levels = sorted(float(d) for d in dt_levels)
    if len(levels) < 2:
        raise ValueError("need at least two step sizes")
    if levels[0] <= 0 or len(set(levels)) != len(levels):
        raise ValueError("step sizes must be positive and distinct")
    base = levels[0] / refine
    factors = []
    for d in levels:
        f = d / base
        if abs(f - round(f)) > 1e-8 * f:
            raise ValueError(f"step {d} is not an integer multiple of the finest step {levels[0]}")
        factors.append(int(round(f)))
    K = T / base
    if abs(K - round(K)) > 1e-8 * K:
        raise ValueError(f"T={T} is not a multiple of the finest step")
    for d, f in zip(levels, factors):
        if round(K) % f:
            raise ValueError(f"step {d} does not divide T={T}")
    return levels, base, factors, int(round(K))


def convergence_study(scheme_names: Sequence, system: SystemDef, z0: PhaseState, T: float, dt_levels,
                      n_paths: int, seed: int, reference_kind: str = "exact", threads: int = 1,
                      cfg: Optional[SolverConfig] = None, chunk: int = DEFAULT_CHUNK, max_drop: float = 0.01,
                      n_boot: int = BOOTSTRAP_SAMPLES) -> list:
    """Mean-square errors at time ``T`` for several schemes on common Brownian paths.

    ``reference_kind`` is ``"exact"`` (Kubo closed form) or ``"fine"``
    (taylor32 at ``dt_min / REFERENCE_REFINEMENT`` on the same path).  Each
    level's increments are coarsened from one fine path per trial.
    """
    methods = [_as_method(s) for s in scheme_names]
    if not methods:
        raise ValueError("no schemes given")
    for m in methods:
        m.check(system)
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if reference_kind == "exact":
        if system.name != "kubo":
            raise ConfigurationError("the exact reference is available for the Kubo oscillator only")
        refine = 1
    elif reference_kind == "fine":
        refine = REFERENCE_REFINEMENT
    else:
        raise ValueError("reference must be 'exact' or 'fine'")
    levels, base, factors, K = _levels(float(T), dt_levels, refine)
    with_dZ = reference_kind == "fine" or any(m.needs_dZ for m in methods)
    M = system.noise_channels
    cfg = replace(cfg, on_failure="mask") if cfg is not None else SolverConfig(on_failure="mask")
    ref_method = make_stepper("taylor32")
    S, L = len(methods), len(levels)

    def work(trials):
        path = sample_paths(seed, trials, K, base, max(M, 1), with_dZ)
        n = len(trials)
        if reference_kind == "exact":
            Wt = path.W_final()[:, :1]
            ref = reference.kubo_exact(z0.q, z0.p, system.params["beta"], T, Wt).as_vector()
            ref_fail = np.zeros(n, bool)
        else:
            run = integrate(ref_method, system, z0, path, cfg)
            ref, ref_fail = run.final.as_vector(), run.failed
        sq = np.empty((S, L, n))
        fail = np.zeros((S, n), bool)
        for l, f in enumerate(factors):
            coarse = path.coarsen(f)
            for s, m in enumerate(methods):
                run = integrate(m, system, z0, coarse, cfg)
                d = run.final.as_vector() - ref
                sq[s, l] = np.sum(d * d, axis=-1)
                fail[s] |= run.failed
        return sq, fail, ref_fail

    parts = _map_chunks(work, np.arange(n_paths), threads, chunk)
    sq = np.concatenate([p[0] for p in parts], axis=-1)
    fail = np.concatenate([p[1] for p in parts], axis=-1)
    ref_fail = np.concatenate([p[2] for p in parts])
    out = []
    dts = np.array(levels)
    for s, m in enumerate(methods):
        drop = fail[s] | ref_fail | ~np.all(np.isfinite(sq[s]), axis=0)
        _check_drops(int(drop.sum()), n_paths, max_drop, m.name)
        keep = sq[s][:, ~drop]
        n = keep.shape[1]
        mse = keep.mean(axis=1)
        err = np.sqrt(mse)
        se = keep.std(axis=1, ddof=1) / np.sqrt(n) / (2.0 * np.where(err > 0, err, 1.0))
        order = fit_order(dts, err)
        boot = _bootstrap_orders(dts, keep, seed, n_boot) if n_boot > 1 else np.array([order])
        out.append(ConvergenceResult(
            m.name, system.name, levels, err.tolist(), se.tolist(), order,
            float(boot.std(ddof=1)) if boot.size > 1 else 0.0, n, int(drop.sum()), int(seed),
            reference_kind, float(T),
            {"symplectic": m.symplectic, "reference_dt": base if reference_kind == "fine" else None},
        ))
    return out


def ms_convergence(scheme, system: SystemDef, z0: PhaseState, T: float, dt_levels, n_paths: int, seed: int,
                   reference_kind: str = "exact", **kwargs) -> ConvergenceResult:
    """Single-scheme :func:`convergence_study`."""
    return convergence_study([scheme], system, z0, T, dt_levels, n_paths, seed, reference_kind, **kwargs)[0]


# -- energy ---------------------------------------------------------------------

@dataclass
class EnergyResult:
    scheme: str
    system: str
    times: np.ndarray
    mean_H: np.ndarray
    stderr: np.ndarray
    slope: float
    n_paths: int
    n_dropped: int
    seed: int
    dt: float
    per_path: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "scheme": self.scheme, "system": self.system, "dt": self.dt, "T": float(self.times[-1]),
            "slope": self.slope, "n_paths": self.n_paths, "n_dropped": self.n_dropped, "seed": self.seed,
            "H0": float(self.mean_H[0]), "H_final": float(self.mean_H[-1]),
        }


def _steps(T, dt):
    K = T / dt
    if dt <= 0 or abs(K - round(K)) > 1e-8 * max(K, 1.0) or round(K) < 1:
        raise ValueError(f"dt={dt} does not divide T={T}")
    return int(round(K))


def energy_experiment(scheme, system: SystemDef, z0: PhaseState, T: float, dt: float, n_paths: int, seed: int,
                      threads: int = 1, cfg: Optional[SolverConfig] = None, keep_paths: bool = False,
                      chunk: int = 250, max_drop: float = 0.01) -> EnergyResult:
    """``E[H]`` at every step across ``n_paths`` trials, with its least-squares slope in time."""
    method = _as_method(scheme)
    method.check(system)
    K = _steps(float(T), float(dt))
    M = max(system.noise_channels, 1)
    cfg = replace(cfg, on_failure="mask") if cfg is not None else SolverConfig(on_failure="mask")

    def work(trials):
        path = sample_paths(seed, trials, K, dt, M, method.needs_dZ)
        run = integrate(method, system, z0, path, cfg, record_energy=True)
        return run.energy, run.failed

    parts = _map_chunks(work, np.arange(n_paths), threads, chunk)
    H = np.concatenate([p[0] for p in parts])
    failed = np.concatenate([p[1] for p in parts])
    _check_drops(int(failed.sum()), n_paths, max_drop, method.name)
    keep = H[~failed]
    if keep.shape[0] == 0:
        raise ExperimentFailure(f"{method.name}: every trial failed")
    times = np.arange(K + 1) * float(dt)
    # huge but finite energies from unstable schemes may overflow the moments
    with np.errstate(over="ignore", invalid="ignore"):
        mean = keep.mean(axis=0)
        se = keep.std(axis=0, ddof=1) / np.sqrt(keep.shape[0]) if keep.shape[0] > 1 else np.zeros_like(mean)
        slope = fit_line(times, mean)[0] if np.all(np.isfinite(mean)) else float("nan")
    return EnergyResult(method.name, system.name, times, mean, se, slope, int(keep.shape[0]),
                        int(failed.sum()), int(seed), float(dt), keep if keep_paths else None)


# -- single trajectory ----------------------------------------------------------

@dataclass
class TrajectoryResult:
    scheme: str
    times: np.ndarray
    q: np.ndarray      # (K+1, N)
    p: np.ndarray
    H: np.ndarray
    max_iterations: int

    def state(self) -> PhaseState:
        return PhaseState(self.q, self.p)


def trajectory(scheme, system: SystemDef, z0: PhaseState, T: float, dt: float, seed: int, trial: int = 0,
               cfg: Optional[SolverConfig] = None, path: Optional[WienerPath] = None) -> TrajectoryResult:
    """One sample path; step failures raise unless ``cfg`` says otherwise."""
    method = _as_method(scheme)
    method.check(system)
    K = _steps(float(T), float(dt))
    if path is None:
        path = sample_path(seed, K, dt, max(system.noise_channels, 1), method.needs_dZ, trial)
    run = integrate(method, system, z0, path, cfg or SolverConfig(), record_states=True)
    N = system.dim
    z = run.states[:, 0]
    q, p = z[:, :N], z[:, N:]
    return TrajectoryResult(method.name, np.arange(K + 1) * float(dt), q, p,
                            np.asarray(system.energy(q, p), float), run.max_iterations)

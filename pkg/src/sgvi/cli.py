"""Command-line frontend.

Every subcommand resolves its configuration from built-in defaults, an
optional ``--config`` JSON file (or a CSV written by an earlier run) and the
explicit flags, in that order, and echoes the resolved configuration into its
outputs.  Exit codes: 0 success, 2 invalid configuration, 3 experiment failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, diagnostics, harness, schemes, sprk
from ._solve import SolverConfig, StepFailure
from .model import BUILTIN_SYSTEMS, ConfigurationError, EvaluatorError, PhaseState, get_system
from .noise import increments_from_normals, trial_rng

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
SEED_ENV = "SGVI_SEED"
CONTROL_METHODS = ("milstein", "taylor32")

DEFAULTS = {
    "common": {"system": "kubo", "beta": 0.1, "gamma": 0.1, "sigma": 0.1, "q0": [0.0], "p0": [1.0],
               "threads": 1, "out": None, "truncate_A": None, "tol": 1e-12},
    "convergence": {"schemes": ["P1N1Q2Gau"], "T": 3.2, "dt_levels": [0.0025, 0.005, 0.01, 0.02],
                    "paths": 1000, "reference": "auto"},
    "energy": {"system": "anharmonic", "scheme": "P1N1Q1RecN2Q2Lob", "T": 100.0, "dt": 0.25, "paths": 2000},
    "trajectory": {"scheme": "P1N1Q2Gau", "T": 10.0, "dt": 0.01, "trial": 0, "generator": "auto"},
    "tableau": {"scheme": "P2N2Q2Otr"},
    "check": {"schemes": ["all"], "systems": ["kubo", "synchrotron", "planar-rotational"], "draws": 10,
              "fd_step": 1e-6, "momentum_steps": 100},
}


class UsageError(ValueError):
    pass


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser, kind: str):
    p.add_argument("--config", help="JSON config file, or a CSV written by an earlier run")
    p.add_argument("--seed", type=int, help=f"base seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--out", help="output CSV path (a .json summary is written next to it); default stdout")
    if kind == "tableau":
        return
    p.add_argument("--system", choices=sorted(BUILTIN_SYSTEMS) if kind != "check" else None,
                   help="builtin system" if kind != "check" else argparse.SUPPRESS)
    p.add_argument("--beta", type=float, help="noise intensity")
    p.add_argument("--gamma", type=float, help="anharmonic coefficient")
    p.add_argument("--sigma", type=float, help="planar-rotational noise intensity")
    p.add_argument("--q0", type=_floats, help="initial position (comma separated)")
    p.add_argument("--p0", type=_floats, help="initial momentum (comma separated)")
    p.add_argument("--threads", type=int, help="worker threads for independent trials")
    p.add_argument("--truncate-A", dest="truncate_A", type=float,
                   help="retry failed Newton solves with increments clamped to [-A, A]")
    p.add_argument("--tol", type=float, help="Newton tolerance (max-norm)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgvi", description="Stochastic Galerkin variational integrators")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="mean-square error against step size")
    _add_common(p, "convergence")
    p.add_argument("--schemes", type=_names, help="comma-separated scheme ids (also milstein, taylor32)")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--dt-levels", dest="dt_levels", type=_floats, help="comma-separated step sizes")
    p.add_argument("--paths", type=int, help="number of sample paths")
    p.add_argument("--reference", choices=["auto", "exact", "fine"],
                   help="exact (Kubo only) or fine-step taylor32; auto picks exact for Kubo")

    p = sub.add_parser("energy", help="mean Hamiltonian over time")
    _add_common(p, "energy")
    p.add_argument("--scheme")
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--paths", type=int)

    p = sub.add_parser("trajectory", help="one sample path with energy and momentum maps")
    _add_common(p, "trajectory")
    p.add_argument("--scheme")
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--trial", type=int, help="trial index within the seed's streams")
    p.add_argument("--generator", choices=["auto", "none", "rotation"],
                   help="linear symmetry whose momentum map is reported")

    p = sub.add_parser("tableau", help="print a scheme's coefficients")
    _add_common(p, "tableau")
    p.add_argument("--scheme")

    p = sub.add_parser("check", help="symplecticity and momentum checks per scheme and system")
    _add_common(p, "check")
    p.add_argument("--schemes", type=_names, help="scheme ids, 'all', plus milstein/taylor32 controls")
    p.add_argument("--systems", type=_names)
    p.add_argument("--draws", type=int, help="random (z, dt, dW) draws per pair")
    p.add_argument("--fd-step", dest="fd_step", type=float)
    p.add_argument("--momentum-steps", dest="momentum_steps", type=int)
    return ap


def _read_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        cfg = json.loads(text)
    else:
        cfg = None
        for line in text.splitlines():
            if line.startswith("# {"):
                cfg = json.loads(line[2:])
                break
        if cfg is None:
            raise UsageError(f"{path}: no JSON configuration found")
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: configuration must be a JSON object")
    return cfg


def resolve_config(args: argparse.Namespace, environ=None) -> dict:
    """Defaults, then the config file, then explicit flags."""
    environ = os.environ if environ is None else environ
    kind = args.command
    cfg = {"command": kind}
    if kind != "tableau":
        cfg.update(DEFAULTS["common"])
    else:
        cfg["out"] = None
    cfg.update(DEFAULTS[kind])
    env_seed = environ.get(SEED_ENV)
    try:
        cfg["seed"] = int(env_seed) if env_seed not in (None, "") else 0
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}")
    if args.config:
        file_cfg = _read_config_file(args.config)
        if file_cfg.get("command", kind) != kind:
            raise UsageError(f"config is for {file_cfg['command']!r}, not {kind!r}")
        unknown = set(file_cfg) - set(cfg) - {"command", "version"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k != "version"})
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    cfg["version"] = __version__
    return cfg


def _system(cfg):
    return get_system(cfg["system"], beta=cfg.get("beta"), gamma=cfg.get("gamma"), sigma=cfg.get("sigma"))


def _z0(cfg, system):
    q0 = np.asarray(cfg["q0"], float).reshape(-1)
    p0 = np.asarray(cfg["p0"], float).reshape(-1)
    if q0.size == 1 and system.dim > 1:
        q0 = np.full(system.dim, q0[0])
    if p0.size == 1 and system.dim > 1:
        p0 = np.full(system.dim, p0[0])
    if q0.size != system.dim or p0.size != system.dim:
        raise UsageError(f"q0 and p0 need {system.dim} components for {system.name}")
    return PhaseState(q0, p0)


def _solver(cfg):
    return SolverConfig(tol=float(cfg["tol"]), truncate_A=cfg.get("truncate_A"))


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Output:
    """CSV (timestamp line, JSON provenance line, header, rows) plus an optional JSON summary."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.buf = io.StringIO()
        self.summary: Optional[dict] = None
        self.text: Optional[str] = None

    def table(self, header, rows):
        self.buf.write(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
        self.buf.write("# " + json.dumps(self.cfg, sort_keys=True) + "\n")
        w = csv.writer(self.buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])

    def write(self):
        out = self.cfg.get("out")
        body = self.text if self.text is not None else self.buf.getvalue()
        if not out:
            sys.stdout.write(body)
            if self.summary is not None:
                sys.stderr.write(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
            return
        targets = [(Path(out), body)]
        if self.summary is not None:
            targets.append((Path(out).with_suffix(".json"), json.dumps(self.summary, indent=2, sort_keys=True)
                            + "\n"))
        written = []
        try:
            for path, text in targets:
                tmp = path.with_name(path.name + ".partial")
                tmp.write_text(text)
                written.append((tmp, path))
            for tmp, path in written:
                os.replace(tmp, path)
        except BaseException:
            for tmp, path in written:
                for f in (tmp, path):
                    if f.exists():
                        f.unlink()
            raise


def _json_ready(x):
    if isinstance(x, dict):
        return {k: _json_ready(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_ready(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_ready(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


# -- subcommands ----------------------------------------------------------------

def cmd_convergence(cfg, out: _Output):
    system = _system(cfg)
    z0 = _z0(cfg, system)
    ref = cfg["reference"]
    if ref == "auto":
        ref = "exact" if system.name == "kubo" else "fine"
    results = harness.convergence_study(cfg["schemes"], system, z0, float(cfg["T"]), cfg["dt_levels"],
                                        int(cfg["paths"]), int(cfg["seed"]), ref, threads=int(cfg["threads"]),
                                        cfg=_solver(cfg))
    rows = []
    for r in results:
        for dt, e, se in zip(r.dt_levels, r.ms_errors, r.stderr):
            rows.append((r.scheme, dt, e, se, r.n_paths))
    out.table(["scheme", "dt", "ms_error", "stderr", "n_paths"], rows)
    out.summary = _json_ready({"config": cfg, "reference": ref, "results": [
        {"scheme": r.scheme, "fitted_order": r.fitted_order, "order_stderr": r.order_stderr,
         "n_paths": r.n_paths, "n_dropped": r.n_dropped, "symplectic": r.extra["symplectic"]} for r in results]})


def cmd_energy(cfg, out: _Output):
    system = _system(cfg)
    z0 = _z0(cfg, system)
    res = harness.energy_experiment(cfg["scheme"], system, z0, float(cfg["T"]), float(cfg["dt"]),
                                    int(cfg["paths"]), int(cfg["seed"]), threads=int(cfg["threads"]),
                                    cfg=_solver(cfg))
    out.table(["scheme", "t", "mean_H", "stderr"],
              [(res.scheme, t, m, s) for t, m, s in zip(res.times, res.mean_H, res.stderr)])
    summary = res.summary()
    if system.name == "anharmonic":
        summary["expected_slope"] = 0.5 * system.params["beta"] ** 2
    summary["symplectic"] = harness.make_stepper(cfg["scheme"]).symplectic
    out.summary = _json_ready({"config": cfg, "result": summary})


def _generator(cfg, system):
    g = cfg["generator"]
    if g == "auto":
        g = "rotation" if system.name == "planar-rotational" else "none"
    if g == "none":
        return None
    if system.dim != 2:
        raise UsageError("the rotation generator needs a planar system")
    return diagnostics.ROTATION_GENERATOR


def cmd_trajectory(cfg, out: _Output):
    system = _system(cfg)
    z0 = _z0(cfg, system)
    G = _generator(cfg, system)
    res = harness.trajectory(cfg["scheme"], system, z0, float(cfg["T"]), float(cfg["dt"]), int(cfg["seed"]),
                             int(cfg["trial"]), cfg=_solver(cfg))
    N = system.dim
    header = ["t"] + [f"q{i + 1}" for i in range(N)] + [f"p{i + 1}" for i in range(N)] + ["H"]
    J = None
    if G is not None:
        header.append("J_rotation")
        J = diagnostics.momentum_series((res.q, res.p), G)
    rows = []
    for k, t in enumerate(res.times):
        row = [t, *res.q[k], *res.p[k], res.H[k]]
        if J is not None:
            row.append(J[k])
        rows.append(row)
    out.table(header, rows)
    summary = {"scheme": res.scheme, "max_energy_drift": float(np.max(np.abs(res.H - res.H[0]))),
               "max_newton_iterations": res.max_iterations}
    if J is not None:
        summary["max_momentum_drift"] = float(np.max(np.abs(J - J[0])))
    out.summary = _json_ready({"config": cfg, "result": summary})


def _describe(info: schemes.SchemeInfo) -> str:
    if info.is_order32:
        return sprk.format_tableau(info.scheme)
    if info.tableau is not None:
        return sprk.format_tableau(info.tableau)
    sc = info.scheme
    lines = [f"scheme {info.id}  degree={sc.degree}  (no partitioned Runge-Kutta form: drift and noise "
             "rules differ)"]
    for label, rule in (("drift", sc.drift_rule), ("noise", sc.diffusion_rule)):
        lines.append(f"{label} nodes:   " + "  ".join(sprk.fraction_text(c) for c in rule.nodes))
        lines.append(f"{label} weights: " + "  ".join(sprk.fraction_text(w) for w in rule.weights))
    return "\n".join(lines)


def cmd_tableau(cfg, out: _Output):
    info = schemes.build(cfg["scheme"])
    flags = (f"explicit_for_separable={info.explicit_for_separable}  "
             f"requires_h_independent_of_p={info.requires_h_independent_of_p}  "
             f"supports_multichannel={info.supports_multichannel}")
    out.text = _describe(info) + "\n" + flags + "\n"


def _check_schemes(names):
    out = []
    for n in names:
        if n.lower() == "all":
            out.extend(schemes.SCHEME_IDS)
        else:
            out.append(n)
    seen = []
    for n in out:
        m = harness.make_stepper(n)
        if m.name not in [s.name for s in seen]:
            seen.append(m)
    return seen


def _draw_inputs(rng, system, dZ_needed):
    N, M = system.dim, system.noise_channels
    z = PhaseState(rng.uniform(-1.5, 1.5, N), rng.uniform(-1.5, 1.5, N))
    dt = float(rng.uniform(1e-3, 0.25))
    chi = np.clip(rng.standard_normal(M), -3, 3)
    eta = rng.standard_normal(M)
    dW, dZ = increments_from_normals(chi, dt, eta)
    return z, dt, dW, (dZ if dZ_needed else None)


def cmd_check(cfg, out: _Output):
    methods = _check_schemes(cfg["schemes"])
    rows, skipped = [], []
    for sname in cfg["systems"]:
        system = get_system(sname, beta=cfg.get("beta"), gamma=cfg.get("gamma"), sigma=cfg.get("sigma"))
        for m in methods:
            try:
                m.check(system)
            except ConfigurationError as exc:
                skipped.append({"scheme": m.name, "system": system.name, "reason": str(exc)})
                continue
            rng = trial_rng(int(cfg["seed"]), 0)
            worst = 0.0
            for _ in range(int(cfg["draws"])):
                z, dt, dW, dZ = _draw_inputs(rng, system, m.needs_dZ)
                rep = diagnostics.symplectic_defect(m.step, system, z, dt, dW, float(cfg["fd_step"]), dZ=dZ)
                worst = max(worst, rep.defect)
            drift = ""
            if system.name == "planar-rotational":
                res = harness.trajectory(m, system, _z0(cfg, system) if len(cfg["q0"]) == 2 else
                                         PhaseState(np.array([1.0, 0.0]), np.array([0.0, 1.0])),
                                         0.05 * int(cfg["momentum_steps"]), 0.05, int(cfg["seed"]),
                                         cfg=_solver(cfg))
                J = diagnostics.angular_momentum((res.q, res.p))
                drift = float(np.max(np.abs(J - J[0])))
            rows.append((m.name, system.name, worst, drift))
    out.table(["scheme", "system", "symplectic_defect", "momentum_drift"], rows)
    out.summary = _json_ready({"config": cfg, "skipped": skipped,
                               "symplectic": {r[0]: harness.make_stepper(r[0]).symplectic for r in rows}})


COMMANDS = {"convergence": cmd_convergence, "energy": cmd_energy, "trajectory": cmd_trajectory,
            "tableau": cmd_tableau, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        out = _Output(cfg)
        COMMANDS[args.command](cfg, out)
        out.write()
    except (UsageError, ConfigurationError, KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"sgvi: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.ExperimentFailure, StepFailure, EvaluatorError) as exc:
        print(f"sgvi: experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

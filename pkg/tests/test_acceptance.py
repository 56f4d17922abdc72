"""Acceptance criteria, each run at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line (printed immediately and again
in the session summary) before asserting.
"""
import numpy as np
import pytest

from sgvi import galerkin, get_system
from sgvi.diagnostics import angular_momentum, symplectic_defect
from sgvi.harness import ExperimentFailure, convergence_study, energy_experiment, make_stepper, trajectory
from sgvi.model import ConfigurationError, PhaseState
from sgvi.noise import increments_from_normals
from sgvi.schemes import SCHEME_IDS, build, stepper
from sgvi.sprk import check_symplectic, milstein32_tableau, sprk_step

from conftest import ACCEPTANCE_LINES, random_draw, state
from oracles import cayley_rotation, trapezoidal_lagrangian_harmonic, verlet_harmonic

SEED = 42
KUBO_SCHEMES = ["P1N1Q2Gau", "P2N2Q2Lob", "P1N2Q2Lob", "P1N3Q4Lob", "P1N3Q4Mil", "P1N2Q2Otr", "P2N2Q2Otr"]
SYNC_SCHEMES = ["P1N1Q1Rec", "P1N1Q1RecN2Q2Lob", "P1N1Q1RecN1Q2Gau", "P2N2Q2LobN1Q1Rec", "P1N1Q2GauN2Q2Lob",
                "P1N2Q2LobN1Q2Gau"]
ORDER1 = (0.85, 1.15)
ORDER32 = (1.35, 1.65)


def record(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def within(x, band):
    return band[0] <= x <= band[1]


# -- 1. Kubo mean-square order ---------------------------------------------------

@pytest.fixture(scope="module")
def kubo_study():
    return {r.scheme: r for r in convergence_study(
        KUBO_SCHEMES, get_system("kubo", beta=0.1), state(0.0, 1.0), 3.2, [0.0025, 0.005, 0.01, 0.02],
        1000, SEED, "exact", threads=4)}


@pytest.mark.slow
@pytest.mark.parametrize("sid", KUBO_SCHEMES)
def test_c1_kubo_order(sid, kubo_study):
    r = kubo_study[sid]
    ok = within(r.fitted_order, ORDER1)
    record(f"C1 Kubo order {sid}", ok,
           f"{r.fitted_order:.4f} +/- {r.order_stderr:.4f} (band {ORDER1}), errors {np.round(r.ms_errors, 7).tolist()}")
    assert ok


# -- 2, 3. Synchrotron mean-square order ------------------------------------------

@pytest.fixture(scope="module")
def sync_study():
    return {r.scheme: r for r in convergence_study(
        SYNC_SCHEMES + ["SPRK32Milstein"], get_system("synchrotron", beta=0.1), state(0.0, 1.0), 3.2,
        [0.02, 0.04, 0.08, 0.16], 1000, SEED, "fine", threads=4)}


@pytest.mark.slow
@pytest.mark.parametrize("sid", SYNC_SCHEMES)
def test_c2_synchrotron_order(sid, sync_study):
    r = sync_study[sid]
    ok = within(r.fitted_order, ORDER1)
    record(f"C2 Synchrotron order {sid}", ok, f"{r.fitted_order:.4f} +/- {r.order_stderr:.4f} (band {ORDER1})")
    assert ok


@pytest.mark.slow
def test_c3_order_three_halves(sync_study):
    r = sync_study["SPRK32Milstein"]
    ok = within(r.fitted_order, ORDER32)
    record("C3 SPRK32Milstein order", ok,
           f"{r.fitted_order:.4f} +/- {r.order_stderr:.4f} (band {ORDER32}), errors "
           f"{np.round(r.ms_errors, 9).tolist()}")
    assert ok


# -- 4. exact energy conservation ------------------------------------------------

def test_c4_kubo_midpoint_energy():
    tr = trajectory("P1N1Q2Gau", get_system("kubo", beta=0.1), state(0.0, 1.0), 1000.0, 0.25, SEED)
    drift = float(np.max(np.abs(tr.H - tr.H[0])))
    ok = drift <= 1e-8
    record("C4 Kubo midpoint energy", ok, f"max |H - H0| = {drift:.3e} over {len(tr.H) - 1} steps (limit 1e-8)")
    assert ok


# -- 5. anharmonic mean-energy growth -------------------------------------------

BAND5 = (0.005 * 0.8, 0.005 * 1.2)


@pytest.mark.parametrize("sid", ["P1N1Q1RecN2Q2Lob", "P1N1Q1RecN1Q2Gau", "P2N2Q2Lob"])
def test_c5_anharmonic_slope(sid):
    res = energy_experiment(sid, get_system("anharmonic", gamma=0.1, beta=0.1), state(0.0, 1.0), 100.0, 0.25,
                            2000, SEED, threads=4)
    ok = within(res.slope, BAND5)
    record(f"C5 anharmonic slope {sid}", ok, f"{res.slope:.5f} (band [{BAND5[0]:.4f}, {BAND5[1]:.4f}])")
    assert ok


def test_c5_milstein_control_leaves_band():
    system = get_system("anharmonic", gamma=0.1, beta=0.1)
    try:
        # most paths diverge, so every trial is kept for the statistic
        res = energy_experiment("milstein", system, state(0.0, 1.0), 100.0, 0.05, 2000, SEED, threads=4,
                                max_drop=1.0)
        slope, note = res.slope, f"{res.n_dropped} of 2000 paths diverged"
    except ExperimentFailure as exc:
        slope, note = float("nan"), str(exc)
    ok = not within(slope, BAND5)
    record("C5 milstein control outside band", ok, f"slope {slope:.3e}; {note}")
    assert ok


# -- 6. symplecticity ------------------------------------------------------------

def _draw(rng, system, needs_dZ):
    z, dt, dW = random_draw(rng, system)
    dZ = None
    if needs_dZ:
        _, dZ = increments_from_normals(dW / np.sqrt(dt), dt, rng.standard_normal(system.noise_channels))
    return z, dt, dW, dZ


def test_c6_symplecticity_suite():
    rng = np.random.default_rng(SEED)
    worst, checked, skipped = 0.0, 0, []
    for sname in ("kubo", "synchrotron"):
        system = get_system(sname, beta=0.1)
        for sid in SCHEME_IDS:
            m = make_stepper(sid)
            try:
                m.check(system)
            except ConfigurationError:
                skipped.append(f"{sid}/{sname}")
                continue
            for _ in range(10):
                z, dt, dW, dZ = _draw(rng, system, m.needs_dZ)
                worst = max(worst, symplectic_defect(m.step, system, z, dt, dW, dZ=dZ).defect)
            checked += 1
    control = 0.0
    for sname in ("kubo", "synchrotron"):
        system = get_system(sname, beta=0.1)
        m = make_stepper("milstein")
        for _ in range(10):
            z, dt, dW, _ = _draw(rng, system, False)
            control = max(control, symplectic_defect(m.step, system, z, dt, dW).defect)
    ok = worst <= 1e-6 and control >= 1e-3
    record("C6 symplecticity", ok, f"worst defect {worst:.2e} over {checked} scheme/system pairs (limit 1e-6); "
           f"milstein max defect {control:.2e} (needs >= 1e-3); skipped {skipped}")
    assert ok


# -- 7. tableau identities -------------------------------------------------------

H, T3, S6 = 1 / 2, 2 / 3, -1 / 6
PRINTED = {
    "P1N1Q2Gau": dict(a=[[H]], abar=[[H]], b=[[H]], bbar=[[H]], alpha=[1.0], beta=[1.0]),
    "P2N2Q2Lob": dict(a=[[0, 0], [H, H]], abar=[[H, 0], [H, 0]], b=[[0, 0], [H, H]], bbar=[[H, 0], [H, 0]],
                      alpha=[H, H], beta=[H, H]),
    "P2N2Q2Otr": dict(a=[[H, S6], [T3, 0]], abar=[[0, S6], [T3, H]], b=[[H, S6], [T3, 0]],
                      bbar=[[0, S6], [T3, H]], alpha=[H, H], beta=[H, H]),
}


def test_c7_tableau_identities():
    worst_val, worst_symp = 0.0, 0.0
    for sid, printed in PRINTED.items():
        tab = build(sid).tableau
        for k, v in printed.items():
            worst_val = max(worst_val, float(np.max(np.abs(getattr(tab, k) - np.array(v, float)))))
        worst_symp = max(worst_symp, check_symplectic(tab))
    t = milstein32_tableau()
    stored = dict(a=[[0, 0], [T3, 0]], abar=[[1 / 4, 0], [1 / 4, 3 / 4]], bbar=[[-H, 0], [-H, 3 / 2]],
                  lambar=[[3 / 2, 0], [3 / 2, -3 / 2]], alpha=[T3, 1 / 3], alphabar=[1 / 4, 3 / 4],
                  betabar=[-H, 3 / 2], gammabar=[3 / 2, -3 / 2])
    verbatim = all(np.array_equal(getattr(t, k), np.array(v, float)) for k, v in stored.items())
    ok = worst_val <= 1e-15 and worst_symp <= 1e-13 and verbatim
    record("C7 tableau identities", ok, f"max coefficient error {worst_val:.1e} (limit 1e-15), symplectic "
           f"condition violation {worst_symp:.1e} (limit 1e-13), order-3/2 tableau verbatim: {verbatim}")
    assert ok


# -- 8. Galerkin and SPRK equivalence -------------------------------------------

def test_c8_galerkin_sprk_equivalence():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for sid in PRINTED:
        info = build(sid)
        for sname in ("kubo", "synchrotron"):
            system = get_system(sname, beta=0.1)
            for _ in range(20):
                z, dt, dW = random_draw(rng, system)
                a, _, _ = galerkin.step(info.scheme, system, z, dt, dW)
                b, _ = sprk_step(info.tableau, system, z, dt, dW)
                worst = max(worst, float(np.max(np.abs(a.as_vector() - b.as_vector()))))
    ok = worst <= 1e-10
    record("C8 Galerkin vs SPRK", ok, f"max difference {worst:.1e} over 120 steps (limit 1e-10)")
    assert ok


# -- 9. momentum map ---------------------------------------------------------------

def test_c9_angular_momentum():
    system = get_system("planar-rotational", sigma=0.1)
    z0 = PhaseState(np.array([1.0, 0.2]), np.array([-0.1, 0.8]))
    drifts = {}
    for sid in ("P2N2Q2Lob", "P1N1Q2Gau"):
        tr = trajectory(sid, system, z0, 10.0, 0.1, SEED)
        J = angular_momentum((tr.q, tr.p))
        drifts[sid] = float(np.max(np.abs(J - J[0])))
    ok = max(drifts.values()) <= 1e-9
    record("C9 angular momentum", ok, ", ".join(f"{k} {v:.1e}" for k, v in drifts.items()) + " (limit 1e-9)")
    assert ok


# -- 10. deterministic limits ------------------------------------------------------

def test_c10_deterministic_limits():
    system = get_system("kubo", beta=0.0)
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for sid, oracle in (("P1N1Q2Gau", cayley_rotation), ("P2N2Q2Lob", verlet_harmonic),
                        ("P1N2Q2Lob", trapezoidal_lagrangian_harmonic)):
        for _ in range(10):
            q, p = rng.uniform(-1.5, 1.5, 2)
            dt = float(rng.uniform(1e-3, 0.25))
            q1, p1 = oracle(q, p, dt)
            for z, *_ in (stepper(sid)(system, state(q, p), dt, 0.0),
                          galerkin.step(build(sid).scheme, system, state(q, p), dt, 0.0)):
                worst = max(worst, abs(z.q[0] - q1), abs(z.p[0] - p1))
    ok = worst <= 1e-12
    record("C10 deterministic limits", ok, f"max deviation {worst:.1e} (limit 1e-12)")
    assert ok

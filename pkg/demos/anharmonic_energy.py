"""Linear growth of the mean energy for the additively forced quartic oscillator.

For H = p^2/2 + gamma q^4 driven by h = beta q, E[H](t) = H(0) + beta^2 t / 2.
A symplectic scheme follows this law at a large step; Milstein does not.
"""
import numpy as np

from sgvi import PhaseState, get_system
from sgvi.harness import ExperimentFailure, energy_experiment

GAMMA, BETA, T, PATHS, SEED = 0.1, 0.1, 100.0, 1000, 3


def main():
    system = get_system("anharmonic", gamma=GAMMA, beta=BETA)
    z0 = PhaseState(np.array([0.0]), np.array([1.0]))
    print(f"expected slope {BETA ** 2 / 2:.4f}")
    for scheme in ("P1N1Q1RecN2Q2Lob", "P2N2Q2Lob"):
        res = energy_experiment(scheme, system, z0, T, 0.25, PATHS, SEED)
        print(f"{scheme:>18}  dt=0.25  slope {res.slope:.5f}  E[H](T) {res.mean_H[-1]:.3f} +/- {res.stderr[-1]:.3f}")
    try:
        res = energy_experiment("milstein", system, z0, T, 0.05, PATHS, SEED, max_drop=1.0)
        print(f"{'milstein':>18}  dt=0.05  slope {res.slope:.3e}  ({res.n_dropped} of {PATHS} paths diverged)")
    except ExperimentFailure as exc:
        print(f"{'milstein':>18}  dt=0.05  {exc}")


if __name__ == "__main__":
    main()

"""Mean-square convergence on the Kubo oscillator against its exact solution.

Also prints the step-size error predicted from the midpoint phase error,
which explains why the fitted slope sits a little above one on this grid:
each midpoint step rotates by 2 arctan(theta/2) instead of theta = dt + beta dW,
so the root-mean-square error at time T is close to T dt (beta^2/4 + dt/12).
"""
import numpy as np

from sgvi import PhaseState, get_system
from sgvi.harness import convergence_study

BETA, T, PATHS, SEED = 0.1, 3.2, 400, 7
LEVELS = [0.0025, 0.005, 0.01, 0.02]


def main():
    system = get_system("kubo", beta=BETA)
    z0 = PhaseState(np.array([0.0]), np.array([1.0]))
    results = convergence_study(["P1N1Q2Gau", "P2N2Q2Lob", "taylor32"], system, z0, T, LEVELS, PATHS, SEED)
    dts = np.array(LEVELS)
    predicted = T * dts * (BETA ** 2 / 4 + dts / 12)
    print(f"{'dt':>8} " + " ".join(f"{r.scheme:>12}" for r in results) + f" {'midpoint model':>15}")
    for i, dt in enumerate(LEVELS):
        print(f"{dt:8.4f} " + " ".join(f"{r.ms_errors[i]:12.3e}" for r in results) + f" {predicted[i]:15.3e}")
    slope = np.polyfit(np.log(dts), np.log(predicted), 1)[0]
    for r in results:
        print(f"{r.scheme:>12}: order {r.fitted_order:.3f} +/- {r.order_stderr:.3f}")
    print(f"midpoint model: order {slope:.3f}")


if __name__ == "__main__":
    main()

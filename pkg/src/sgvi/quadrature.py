"""Lagrange bases on [0, 1] and the quadrature rules used to build schemes."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "LagrangeBasis",
    "QuadratureRule",
    "lagrange_eval",
    "lagrange_deriv",
    "named_rule",
    "RULE_NAMES",
    "weights_from_nodes",
    "cardinal_integrals",
]


def _cardinal_coeffs(nodes: Sequence[Fraction], i: int) -> list:
    """Monomial coefficients (ascending) of the i-th cardinal polynomial, exactly."""
    coeffs = [Fraction(1)]
    for j, x in enumerate(nodes):
        if j == i:
            continue
        denom = nodes[i] - x
        # multiply by (tau - x) / denom
        new = [Fraction(0)] * (len(coeffs) + 1)
        for k, c in enumerate(coeffs):
            new[k + 1] += c / denom
            new[k] -= c * x / denom
        coeffs = new
    return coeffs


def _as_fractions(nodes) -> list:
    fr = [Fraction(x) if isinstance(x, Fraction) else Fraction(float(x)) for x in nodes]
    if len(set(fr)) != len(fr):
        raise ValueError(f"duplicate nodes: {list(map(float, fr))}")
    return fr


class LagrangeBasis:
    """Degree-``s`` Lagrange polynomials through control points ``0 = d_0 < ... < d_s = 1``."""

    def __init__(self, degree: int, control_points=None):
        if degree < 1:
            raise ValueError("degree must be at least 1")
        if control_points is None:
            control_points = [Fraction(k, degree) for k in range(degree + 1)]
        d = _as_fractions(control_points)
        if len(d) != degree + 1:
            raise ValueError("need degree + 1 control points")
        if d[0] != 0 or d[-1] != 1 or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("control points must increase from 0 to 1")
        self.degree = degree
        self.control_points = np.array([float(x) for x in d])
        coeffs = [_cardinal_coeffs(d, mu) for mu in range(degree + 1)]
        self._coef = np.array([[float(c) for c in row] for row in coeffs])
        self._dcoef = np.array([[float(k * c) for k, c in enumerate(row)][1:] + [0.0] for row in coeffs])

    def __repr__(self):
        return f"LagrangeBasis(degree={self.degree}, control_points={self.control_points.tolist()})"

    def values(self, tau) -> np.ndarray:
        """All ``l_mu(tau)``; trailing axis indexes ``mu``."""
        tau = np.asarray(tau, float)
        powers = tau[..., None] ** np.arange(self.degree + 1)
        return powers @ self._coef.T

    def derivatives(self, tau) -> np.ndarray:
        tau = np.asarray(tau, float)
        powers = tau[..., None] ** np.arange(self.degree + 1)
        return powers @ self._dcoef.T


def lagrange_eval(basis: LagrangeBasis, mu: int, tau):
    if not 0 <= mu <= basis.degree:
        raise IndexError(mu)
    return basis.values(tau)[..., mu]


def lagrange_deriv(basis: LagrangeBasis, mu: int, tau):
    if not 0 <= mu <= basis.degree:
        raise IndexError(mu)
    return basis.derivatives(tau)[..., mu]


@dataclass(frozen=True)
class QuadratureRule:
    nodes: tuple
    weights: tuple
    order: int = 0
    name: str = ""

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or not self.nodes:
            raise ValueError("nodes and weights must be non-empty and of equal length")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise ValueError("nodes must be strictly increasing")
        if self.nodes[0] < 0 or self.nodes[-1] > 1:
            raise ValueError("nodes must lie in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.nodes)

    def integrate(self, f) -> float:
        return float(sum(w * f(c) for c, w in zip(self.nodes, self.weights)))


_F = Fraction
_RULES = {
    "midpoint": ((_F(1, 2),), (_F(1),), 2),
    "trapezoidal": ((_F(0), _F(1)), (_F(1, 2), _F(1, 2)), 2),
    "simpson": ((_F(0), _F(1, 2), _F(1)), (_F(1, 6), _F(2, 3), _F(1, 6)), 4),
    "open-trapezoidal": ((_F(1, 3), _F(2, 3)), (_F(1, 2), _F(1, 2)), 2),
    "milne": ((_F(1, 4), _F(1, 2), _F(3, 4)), (_F(2, 3), _F(-1, 3), _F(2, 3)), 4),
    "rectangle": ((_F(1),), (_F(1),), 1),
}
RULE_NAMES = tuple(_RULES)


def named_rule(name: str) -> QuadratureRule:
    key = name.strip().lower().replace("_", "-")
    if key not in _RULES:
        raise KeyError(f"unknown quadrature rule {name!r}; choose from {RULE_NAMES}")
    nodes, weights, order = _RULES[key]
    return QuadratureRule(tuple(float(x) for x in nodes), tuple(float(w) for w in weights), order, key)


def cardinal_integrals(nodes, upper) -> np.ndarray:
    """``out[i, j] = int_0^{upper[i]} lbar_j(tau) dtau`` for the cardinal polynomials on ``nodes``.

    Integration is carried out on exact rational monomial coefficients.
    """
    c = _as_fractions(nodes)
    ups = [u if isinstance(u, Fraction) else Fraction(float(u)) for u in upper]
    out = np.empty((len(ups), len(c)))
    for j in range(len(c)):
        coeffs = _cardinal_coeffs(c, j)
        for i, u in enumerate(ups):
            out[i, j] = float(sum(a * u ** (k + 1) / (k + 1) for k, a in enumerate(coeffs)))
    return out


def weights_from_nodes(nodes) -> np.ndarray:
    """Interpolatory weights ``int_0^1 lbar_i`` of the degree ``len(nodes) - 1`` cardinals."""
    nodes = list(nodes)
    if any(not 0 <= float(x) <= 1 for x in nodes):
        raise ValueError("nodes must lie in [0, 1]")
    return cardinal_integrals(nodes, [Fraction(1)])[0]

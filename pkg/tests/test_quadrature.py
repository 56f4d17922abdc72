from fractions import Fraction

import numpy as np
import pytest

from sgvi.quadrature import (RULE_NAMES, LagrangeBasis, cardinal_integrals, lagrange_deriv, lagrange_eval,
                             named_rule, weights_from_nodes)


def test_linear_basis():
    b = LagrangeBasis(1)
    assert lagrange_eval(b, 0, 0.25) == pytest.approx(0.75)
    assert lagrange_deriv(b, 0, 0.6) == pytest.approx(-1.0)


def test_quadratic_basis():
    b = LagrangeBasis(2)
    assert lagrange_eval(b, 1, 0.5) == pytest.approx(1.0)
    assert abs(lagrange_eval(b, 1, 0.0)) < 1e-15 and abs(lagrange_eval(b, 1, 1.0)) < 1e-15
    assert lagrange_deriv(b, 2, 1.0) == pytest.approx(3.0)


@pytest.mark.parametrize("s", [1, 2, 3, 4])
def test_cardinality_and_partition_of_unity(s, rng):
    b = LagrangeBasis(s)
    assert np.allclose(b.values(b.control_points), np.eye(s + 1), atol=1e-13)
    tau = rng.uniform(0, 1, 50)
    assert np.allclose(b.values(tau).sum(axis=-1), 1.0, atol=1e-12)
    assert np.allclose(b.derivatives(tau).sum(axis=-1), 0.0, atol=1e-11)


def test_basis_validation():
    with pytest.raises(ValueError):
        LagrangeBasis(0)
    with pytest.raises(ValueError):
        LagrangeBasis(2, [0.0, 0.7, 0.5])
    with pytest.raises(IndexError):
        lagrange_eval(LagrangeBasis(1), 2, 0.5)


def test_named_rules():
    assert named_rule("simpson").weights == pytest.approx((1 / 6, 2 / 3, 1 / 6))
    assert named_rule("milne").weights == pytest.approx((2 / 3, -1 / 3, 2 / 3))
    rect = named_rule("rectangle")
    assert rect.nodes == (1.0,) and rect.weights == (1.0,)
    assert named_rule("open-trapezoidal").nodes == pytest.approx((1 / 3, 2 / 3))
    with pytest.raises(KeyError):
        named_rule("gauss7")


@pytest.mark.parametrize("name", RULE_NAMES)
def test_rule_exactness(name):
    rule = named_rule(name)
    assert sum(rule.weights) == pytest.approx(1.0, abs=1e-15)
    for k in range(rule.order):
        assert rule.integrate(lambda x: x ** k) == pytest.approx(1.0 / (k + 1), abs=1e-12)


def test_weights_from_nodes_examples():
    assert weights_from_nodes([0, 1]) == pytest.approx([0.5, 0.5])
    assert weights_from_nodes([0, Fraction(1, 2), 1]) == pytest.approx([1 / 6, 2 / 3, 1 / 6], abs=1e-15)
    assert weights_from_nodes([0.5]) == pytest.approx([1.0])
    with pytest.raises(ValueError):
        weights_from_nodes([0.5, 0.5])


@pytest.mark.parametrize("name", RULE_NAMES)
def test_weights_from_nodes_reproduce_rules(name):
    rule = named_rule(name)
    assert np.allclose(weights_from_nodes(rule.nodes), rule.weights, atol=1e-13)


def test_cardinal_integrals_row_sums():
    out = cardinal_integrals([Fraction(1, 3), Fraction(2, 3)], [Fraction(1, 3), Fraction(1)])
    assert out.sum(axis=1) == pytest.approx([1 / 3, 1.0])

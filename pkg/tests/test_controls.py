import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from condbellman.conditional import ConditionalValue
from condbellman.controls import (BoxSet, ControlSetError, ExplicitGridSet, ResolutionError,
                                  RiskConstrainedSet, UpperLevelSet, bounding_radius,
                                  budget_grid, c1_c2_report, check_c4_surrogate,
                                  check_dimension_stabilization, compositions, default_c4_probe,
                                  discretize, grid_at, is_feasible, radius_at)
from condbellman.generators import EntropicWealthDependent, WealthDynamics
from condbellman.risk import ConditionalRiskMeasure
from condbellman.search import UnboundedError
from condbellman.tree import binomial

R = ConditionalValue.real
V = ConditionalValue.vector


def test_is_feasible_examples():
    tree = binomial(1, p=0.6)
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0))
    x = R(0, [0.7])
    assert is_feasible(rc, tree, x, V(0, [[0.0, 0.0]])).payload.tolist() == [1]
    # c = x and theta = 0 sits on the boundary rho(0) = 0 <= x - c
    assert is_feasible(rc, tree, x, V(0, [[0.0, 0.7]])).payload.tolist() == [1]
    assert is_feasible(rc, tree, x, V(0, [[0.0, 0.8]])).payload.tolist() == [0]
    box = BoxSet(-1.0, 1.0)
    assert is_feasible(box, tree, x, V(0, [[2.0]])).payload.tolist() == [0]
    with pytest.raises(ControlSetError):
        is_feasible(box, tree, x, V(0, [[0.0, 0.0]]))


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_box_radius(d):
    tree = binomial(1)
    M = radius_at(BoxSet(-1.0, 1.0, d), tree, 0, 0.0)
    assert M == pytest.approx(1.1 * math.sqrt(d), abs=1e-3)


def test_risk_constrained_radius_against_root_find():
    # symmetric binomial, gamma = 1: rho(theta dS) = log cosh theta, so the
    # boundary solves log cosh theta = x
    tree = binomial(1, p=0.5)
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0), consumption=False, solvency=False)
    theta = brentq(lambda t: math.log(math.cosh(t)) - 1.0, 0.0, 10.0, xtol=1e-14)
    M = bounding_radius(rc, tree, R(0, [1.0])).payload[0]
    assert M == pytest.approx(1.1 * theta, abs=1e-5)


def test_unbounded_spec_raises():
    tree = binomial(1)
    with pytest.raises(UnboundedError):
        radius_at(BoxSet(-np.inf, np.inf, 2), tree, 0, 0.0)


def test_discretize_examples():
    tree = binomial(1, p=0.6)
    g = discretize(BoxSet(0.0, 1.0), tree, R(0, [0.0]), 0.5)[0]
    assert g[:, 0].tolist() == [0.0, 0.5, 1.0]
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0))
    g = discretize(rc, tree, R(0, [0.0]), 0.05)[0]
    assert g.tolist() == [[0.0, 0.0]]
    grid = np.array([[0.1], [-0.3], [0.7]])
    out = discretize(ExplicitGridSet(grid), tree, R(0, [1.0]), 0.1)[0]
    assert np.array_equal(out, grid)


def test_discretized_points_are_feasible_and_contain_anchor():
    tree = binomial(1, p=0.6)
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0))
    for x in (0.0, 0.3, 1.0, 2.5):
        g = grid_at(rc, tree, 0, x, 0.1)
        assert np.all(rc.feasible(tree, 0, x, g))
        assert np.any(np.all(g == 0.0, axis=1))
        assert np.array_equal(g, g[np.lexsort(g.T[::-1])])


def test_resolution_error_suggests_h():
    tree = binomial(1)
    with pytest.raises(ResolutionError) as err:
        grid_at(BoxSet(-1.0, 1.0, 3), tree, 0, 0.0, 1e-3, max_points=1000)
    assert err.value.suggested_h > 1e-3


def test_c4_surrogate_examples():
    tree = binomial(1, p=0.6)
    box = BoxSet(lower=lambda n, x: -1.0 - x * x, upper=lambda n, x: 1.0 + x)
    rep = check_c4_surrogate(box, tree, 0, *default_c4_probe(box, tree, 0, 0.5))
    assert rep.ok, str(rep)
    open_set = BoxSet(lower=lambda n, x: -10.0, upper=lambda n, x: x, strict=True)
    rep = check_c4_surrogate(open_set, tree, 0, *default_c4_probe(open_set, tree, 0, 0.5))
    assert not rep.get("(i) closedness").passed
    assert rep.get("sequence feasible").passed
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0))
    rep = check_c4_surrogate(rc, tree, 0, *default_c4_probe(rc, tree, 0, 1.0))
    assert rep.ok, str(rep)


def test_c1_c2_pass_for_library_sets():
    tree = binomial(2, p=0.6)
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0))
    assert c1_c2_report(rc, tree, [0.0, 0.5, 2.0]).ok
    assert c1_c2_report(BoxSet(-1.0, 1.0, 2), tree, [-1.0, 3.0]).ok


def test_c1_fails_when_set_is_empty():
    tree = binomial(1)
    empty = BoxSet(lower=1.0, upper=lambda n, x: x)
    rep = c1_c2_report(empty, tree, [0.0, 2.0])
    assert not rep.get("(c1)").passed


@given(st.floats(0.0, 5.0), st.floats(-0.5, 0.5), st.floats(0.0, 1.0))
def test_risk_constrained_membership_oracle(x, theta, c):
    tree = binomial(1, p=0.6)
    rc = RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0), solvency=False)
    rho = math.log(0.6 * math.exp(-theta) + 0.4 * math.exp(theta))
    want = rho <= x - c + 1e-9 and -1e-9 <= c <= x + 1e-9
    assert bool(rc.feasible(tree, 0, x, np.array([[theta, c]]))[0]) == want


def test_upper_level_set_contains_zero():
    tree = binomial(2, p=0.6)
    s = UpperLevelSet(WealthDynamics(False), EntropicWealthDependent(0.5, 2.0), K=0.02)
    for n in range(3):
        assert s.feasible(tree, n, 1.0, np.zeros((1, 1)))[0]


def test_dimension_stabilization():
    tree = binomial(1)
    box = BoxSet(dimension=lambda n, x: 1 if x < 1.0 else 2)
    xs = 1.0 - 2.0 ** -np.arange(1, 20)
    assert check_dimension_stabilization(box, tree, 0, xs, 0.5) == 0
    assert check_dimension_stabilization(box, tree, 0, np.r_[2.0, 2.0, xs], 0.0) == 2


def test_budget_grid_stays_on_hyperplane():
    S = np.array([2.0, 5.0])
    g = budget_grid(S, np.array([1.0, 1.0]), 0.25)
    assert len(g) == len(list(compositions(4, 2)))
    assert np.allclose(g @ S, 7.0) and np.all(g >= 0)

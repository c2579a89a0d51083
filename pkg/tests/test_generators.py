import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from condbellman.conditional import ConditionalValue
from condbellman.generators import (Additive, DomainError, EntropicWealthDependent, NoKError,
                                    PortfolioIdentity, ScalingFamily, TerminalExpUtility,
                                    WealthDynamics, check_generator_conditions, entropic_kernel,
                                    estimate_K, evaluate_backward, evaluate_forward, gamma_family)
from condbellman.tree import binomial, random_tree

R = ConditionalValue.real
V = ConditionalValue.vector

THETA_STAR = 0.5 * math.log(1.5)
GAIN_STAR = -math.log(2 * math.sqrt(0.24))


def test_forward_examples():
    tree = binomial(1, p=0.6)
    v = WealthDynamics()
    assert evaluate_forward(v, tree, R(0, [1.3]), V(0, [[0.0, 0.0]])).payload.tolist() == [1.3, 1.3]
    assert evaluate_forward(v, tree, R(0, [1.0]), V(0, [[1.0, 0.0]])).payload.tolist() == [2.0, 0.0]
    assert evaluate_forward(v, tree, R(0, [1.0]), V(0, [[0.5, 0.25]])).payload.tolist() == [1.25, 0.25]
    out = evaluate_forward(PortfolioIdentity(2), tree, R(0, [0.0]), V(0, [[1.0, 2.0]]))
    assert [r.tolist() for r in out.payload] == [[1.0, 2.0], [1.0, 2.0]]


@given(st.floats(-3, 3), st.floats(0, 1), st.floats(-2, 2), st.floats(-2, 2))
def test_wealth_dynamics_is_affine_in_control(x, lam, a, b):
    tree = binomial(1, p=0.6)
    v = WealthDynamics(consumption=False)
    z1, z2 = np.array([[a]]), np.array([[b]])
    mix = v.step(tree, 0, x, lam * z1 + (1 - lam) * z2)
    assert np.allclose(mix, lam * v.step(tree, 0, x, z1) + (1 - lam) * v.step(tree, 0, x, z2),
                       atol=1e-12)


def test_backward_examples():
    tree = binomial(1, p=0.5)
    u = EntropicWealthDependent(1.0, 1.0)
    got = evaluate_backward(u, tree, R(0, [0.4]), R(1, [0.0, -1.0])).payload[0]
    assert got == pytest.approx(-math.log(0.5 + 0.5 * math.e), abs=1e-14)
    u = EntropicWealthDependent(0.5, 2.0)
    assert evaluate_backward(u, tree, R(0, [0.4]), R(1, [1.7, 1.7])).payload[0] == pytest.approx(1.7)
    with pytest.raises(DomainError):
        evaluate_backward(ScalingFamily(), tree, R(0, [0.0]), R(1, [1.0, 1.0]))
    with pytest.raises(ValueError):
        evaluate_backward(u, tree, R(0, [0.4]), R(1, [np.inf, 0.0]))


def test_gamma_family_shapes():
    g = gamma_family(0.5, 2.0)
    x = np.linspace(-1, 10, 50)
    assert g(-5.0) == pytest.approx(2.0)
    assert np.all(np.diff(g(x)) <= 0)
    assert np.all((g(x) >= 0.5) & (g(x) <= 2.0))
    assert np.all(np.diff(gamma_family(0.5, 2.0, "increasing")(x)) >= 0)


@given(st.integers(0, 5000))
def test_entropic_generator_properties(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 1)
    u = EntropicWealthDependent(0.5, 2.0)
    k = len(tree.children[0])
    x = float(rng.uniform(-2, 3))
    Y1, Y2 = rng.normal(size=(1, k)), rng.normal(size=(1, k))
    c = float(rng.normal())
    # (u5) translation invariance
    assert u.aggregate(tree, 0, x, Y1 + c)[0] == pytest.approx(u.aggregate(tree, 0, x, Y1)[0] + c,
                                                               abs=1e-10)
    # (u4) quasi-concavity in y
    lam = float(rng.uniform())
    mix = u.aggregate(tree, 0, x, lam * Y1 + (1 - lam) * Y2)[0]
    assert mix >= min(u.aggregate(tree, 0, x, Y1)[0], u.aggregate(tree, 0, x, Y2)[0]) - 1e-10
    # (u2') monotone in state and continuation
    Yhi = Y1 + np.abs(rng.normal(size=(1, k)))
    assert u.aggregate(tree, 0, x + 0.5, Yhi)[0] >= u.aggregate(tree, 0, x, Y1)[0] - 1e-10


@given(st.integers(0, 5000))
def test_scaling_family_concavity_step(seed):
    # sum_a (x_a / H) g(w_a) <= g(sum_a (x_a / H) w_a) nodewise
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 1)
    p = tree.child_probs(0)
    A = int(rng.integers(2, 5))
    xa = rng.uniform(0.1, 3.0, size=A)
    w = rng.normal(size=(A, len(p)))
    lhs = np.sum(xa / xa.sum() * entropic_kernel(p, w))
    rhs = entropic_kernel(p, (xa / xa.sum()) @ w)
    assert lhs <= rhs + 1e-12


def test_scaling_family_monotone_step():
    tree = binomial(1, p=0.3)
    u = ScalingFamily()
    rng = np.random.default_rng(0)
    for _ in range(100):
        x1 = rng.uniform(0.1, 2)
        y1 = rng.normal(size=(1, 2))
        x2, y2 = x1 + rng.uniform(0, 1), y1 + rng.uniform(0, 1, size=(1, 2))
        assert u.aggregate(tree, 0, x2, y2)[0] >= u.aggregate(tree, 0, x1, y1)[0] - 1e-12


def test_conditions_pass_for_entropic_preset():
    tree = binomial(2, p=0.6)
    rep = check_generator_conditions(WealthDynamics(False), EntropicWealthDependent(0.5, 2.0), tree)
    assert rep.ok, str(rep)
    assert rep.get("(v5)").passed


def test_increasing_gamma_breaks_u2prime():
    tree = binomial(2, p=0.6)
    u = EntropicWealthDependent(0.5, 2.0, "increasing")
    rep = check_generator_conditions(WealthDynamics(False), u, tree)
    assert not rep.get("(u2')").passed


def test_unbounded_reward_fails_k_bound():
    tree = binomial(1, p=0.6)
    rep = check_generator_conditions(WealthDynamics(True), Additive("quadratic_bonus"), tree)
    assert not rep.get("K-bound").passed


def _dense_grid_gain(p, gamma=1.0):
    theta = np.linspace(-1.0, 1.0, 2_000_001)
    gain = -np.log(p * np.exp(-gamma * theta) + (1 - p) * np.exp(gamma * theta)) / gamma
    i = int(np.argmax(gain))
    return theta[i], gain[i]


def test_estimate_K_binomial_optimum():
    theta_grid, gain_grid = _dense_grid_gain(0.6)
    assert theta_grid == pytest.approx(THETA_STAR, abs=1e-6)
    assert gain_grid == pytest.approx(GAIN_STAR, abs=1e-10)
    tree = binomial(1, p=0.6)
    est = estimate_K(WealthDynamics(False), EntropicWealthDependent(1.0, 1.0), tree, [0.0, 1.0])
    assert est.K == pytest.approx(GAIN_STAR, abs=1e-4)
    assert est.argmax["z"][0] == pytest.approx(THETA_STAR, abs=1e-4)


def test_estimate_K_symmetric_is_zero():
    tree = binomial(2, p=0.5)
    est = estimate_K(WealthDynamics(False), EntropicWealthDependent(1.0, 1.0), tree, [0.0, 1.0])
    assert est.K == pytest.approx(0.0, abs=1e-10)
    assert abs(est.argmax["z"][0]) <= 1e-6


def test_estimate_K_arbitrage_raises():
    tree = binomial(1, p=0.5, up=1.0, down=0.5)
    with pytest.raises(NoKError):
        estimate_K(WealthDynamics(False), EntropicWealthDependent(1.0, 1.0), tree, [1.0])


def test_terminal_exp_utility():
    tree = binomial(1)
    t = TerminalExpUtility(2.0)
    assert t.value(tree, 1, np.array([0.0, 1.0])).tolist() == pytest.approx(
        [0.0, (1 - math.exp(-2.0)) / 2.0])

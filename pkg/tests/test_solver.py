import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condbellman.config import build_problem, parse_config
from condbellman.controls import BoxSet, ExplicitGridSet, RiskConstrainedSet
from condbellman.generators import (Additive, EntropicWealthDependent, TerminalIdentity,
                                    WealthDynamics, estimate_K)
from condbellman.risk import ConditionalRiskMeasure
from condbellman.solver import (GridConfig, GridError, Problem, brute_force_value, extract_policy,
                                interp, nearest_policy_value, pick, random_finite_problem,
                                refinement, solve_backward, verify_k_bound)
from condbellman.tree import binomial

THETA_STAR = 0.5 * math.log(1.5)
GAIN_STAR = -math.log(2 * math.sqrt(0.24))


def entropic_problem(p, T, controls, x0=1.0):
    return Problem(binomial(T, p=p), WealthDynamics(False), EntropicWealthDependent(1.0, 1.0),
                   TerminalIdentity(), controls, x0)


def test_interp_rules():
    xs, ys = np.array([0.0, 1.0, 2.0]), np.array([0.0, 10.0, -np.inf])
    assert interp(xs, ys, 1.0) == 10.0
    assert interp(xs, ys, 0.25) == pytest.approx(2.5)
    assert interp(xs, ys, -5.0) == 0.0
    assert interp(xs, ys, 1.5) == -np.inf


def test_pick_tie_break_lexicographic():
    Z = np.array([[0.5, 0.0], [-0.5, 1.0], [-0.5, 0.0], [1.0, 1.0]])
    vals = np.array([1.0, 1.0 - 1e-12, 1.0, 0.5])
    assert pick(vals, Z) == 2
    assert pick(np.full(4, -np.inf), Z) == 2


def test_no_decision_problem():
    prob = entropic_problem(0.6, 1, ExplicitGridSet(np.zeros((1, 1))), x0=0.7)
    sol = solve_backward(prob)
    assert sol.mode == "exact"
    assert sol.root_value == 0.7
    traj = extract_policy(sol)
    assert traj.value == sol.root_value and traj.controls[0].tolist() == [0.0]


def test_one_period_binomial_optimum():
    prob = entropic_problem(0.6, 1, BoxSet(-10.0, 10.0), x0=1.0)
    sol = solve_backward(prob, GridConfig(points=11, h=0.05))
    assert sol.mode == "grid"
    assert sol.root_value == pytest.approx(1.0 + GAIN_STAR, abs=1e-4)
    traj = extract_policy(sol)
    assert traj.controls[0][0] == pytest.approx(THETA_STAR, abs=1e-4)


def test_brute_force_examples():
    prob = entropic_problem(0.5, 1, ExplicitGridSet(np.array([[-1.0], [0.0], [1.0]])))
    val, assignment = brute_force_value(prob)
    assert assignment[0].tolist() == [0.0]
    # log cosh(1) > 0, so both trades lose against no trade
    assert val == pytest.approx(1.0)
    single = entropic_problem(0.6, 2, ExplicitGridSet(np.array([[0.3]])))
    val, _ = brute_force_value(single)
    assert val == solve_backward(single).root_value


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_oracle_equivalence(seed):
    prob = random_finite_problem(seed)
    sol = solve_backward(prob)
    val, assignment = brute_force_value(prob)
    assert abs(sol.root_value - val) <= 1e-12
    traj = extract_policy(sol)
    assert traj.value == pytest.approx(val, abs=1e-12)


def test_brute_force_budget_guard():
    prob = random_finite_problem(1, T=3, max_controls=4, max_assignments=10 ** 9)
    with pytest.raises(RuntimeError):
        brute_force_value(prob, budget=10)


def test_symmetric_binomial_value_is_state():
    prob = entropic_problem(0.5, 2, BoxSet(-5.0, 5.0))
    sol = solve_backward(prob, GridConfig(points=11, h=0.1))
    for t in range(3):
        for n in prob.tree.stage_range(t):
            xs, ys = sol.values[t].knots(n)
            assert np.max(np.abs(ys - xs)) <= 1e-8
    traj = extract_policy(sol)
    assert all(abs(z[0]) <= 1e-6 for z in traj.controls.values())
    assert verify_k_bound(sol, 0.0).ok


def test_k_sandwich_p06():
    prob = entropic_problem(0.6, 2, BoxSet(-10.0, 10.0))
    K = estimate_K(prob.forward, prob.backward, prob.tree, [0.0, 1.0]).K
    sol = solve_backward(prob, GridConfig(points=11, h=0.05))
    rep = verify_k_bound(sol, K)
    assert rep.ok, str(rep)
    y0 = sol.root_value
    assert 0.0 <= y0 - 1.0 <= 2 * K + 1e-6
    terminal = sol.values[2]
    for n in prob.tree.stage_range(2):
        xs, ys = terminal.knots(n)
        assert np.array_equal(xs, ys)


def _composed_by_hand(tree, states, controls, a=1.0, w=1.0):
    """Additive consumption reward with exponential terminal utility, leaf to root."""
    val = {}
    for n in reversed(range(tree.n_nodes)):
        if tree.stage[n] == tree.T:
            val[n] = (1.0 - math.exp(-a * float(states[n]))) / a
        else:
            c = float(controls[n][-1])
            kids = tree.children[n]
            val[n] = sum(tree.prob[k] * val[k] for k in kids) + w * (1.0 - math.exp(-c))
    return val[0]


@pytest.fixture(scope="module")
def preset32():
    built = build_problem(parse_config(json.dumps({"preset": "paper-example-3.2"})))
    return built, solve_backward(built.problem, built.grid)


def test_preset_trajectory_reproduces_composed_objective(preset32):
    built, sol = preset32
    traj = extract_policy(sol)
    by_hand = _composed_by_hand(built.problem.tree, traj.states, traj.controls)
    assert traj.value == pytest.approx(by_hand, abs=1e-6)
    # the re-optimised policy stays within interpolation error of y_0
    assert abs(traj.gap) <= 1e-3
    for n, z in traj.controls.items():
        assert built.problem.controls.feasible(built.problem.tree, n, float(traj.states[n]), z[None])[0]


def test_preset_stored_policies_are_feasible(preset32):
    built, sol = preset32
    prob = built.problem
    for t in range(prob.tree.T):
        for n in prob.tree.stage_range(t):
            xs, zs = sol.policies[t].controls[n]
            for x, z in zip(xs, zs):
                if np.all(np.isfinite(z)):
                    assert prob.controls.feasible(prob.tree, n, float(x), np.asarray(z)[None])[0]


def test_reoptimisation_beats_nearest_lookup_in_monotone_regime():
    cfg = parse_config(json.dumps({"preset": "paper-example-4.2"}))
    built = build_problem(cfg)
    sol = solve_backward(built.problem, built.grid)
    assert extract_policy(sol).value >= nearest_policy_value(sol) - 1e-9


def test_value_function_is_nodewise():
    prob = entropic_problem(0.6, 2, BoxSet(-5.0, 5.0))
    sol = solve_backward(prob, GridConfig(points=11, h=0.1))
    vf = sol.values[1]
    xs = {1: 0.95, 2: 1.05}
    pasted = [float(vf(n, xs[n])) for n in (1, 2)]
    separate = [float(vf(1, 0.95)), float(vf(2, 1.05))]
    assert pasted == separate


def test_x0_outside_grid_raises():
    prob = entropic_problem(0.6, 1, BoxSet(-1.0, 1.0))
    sol = solve_backward(prob, GridConfig(points=5, h=0.5))
    with pytest.raises(GridError):
        extract_policy(sol, x0=50.0)


def test_solver_is_deterministic():
    prob = Problem(binomial(2, p=0.6), WealthDynamics(True), Additive("consumption_exp"),
                   TerminalIdentity(), RiskConstrainedSet(ConditionalRiskMeasure("entropic", 1.0)), 1.0)
    cfg = GridConfig(points=9, h=0.2)
    a, b = solve_backward(prob, cfg), solve_backward(prob, cfg)
    for t in range(3):
        for n in prob.tree.stage_range(t):
            assert np.array_equal(a.values[t].knots(n)[1], b.values[t].knots(n)[1])


def test_refinement_reports_deltas():
    prob = entropic_problem(0.6, 1, BoxSet(-2.0, 2.0))
    ref = refinement(prob, GridConfig(points=5, h=0.2), levels=3)
    assert len(ref.values) == 3 and len(ref.deltas) == 2
    assert [lv[0] for lv in ref.levels] == [5, 9, 17]
    assert any("contraction ratio" in line for line in ref.lines())

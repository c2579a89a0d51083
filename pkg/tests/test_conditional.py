import numpy as np
import pytest
from hypothesis import given, strategies as st

from condbellman.conditional import (ConditionalValue, check_stability, concatenate,
                                     conditional_expectation, essential_inf, essential_sup,
                                     measurable_subsequence, metric, mismatches, random_value)
from condbellman.risk import ConditionalRiskMeasure, evaluate
from condbellman.tree import StagePartition, binomial, random_tree

R = ConditionalValue.real


def test_concatenate_single_block_is_identity():
    tree = binomial(2)
    x = R(2, [1, 2, 3, 4])
    assert concatenate([x], StagePartition.single(tree, 2)).same_as(x)


def test_concatenate_pointwise_paste():
    out = concatenate([R(1, [5, 7]), R(1, [9, 3])], StagePartition(1, (0, 1)))
    assert out.payload.tolist() == [5, 3]


def test_concatenate_errors():
    with pytest.raises(ValueError):
        concatenate([R(1, [1, 2]), R(2, [1, 2, 3, 4])], StagePartition(1, (0, 1)))
    a = ConditionalValue.vector(1, [[1.0], [2.0, 3.0]])
    b = ConditionalValue.vector(1, [[0.0], [1.0]])
    with pytest.raises(ValueError):
        concatenate([a, b], StagePartition(1, (1, 0)), dims=[2, 1])


def test_concatenate_lifts_partition_to_later_stage():
    tree = binomial(2)
    out = concatenate([R(2, [1, 1, 1, 1]), R(2, [2, 2, 2, 2])], StagePartition(1, (1, 0)), tree)
    assert out.payload.tolist() == [2, 2, 1, 1]


def test_metric_examples():
    assert metric(R(1, [1, 4]), R(1, [3, 1])).payload.tolist() == [2, 3]
    x = ConditionalValue.integer(1, [2, 2])
    assert metric(x, ConditionalValue.integer(1, [2, 5])).payload.tolist() == [0, 1]
    assert np.all(metric(x, x).payload == 0)
    v = ConditionalValue.vector(1, [[3.0, 4.0], [1.0]])
    w = ConditionalValue.vector(1, [[0.0, 0.0], [1.0]])
    assert metric(v, w).payload.tolist() == [5.0, 0.0]
    with pytest.raises(ValueError):
        metric(v, ConditionalValue.vector(1, [[0.0], [1.0]]))


@given(st.integers(0, 10_000), st.sampled_from(["real", "int", "vector"]))
def test_metric_axioms_nodewise(seed, kind):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 2)
    dims = rng.integers(1, 4, size=tree.n_atoms(2))
    x, y, z = (random_value(tree, 2, rng, kind, dims=dims) for _ in range(3))
    dxy, dyx = metric(x, y).payload, metric(y, x).payload
    assert np.all(dxy >= 0)
    assert np.array_equal(dxy, dyx)
    assert np.all(metric(x, x).payload == 0)
    assert np.all((dxy == 0) == np.array([i not in mismatches(x, y) for i in range(len(x))]))
    assert np.all(dxy <= metric(x, z).payload + metric(z, y).payload + 1e-12)


@given(st.integers(0, 10_000))
def test_metric_of_concatenations_is_concatenated_metric(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 2)
    P = StagePartition.random(tree, 2, rng)
    xs = [random_value(tree, 2, rng) for _ in range(P.n_blocks)]
    ys = [random_value(tree, 2, rng) for _ in range(P.n_blocks)]
    lhs = metric(concatenate(xs, P), concatenate(ys, P))
    rhs = concatenate([metric(a, b) for a, b in zip(xs, ys)], P)
    assert lhs.same_as(rhs)


def test_essential_sup_inf():
    assert essential_sup([R(1, [1, 5]), R(1, [4, 2])]).payload.tolist() == [4, 5]
    assert essential_inf([R(1, [1, 5]), R(1, [4, 2])]).payload.tolist() == [1, 2]
    x = R(1, [3, -1])
    assert essential_sup([x]).same_as(x)
    assert essential_sup([x, R(1, [np.inf, 0])]).payload.tolist() == [np.inf, 0]
    with pytest.raises(ValueError):
        essential_sup([])


def test_conditional_expectation_examples():
    tree = binomial(2, p=0.6)
    assert conditional_expectation(tree, R(1, [10, 0]), 0).payload.tolist() == [6.0]
    c = ConditionalValue.constant(tree, 2, 3.5)
    assert np.allclose(conditional_expectation(tree, c, 1).payload, 3.5)
    with pytest.raises(ValueError):
        conditional_expectation(tree, R(1, [np.inf, 0]), 0)
    with pytest.raises(ValueError):
        conditional_expectation(tree, R(1, [1, 0]), 2)


@given(st.integers(0, 10_000))
def test_tower_property(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 3)
    x = random_value(tree, 3, rng)
    direct = conditional_expectation(tree, x, 0).payload
    nested = conditional_expectation(tree, conditional_expectation(tree, x, 1), 0).payload
    assert np.allclose(direct, nested, atol=1e-12)


def test_measurable_subsequence_is_nodewise_selection():
    rng = np.random.default_rng(0)
    tree = random_tree(rng, 2)
    seq = [random_value(tree, 2, rng) for _ in range(6)]
    idx = ConditionalValue.integer(2, rng.integers(0, 6, size=tree.n_atoms(2)))
    out = measurable_subsequence(seq, idx)
    assert out.payload.tolist() == [seq[j][i] for i, j in enumerate(idx.payload)]


def test_stability_harness():
    tree = binomial(2)
    rng = np.random.default_rng(1)
    battery = [(random_value(tree, 2, rng),) for _ in range(8)]
    square = lambda x: x.map(lambda v: v * v)
    assert check_stability(square, battery, tree, 1, rng=0).ok
    copy_first = lambda x: R(x.stage, np.full(len(x), x[0]))
    rep = check_stability(copy_first, battery, tree, 1, rng=0)
    assert rep.violations and "node" in rep.violations[0]
    failing = lambda x: 1 / 0
    rep = check_stability(failing, battery, tree, 1, rng=0)
    assert rep.errors and not rep.violations
    rho = ConditionalRiskMeasure("entropic", 1.0)
    assert check_stability(lambda x: evaluate(rho, tree, x), battery, tree, 1, rng=0).ok

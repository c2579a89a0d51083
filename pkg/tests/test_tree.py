import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from condbellman.tree import (ScenarioTree, StagePartition, TreeError, all_paths, binomial,
                              random_tree, tree_from_config, trinomial)


def test_binomial_shape_and_bfs_order():
    tree = binomial(3, p=0.6)
    assert tree.T == 3
    assert [tree.n_atoms(t) for t in range(4)] == [1, 2, 4, 8]
    assert list(tree.stage) == sorted(tree.stage)
    assert tree.children[0] == (1, 2)
    assert tree.child_probs(0).tolist() == [0.6, 0.4]
    assert tree.child_shocks(0)[:, 0].tolist() == [1.0, -1.0]


def test_relabelling_is_breadth_first():
    # nodes given out of order: leaf first
    tree = ScenarioTree([2, 2, -1], [0.3, 0.7, 1.0], [[1.0], [-1.0], [0.0]])
    assert tree.parent.tolist() == [-1, 0, 0]
    assert tree.prob.tolist() == [1.0, 0.3, 0.7]


@pytest.mark.parametrize("parents, probs", [
    ([-1, 0, 0], [1.0, 0.5, 0.6]),      # children do not sum to one
    ([-1, -1], [1.0, 1.0]),             # two roots
    ([-1, 0, 0, 1], [1, 0.5, 0.5, 1]),  # node 2 is an early leaf
    ([-1], [1.0]),                      # no horizon
])
def test_invalid_trees_rejected(parents, probs):
    with pytest.raises(TreeError):
        ScenarioTree(parents, probs)


def _path_prob_oracle(tree, node, m):
    """Product of edge probabilities on the path from m up to node, else 0."""
    p = 1.0
    while m != node:
        if m < 0:
            return 0.0
        p *= tree.prob[m]
        m = tree.parent[m]
        if m >= 0 and tree.stage[m] < tree.stage[node]:
            return 0.0
    return p


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_conditional_probability_matches_path_products(seed, T):
    tree = random_tree(np.random.default_rng(seed), T)
    for t in range(T + 1):
        for n in tree.stage_range(t):
            for s in range(t, T + 1):
                got = tree.conditional_probability(n, s)
                want = [_path_prob_oracle(tree, n, m) for m in tree.stage_range(s)]
                assert np.allclose(got, want, atol=1e-15)
                assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_ancestor_and_paths():
    tree = trinomial(2)
    paths = all_paths(tree)
    assert len(paths) == 9
    for path in paths:
        for t, n in enumerate(path):
            assert tree.ancestor(path[-1], t) == n


def test_prices_accumulate_shocks():
    tree = binomial(2, up=1.0, down=-1.0)
    S = tree.prices(10.0)[:, 0]
    assert S.tolist() == [10, 11, 9, 12, 10, 10, 8]


def test_partition_labels():
    with pytest.raises(TreeError):
        StagePartition(1, (0, 2))
    tree = binomial(2)
    P = StagePartition.random(tree, 2, np.random.default_rng(0))
    assert sorted(set(P.blocks)) == list(range(P.n_blocks))
    assert list(itertools.chain(*[P.members(k) for k in range(P.n_blocks)])) != []


def test_tree_from_config_explicit_nodes():
    tree = tree_from_config({"nodes": [{"parent": None}, {"parent": 0, "prob": 0.25, "shock": 2},
                                       {"parent": 0, "prob": 0.75, "shock": -1}]})
    assert tree.T == 1 and tree.child_shocks(0)[:, 0].tolist() == [2.0, -1.0]
    with pytest.raises(TreeError):
        tree_from_config({"template": "octonomial"})

"""Wealth-dependent dynamic risk sharing with the scaling aggregator u(x, y) = x g(y / x).

The proportional allocation x^a_s = (H^a_t / H_t) H_s is optimal, and the
shared optimum follows the one-dimensional recursion
ybar_s = H_s g(ybar_{s+1} / H_s), ybar_T = H_T. The cross-check here compares
both against an independent evaluation of the agents' composed objectives over
a lattice of alternative allocations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controls import compositions
from .generators import entropic_kernel
from .report import Report
from .tree import ScenarioTree

MIN_SHARE = 1e-3


class SharingError(ValueError):
    pass


@dataclass
class SharingProblem:
    """Endowments H[a, node] > 0 for every agent and node of the tree."""

    tree: ScenarioTree
    endowments: np.ndarray
    kernel: Callable = entropic_kernel

    def __post_init__(self):
        H = np.asarray(self.endowments, dtype=float)
        if H.ndim != 2 or H.shape[1] != self.tree.n_nodes:
            raise SharingError("endowments must have shape (agents, nodes)")
        if H.shape[0] < 2:
            raise SharingError("risk sharing needs at least two agents")
        if not np.all(np.isfinite(H)) or np.any(H <= 0):
            a, n = np.argwhere(~(H > 0) | ~np.isfinite(H))[0]
            raise SharingError(f"agent {a} has nonpositive endowment {H[a, n]} at node {n}")
        self.endowments = H

    @property
    def n_agents(self) -> int:
        return self.endowments.shape[0]

    @property
    def aggregate(self) -> np.ndarray:
        return self.endowments.sum(axis=0)


def closed_form_allocation(problem: SharingProblem, t: int = 0) -> np.ndarray:
    """x[a, node]: the endowment up to stage t, (H^a_t / H_t) H_s below it."""
    tree, H = problem.tree, problem.endowments
    agg = problem.aggregate
    x = H.copy()
    for s in range(t + 1, tree.T + 1):
        for n in tree.stage_range(s):
            m = tree.ancestor(n, t)
            x[:, n] = H[:, m] / agg[m] * agg[n]
    return x


def ybar_recursion(problem: SharingProblem, t: int = 0) -> np.ndarray:
    """ybar_s per node for s >= t (NaN above stage t)."""
    tree, agg = problem.tree, problem.aggregate
    yb = np.full(tree.n_nodes, np.nan)
    for n in tree.stage_range(tree.T):
        yb[n] = agg[n]
    for s in range(tree.T - 1, t - 1, -1):
        for n in tree.stage_range(s):
            kids = list(tree.children[n])
            p = tree.child_probs(n)
            yb[n] = agg[n] * problem.kernel(p, yb[kids][None, :] / agg[n])[0]
    return yb


def composed_objective(problem: SharingProblem, alloc: np.ndarray, t: int = 0) -> np.ndarray:
    """sum_a u_t(x^a_t, .) o ... o u_{T-1}(x^a_{T-1}, x^a_T) per stage-t node.

    ``alloc`` has shape (agents, nodes) or (batch, agents, nodes); the agent
    values are built leaf-to-root independently of the closed form.
    """
    tree = problem.tree
    X = np.asarray(alloc, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    vals = np.empty_like(X)
    for n in tree.stage_range(tree.T):
        vals[:, :, n] = X[:, :, n]
    for s in range(tree.T - 1, t - 1, -1):
        for n in tree.stage_range(s):
            kids = list(tree.children[n])
            p = tree.child_probs(n)
            x = X[:, :, n]
            vals[:, :, n] = x * problem.kernel(p, vals[:, :, kids] / x[..., None])
    out = vals[:, :, list(tree.stage_range(t))].sum(axis=1)
    return out[0] if single else out


def simplex_shares(n_agents: int, m: int, min_share: float = MIN_SHARE) -> np.ndarray:
    """Open-simplex lattice: shares min_share + (1 - A min_share) k / m, sum k = m."""
    k = np.array(list(compositions(m, n_agents)), dtype=float)
    return min_share + (1.0 - n_agents * min_share) * k / m


def lattice_resolution(n_agents: int, n_free: int, budget: int) -> int:
    """Largest m (at least 1) whose product lattice fits the budget."""
    if n_free == 0:
        return 1
    m = 1
    # the lattice with denominator m has C(m + A - 1, A - 1) points
    while math.comb(m + n_agents, n_agents - 1) ** n_free <= budget:
        m += 1
    return m


def numeric_cross_check(problem: SharingProblem, t: int = 0, m: int | None = None,
                        budget: int = 100_000, min_share: float = MIN_SHARE,
                        batch: int = 20_000, perturbations: int = 50, seed: int = 0) -> Report:
    """Closed form attains ybar_t and no lattice allocation exceeds it."""
    tree = problem.tree
    A = problem.n_agents
    yb = ybar_recursion(problem, t)
    cf = closed_form_allocation(problem, t)
    rep = Report(f"risk sharing cross-check ({A} agents, T={tree.T}, t={t})")

    obj_cf = composed_objective(problem, cf, t)
    stage_nodes = list(tree.stage_range(t))
    err = np.max(np.abs(obj_cf - yb[stage_nodes]) / np.maximum(1.0, np.abs(yb[stage_nodes])))
    rep.add("closed form attains ybar", err <= 1e-10, f"max relative gap {err:.3g}")

    agg = problem.aggregate
    sums = np.abs(cf.sum(axis=0) - agg)
    rep.add("allocation feasible", bool(np.all(cf > 0) and np.all(sums <= 1e-12 * agg)),
            f"max |sum_a x^a - H| = {sums.max():.2g}")

    worst_gap, total, bad = -np.inf, 0, None
    for n0 in stage_nodes:
        free = [n for s in range(t + 1, tree.T + 1) for n in tree.stage_range(s)
                if tree.ancestor(n, t) == n0]
        mm = m if m is not None else lattice_resolution(A, len(free), budget)
        shares = simplex_shares(A, mm, min_share)
        L = len(shares)
        count = L ** len(free)
        if count > budget:
            raise SharingError(f"lattice with {count} points exceeds budget {budget}")
        total += count
        pos = stage_nodes.index(n0)
        for start in range(0, count, batch):
            idx = np.arange(start, min(start + batch, count))
            digits = np.unravel_index(idx, (L,) * len(free)) if free else ()
            X = np.broadcast_to(cf, (len(idx),) + cf.shape).copy()
            for k, n in enumerate(free):
                X[:, :, n] = shares[digits[k]] * agg[n]
            vals = composed_objective(problem, X, t)[:, pos]
            i = int(np.argmax(vals))
            gap = vals[i] - yb[n0]
            if gap > worst_gap:
                worst_gap = float(gap)
            if gap > 1e-8 * max(1.0, abs(yb[n0])) and bad is None:
                bad = {"node": n0, "allocation": X[i][:, free].tolist(), "gap": float(gap)}
    rep.add("no lattice allocation exceeds ybar", bad is None,
            f"{total} lattice points, max gap {worst_gap:.3g}", bad)

    rng = np.random.default_rng(seed)
    bad = None
    for _ in range(perturbations):
        eps = rng.normal(scale=0.2, size=(A, tree.n_nodes))
        X = cf * np.exp(eps)
        X = X / X.sum(axis=0) * agg
        X[:, [n for s in range(t + 1) for n in tree.stage_range(s)]] = \
            cf[:, [n for s in range(t + 1) for n in tree.stage_range(s)]]
        vals = composed_objective(problem, X, t)
        if np.any(vals > yb[stage_nodes] + 1e-8 * np.maximum(1.0, np.abs(yb[stage_nodes]))):
            bad = bad or {"allocation": X.tolist()}
    rep.add("perturbations dominated", bad is None, f"{perturbations} random perturbations", bad)
    return rep


def random_problem(rng, n_agents: int | None = None, T: int | None = None,
                   max_children: int = 3) -> SharingProblem:
    from .tree import random_tree

    rng = np.random.default_rng(rng)
    A = int(n_agents or rng.integers(2, 4))
    T = int(T or rng.integers(1, 4))
    tree = random_tree(rng, T, max_children=max_children)
    H = rng.uniform(0.2, 3.0, size=(A, tree.n_nodes))
    return SharingProblem(tree, H)

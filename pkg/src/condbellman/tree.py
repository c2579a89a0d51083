"""Finite filtered probability spaces encoded as scenario trees.

Depth-t nodes are the atoms of F_t. Nodes are stored in breadth-first order,
so the stage-t nodes always occupy a contiguous index range.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class TreeError(ValueError):
    pass


class ScenarioTree:
    """Rooted tree with edge probabilities and optional per-node shock vectors.

    ``parents[i]`` is the parent index of node i (-1 for the root),
    ``probs[i]`` is p(i | parent) and ``shocks[i]`` the increment realised on
    entering node i (the root row is ignored by the generators).
    """

    def __init__(self, parents: Sequence[int], probs: Sequence[float], shocks=None):
        parents = [int(p) for p in parents]
        n = len(parents)
        if n == 0:
            raise TreeError("tree needs at least one node")
        roots = [i for i, p in enumerate(parents) if p < 0]
        if len(roots) != 1:
            raise TreeError(f"expected exactly one root, found {len(roots)}")
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (n,):
            raise TreeError("one probability per node required")
        if shocks is None:
            shocks = np.zeros((n, 0))
        shocks = np.asarray(shocks, dtype=float)
        if shocks.ndim == 1:
            shocks = shocks[:, None]
        if shocks.shape[0] != n:
            raise TreeError("one shock vector per node required")

        # breadth-first relabelling, stable in the given sibling order
        old_children: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(parents):
            if p >= n:
                raise TreeError(f"node {i} references missing parent {p}")
            if p >= 0:
                old_children[p].append(i)
        order = [roots[0]]
        stage = {roots[0]: 0}
        head = 0
        while head < len(order):
            node = order[head]
            for c in old_children[node]:
                stage[c] = stage[node] + 1
                order.append(c)
            head += 1
        if len(order) != n:
            raise TreeError("parent references do not form a single rooted tree")
        new_index = {old: new for new, old in enumerate(order)}

        self.parent = np.array([new_index[parents[o]] if parents[o] >= 0 else -1 for o in order])
        self.stage = np.array([stage[o] for o in order])
        self.prob = probs[order].copy()
        self.prob[0] = 1.0
        self.shock = shocks[order].copy()
        self.children: tuple[tuple[int, ...], ...] = tuple(
            tuple(new_index[c] for c in old_children[o]) for o in order
        )
        self.T = int(self.stage.max())
        self._validate()

        self._start = np.searchsorted(self.stage, np.arange(self.T + 2))
        path_prob = np.ones(n)
        for i in range(1, n):
            path_prob[i] = path_prob[self.parent[i]] * self.prob[i]
        self.path_prob = path_prob
        for arr in (self.parent, self.stage, self.prob, self.shock, self.path_prob):
            arr.setflags(write=False)

    def _validate(self):
        if self.T < 1:
            raise TreeError("horizon T must be at least 1")
        for i, kids in enumerate(self.children):
            if not kids and self.stage[i] != self.T:
                raise TreeError(f"node {i} at stage {self.stage[i]} is a leaf before T={self.T}")
            if kids:
                p = self.prob[list(kids)]
                if np.any(p <= 0) or np.any(p > 1):
                    raise TreeError(f"children of node {i} need probabilities in (0, 1]")
                if abs(p.sum() - 1.0) > PROB_TOL:
                    raise TreeError(f"children of node {i} have probabilities summing to {p.sum()!r}")

    # -- basic queries -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def shock_dim(self) -> int:
        return self.shock.shape[1]

    def _check_stage(self, t):
        if not 0 <= t <= self.T:
            raise TreeError(f"stage {t} outside 0..{self.T}")

    def atoms(self, t: int) -> list[int]:
        self._check_stage(t)
        return list(range(self._start[t], self._start[t + 1]))

    def stage_range(self, t: int) -> range:
        self._check_stage(t)
        return range(self._start[t], self._start[t + 1])

    def n_atoms(self, t: int) -> int:
        self._check_stage(t)
        return int(self._start[t + 1] - self._start[t])

    def position(self, node: int) -> int:
        """Index of ``node`` among the atoms of its own stage."""
        return int(node - self._start[self.stage[node]])

    def node_at(self, t: int, pos: int) -> int:
        return int(self._start[t] + pos)

    def ancestor(self, node: int, t: int) -> int:
        if t > self.stage[node]:
            raise TreeError(f"stage {t} is after node {node}")
        while self.stage[node] > t:
            node = self.parent[node]
        return int(node)

    def child_probs(self, node: int) -> np.ndarray:
        return self.prob[list(self.children[node])]

    def child_shocks(self, node: int) -> np.ndarray:
        """Shock vectors of the children of ``node``, shape (n_children, d)."""
        return self.shock[list(self.children[node])]

    def conditional_probability(self, node: int, s: int) -> np.ndarray:
        """P(m | node) for every stage-s atom m; zero outside the subtree."""
        self._check_stage(s)
        if s < self.stage[node]:
            raise TreeError(f"descendant stage {s} precedes node stage {self.stage[node]}")
        out = np.zeros(self.n_atoms(s))
        frontier = {int(node): 1.0}
        for _ in range(s - self.stage[node]):
            nxt = {}
            for m, pm in frontier.items():
                for c in self.children[m]:
                    nxt[c] = pm * self.prob[c]
            frontier = nxt
        for m, pm in frontier.items():
            out[self.position(m)] = pm
        return out

    def kernel(self, t: int, s: int) -> np.ndarray:
        """Matrix of conditional probabilities from stage-t atoms to stage-s atoms."""
        return np.vstack([self.conditional_probability(n, s) for n in self.stage_range(t)])

    def prices(self, s0) -> np.ndarray:
        """Price process S with S_root = s0 and increments given by the shocks."""
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        out = np.zeros((self.n_nodes, len(s0)))
        out[0] = s0
        for i in range(1, self.n_nodes):
            out[i] = out[self.parent[i]] + self.shock[i]
        return out

    def to_dict(self) -> dict:
        return {
            "parents": self.parent.tolist(),
            "probs": self.prob.tolist(),
            "shocks": self.shock.tolist(),
        }

    def __repr__(self):
        return f"ScenarioTree(T={self.T}, nodes={self.n_nodes}, shock_dim={self.shock_dim})"


@dataclass(frozen=True)
class StagePartition:
    """Assignment of each stage-t atom to a block 0..K-1 (a partition in F_t)."""

    stage: int
    blocks: tuple[int, ...]

    def __post_init__(self):
        blocks = tuple(int(b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise TreeError("partition of an empty stage")
        used = set(blocks)
        if min(used) < 0 or used != set(range(max(used) + 1)):
            raise TreeError("partition blocks must be labelled 0..K-1 with no empty block")

    @property
    def n_blocks(self) -> int:
        return max(self.blocks) + 1

    def members(self, k: int) -> list[int]:
        return [i for i, b in enumerate(self.blocks) if b == k]

    @classmethod
    def single(cls, tree: ScenarioTree, t: int) -> "StagePartition":
        return cls(t, (0,) * tree.n_atoms(t))

    @classmethod
    def random(cls, tree: ScenarioTree, t: int, rng: np.random.Generator, max_blocks=None):
        n = tree.n_atoms(t)
        k = int(rng.integers(1, (max_blocks or n) + 1))
        raw = rng.integers(0, k, size=n)
        # relabel so that blocks are 0..K-1 without gaps
        _, labels = np.unique(raw, return_inverse=True)
        return cls(t, tuple(labels.tolist()))


# -- lattice templates --------------------------------------------------------

def from_branching(T: int, probs: Sequence[float], shocks: Sequence) -> ScenarioTree:
    """Recombination-free lattice: every node has the same branches."""
    probs = list(probs)
    shocks = [np.atleast_1d(np.asarray(s, dtype=float)) for s in shocks]
    if len(probs) != len(shocks):
        raise TreeError("one shock per branch required")
    d = len(shocks[0])
    parents, p, sh = [-1], [1.0], [np.zeros(d)]
    frontier = [0]
    for _ in range(T):
        nxt = []
        for node in frontier:
            for q, s in zip(probs, shocks):
                parents.append(node)
                p.append(q)
                sh.append(s)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return ScenarioTree(parents, p, np.vstack(sh))


def binomial(T: int, p: float = 0.5, up: float = 1.0, down: float = -1.0) -> ScenarioTree:
    return from_branching(T, [p, 1.0 - p], [[up], [down]])


def trinomial(T: int, probs=(0.25, 0.5, 0.25), shocks=(1.0, 0.0, -1.0)) -> ScenarioTree:
    return from_branching(T, probs, [[s] for s in shocks])


def random_tree(rng: np.random.Generator, T: int, max_children: int = 3, shock_dim: int = 1,
                shock_scale: float = 1.0) -> ScenarioTree:
    """Random tree; every interior node has 1..max_children children."""
    parents, p, sh = [-1], [1.0], [np.zeros(shock_dim)]
    frontier = [0]
    for _ in range(T):
        nxt = []
        for node in frontier:
            k = int(rng.integers(1, max_children + 1))
            w = rng.uniform(0.2, 1.0, size=k)
            w = w / w.sum()
            # keep the sum within the tolerance the validator uses
            w[-1] = 1.0 - w[:-1].sum()
            for q in w:
                parents.append(node)
                p.append(float(q))
                sh.append(rng.normal(scale=shock_scale, size=shock_dim))
                nxt.append(len(parents) - 1)
        frontier = nxt
    return ScenarioTree(parents, p, np.vstack(sh))


def all_paths(tree: ScenarioTree) -> list[tuple[int, ...]]:
    """Root-to-leaf node paths in leaf order."""
    out = []
    for leaf in tree.stage_range(tree.T):
        path = [leaf]
        while tree.parent[path[-1]] >= 0:
            path.append(int(tree.parent[path[-1]]))
        out.append(tuple(reversed(path)))
    return out


def tree_from_config(spec: dict) -> ScenarioTree:
    """Build a tree from a config mapping (template name or explicit node list)."""
    if "nodes" in spec:
        nodes = spec["nodes"]
        parents = [-1 if n.get("parent") is None else int(n["parent"]) for n in nodes]
        probs = [float(n.get("prob", 1.0)) for n in nodes]
        shocks = [n.get("shock", []) for n in nodes]
        width = max((len(np.atleast_1d(s)) for s in shocks), default=0)
        arr = np.zeros((len(nodes), width))
        for i, s in enumerate(shocks):
            s = np.atleast_1d(np.asarray(s, dtype=float))
            if len(s):
                if len(s) != width:
                    raise TreeError(f"node {i}: shock dimension {len(s)} != {width}")
                arr[i] = s
        return ScenarioTree(parents, probs, arr)
    template = spec.get("template", "binomial")
    T = int(spec.get("T", 1))
    if template == "binomial":
        return binomial(T, float(spec.get("p", 0.5)), float(spec.get("up", 1.0)),
                        float(spec.get("down", -1.0)))
    if template == "trinomial":
        return trinomial(T, tuple(spec.get("probs", (0.25, 0.5, 0.25))),
                         tuple(spec.get("shocks", (1.0, 0.0, -1.0))))
    if template == "lattice":
        return from_branching(T, spec["probs"], spec["shocks"])
    raise TreeError(f"unknown tree template {template!r}")


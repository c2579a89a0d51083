"""Backward recursion for y_t, forward extraction of an optimal policy, and a
brute-force oracle over finite control grids.

Two modes share one inner maximisation:

* ``exact``: explicit finite control grids. The reachable states are built
  forward from x0 and values are stored per (node, state) without any
  interpolation, so the recursion is exact on the discretised problem (vector
  states allowed).
* ``grid``: scalar wealth with continuous control sets. Each node carries a
  uniform state grid with piecewise-linear interpolation; the inner maximum is
  a grid search over the discretised control set followed by a compass-search
  polish.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controls import (ControlSet, ExplicitGridSet, InfeasibleError, RiskConstrainedSet,
                       grid_at, radius_at)
from .generators import BackwardGenerator, ForwardGenerator, TerminalGenerator
from .report import Report
from .search import UnboundedError, coordinate_search
from .tree import ScenarioTree

TIE_TOL = 1e-9
BRUTE_BUDGET = 10 ** 7


class DivergenceError(RuntimeError):
    """The inner supremum at some node is unbounded."""


class GridError(RuntimeError):
    """A state left the grid that covers it."""


@dataclass
class Problem:
    tree: ScenarioTree
    forward: ForwardGenerator
    backward: BackwardGenerator
    terminal: TerminalGenerator
    controls: ControlSet
    x0: object = 1.0
    name: str = ""


@dataclass
class GridConfig:
    points: int = 41
    h: float = 0.05
    polish_tol: float = 1e-7
    pad: float = 0.1
    root_halfwidth: float | None = None
    bounds: dict | None = None  # node -> (lo, hi); overrides propagation
    workers: int = 1


# -- value functions ------------------------------------------------------------------

def interp(xs: np.ndarray, ys: np.ndarray, x) -> np.ndarray:
    """Piecewise-linear interpolation, exact at knots, -inf absorbing between
    a -inf knot and its neighbour, constant beyond the grid edges."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, xs[0], xs[-1])
    i = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, len(xs) - 1)
    j = np.minimum(i + 1, len(xs) - 1)
    at_knot = xc == xs[i]
    ya, yb = ys[i], ys[j]
    span = np.where(j > i, xs[j] - xs[i], 1.0)
    w = (xc - xs[i]) / span
    with np.errstate(invalid="ignore"):
        lin = ya + w * (yb - ya)
    lin = np.where(np.isneginf(ya) | np.isneginf(yb), -np.inf, lin)
    return np.where(at_knot, ya, lin)


@dataclass
class ValueFunction:
    """y_t per stage-t node: a sorted grid with values (grid mode) or an exact
    table over reachable states (exact mode)."""

    stage: int
    grids: dict = field(default_factory=dict)   # node -> (xs, ys)
    table: dict = field(default_factory=dict)   # node -> {state key: value}
    exact: object = None                        # callable (node, x) -> y, used when set

    def __call__(self, node: int, x) -> np.ndarray:
        if self.exact is not None:
            return self.exact(node, x)
        if node in self.grids:
            xs, ys = self.grids[node]
            return interp(xs, ys, x)
        tab = self.table[node]
        X = np.asarray(x, dtype=float)
        if X.ndim == 0:
            return np.array(_lookup(tab, node, float(X)))
        if isinstance(next(iter(tab)), tuple):
            if X.ndim == 1:
                return np.array(_lookup(tab, node, tuple(X)))
            return np.array([_lookup(tab, node, tuple(r)) for r in X.reshape(-1, X.shape[-1])]
                            ).reshape(X.shape[:-1])
        return np.array([_lookup(tab, node, float(v)) for v in X.ravel()]).reshape(X.shape)

    def knots(self, node: int):
        if node in self.grids:
            return self.grids[node]
        keys = list(self.table[node])
        return np.array(keys, dtype=float), np.array([self.table[node][k] for k in keys])


def _lookup(tab, node, key):
    try:
        return tab[key]
    except KeyError:
        raise GridError(f"node {node}: state {key} was not reached in the forward sweep") from None


@dataclass
class Policy:
    stage: int
    controls: dict = field(default_factory=dict)  # node -> (states, Z)


@dataclass
class Solution:
    problem: Problem
    mode: str
    values: list
    policies: list
    config: GridConfig
    warnings: list = field(default_factory=list)

    @property
    def root_value(self) -> float:
        return float(self.values[0](0, self.problem.x0))


# -- shared inner maximisation ---------------------------------------------------------

def pick(vals: np.ndarray, Z: np.ndarray) -> int:
    """Index of the lexicographically smallest control among those within
    TIE_TOL (relative) of the best value."""
    m = np.max(vals)
    near = np.ones(len(vals), dtype=bool) if m == -np.inf else vals >= m - TIE_TOL * max(1.0, abs(m))
    idx = np.flatnonzero(near)
    if Z.shape[1] == 0:
        return int(idx[0])
    order = np.lexsort(Z[idx].T[::-1])
    return int(idx[order[0]])


def _objective(problem: Problem, node: int, x, nxt: ValueFunction):
    tree, v, u = problem.tree, problem.forward, problem.backward
    kids = tree.children[node]
    spec = problem.controls

    def obj(Z):
        Z = np.atleast_2d(Z)
        X1 = v.step(tree, node, x, Z)
        Y = np.empty(X1.shape[:2])
        for j, c in enumerate(kids):
            Y[:, j] = nxt(c, X1[:, j])
        val = u.aggregate(tree, node, x, Y, Z)
        return val

    def constrained(Z):
        Z = np.atleast_2d(Z)
        ok = spec.feasible(tree, node, x, Z)
        out = np.full(len(Z), -np.inf)
        if ok.any():
            out[ok] = obj(Z[ok])
        return out

    return obj, constrained


def inner_max(problem: Problem, node: int, x, nxt: ValueFunction, cfg: GridConfig,
              polish: bool):
    """(value, z*) of max_{z in Theta(x)} u(x, y_{t+1}(v(x, z)), z)."""
    spec = problem.controls
    try:
        Z = grid_at(spec, problem.tree, node, x, cfg.h)
    except UnboundedError as exc:
        raise DivergenceError(f"node {node}: inner supremum unbounded at x={x!r} ({exc})") from exc
    obj, constrained = _objective(problem, node, x, nxt)
    vals = obj(Z)
    i = pick(vals, Z)
    best, z = float(np.max(vals)), Z[i]
    if polish and spec.continuous and np.isfinite(best) and Z.shape[1] > 0:
        zp, vp = coordinate_search(constrained, z, step=cfg.h, tol=cfg.polish_tol)
        if vp > best:
            best, z = vp, zp
    return best, np.asarray(z, dtype=float)


# -- exact mode ---------------------------------------------------------------------

def _key(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else tuple(float(a) for a in x)


def reachable_states(problem: Problem) -> list[dict]:
    """Per stage: node -> sorted list of state keys reachable from x0 under the grids."""
    tree, v, spec = problem.tree, problem.forward, problem.controls
    reach = [dict() for _ in range(tree.T + 1)]
    reach[0][0] = [_key(problem.x0)]
    for t in range(tree.T):
        for n in tree.stage_range(t):
            for c in tree.children[n]:
                reach[t + 1].setdefault(c, set())
            for xk in reach[t][n]:
                x = np.asarray(xk, dtype=float)
                Z = grid_at(spec, tree, n, x, 1.0)
                if len(Z) == 0:
                    raise InfeasibleError(f"node {n}: empty control set at x={xk}")
                X1 = v.step(tree, n, x, Z)
                for j, c in enumerate(tree.children[n]):
                    reach[t + 1][c].update(_key(r) for r in X1[:, j])
        for c in reach[t + 1]:
            reach[t + 1][c] = sorted(reach[t + 1][c])
    return reach


def _solve_exact(problem: Problem, cfg: GridConfig) -> Solution:
    tree = problem.tree
    reach = reachable_states(problem)
    T = tree.T
    values = [None] * (T + 1)
    policies = [None] * T
    vT = ValueFunction(T)
    for n, keys in reach[T].items():
        X = np.array(keys, dtype=float)
        vT.table[n] = dict(zip(keys, problem.terminal.value(tree, n, X).tolist()))
    values[T] = vT
    notes = []
    for t in range(T - 1, -1, -1):
        vt, pol = ValueFunction(t), Policy(t)
        for n in tree.stage_range(t):
            keys = reach[t][n]
            res = _map(cfg.workers, lambda xk: inner_max(problem, n, np.asarray(xk, dtype=float),
                                                         values[t + 1], cfg, polish=False), keys)
            vt.table[n] = {k: r[0] for k, r in zip(keys, res)}
            pol.controls[n] = (keys, [r[1] for r in res])
            for k, r in zip(keys, res):
                if r[0] == -np.inf:
                    notes.append(f"node {n}, x={k}: every control yields -inf")
        values[t], policies[t] = vt, pol
    for msg in notes:
        warnings.warn(msg)
    return Solution(problem, "exact", values, policies, cfg, notes)


def _map(workers, fn, items):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# -- grid mode ----------------------------------------------------------------------

def state_bounds(problem: Problem, cfg: GridConfig) -> dict:
    """Per-node state intervals covering the states reachable from x0.

    The root interval is centred on x0. Each child interval is the hull of the
    next states produced by the discretised control sets at the parent's grid
    points, padded by ``cfg.pad`` of its width (never below zero when the
    control set keeps wealth solvent).
    """
    tree, v, spec = problem.tree, problem.forward, problem.controls
    x0 = float(problem.x0)
    half = cfg.root_halfwidth if cfg.root_halfwidth is not None else cfg.pad * max(1.0, abs(x0))
    bounds = {0: (x0 - half, x0 + half)}
    solvent = isinstance(spec, RiskConstrainedSet) and spec.solvency
    for t in range(tree.T):
        for n in tree.stage_range(t):
            lo, hi = bounds[n]
            xs = np.linspace(lo, hi, cfg.points)
            imgs = [[] for _ in tree.children[n]]
            for x in xs:
                try:
                    Z = grid_at(spec, tree, n, x, cfg.h)
                except InfeasibleError:
                    continue
                except UnboundedError as exc:
                    raise DivergenceError(f"node {n}: control set unbounded at x={x:g} ({exc})") from exc
                X1 = v.step(tree, n, x, Z)
                for j in range(len(imgs)):
                    imgs[j].append((X1[:, j].min(), X1[:, j].max()))
            for j, c in enumerate(tree.children[n]):
                if not imgs[j]:
                    raise InfeasibleError(f"node {n}: no feasible control on [{lo:g}, {hi:g}]")
                a = min(i[0] for i in imgs[j])
                b = max(i[1] for i in imgs[j])
                pad = cfg.pad * max(b - a, 1e-3)
                clo = a - pad
                if solvent and a >= -spec.slack:
                    clo = max(clo, 0.0)
                bounds[c] = (clo, b + pad)
    return bounds


def _solve_grid(problem: Problem, cfg: GridConfig) -> Solution:
    tree = problem.tree
    if problem.forward.vector_state:
        raise ValueError("grid mode needs scalar states; use explicit control grids")
    bounds = cfg.bounds or state_bounds(problem, cfg)
    T = tree.T
    grids = {n: np.linspace(lo, hi, cfg.points) for n, (lo, hi) in bounds.items()}
    values = [None] * (T + 1)
    policies = [None] * T
    # y_T = u_T is known in closed form, so it is evaluated, not interpolated
    vT = ValueFunction(T, exact=lambda n, x: problem.terminal.value(tree, n, x))
    for n in tree.stage_range(T):
        vT.grids[n] = (grids[n], problem.terminal.value(tree, n, grids[n]))
    values[T] = vT
    notes = []
    for t in range(T - 1, -1, -1):
        vt, pol = ValueFunction(t), Policy(t)
        items = [(n, x) for n in tree.stage_range(t) for x in grids[n]]

        def solve_one(item, t=t):
            n, x = item
            try:
                return inner_max(problem, n, float(x), values[t + 1], cfg, polish=True)
            except InfeasibleError:
                d = problem.controls.dim(tree, n, x)
                return -np.inf, np.zeros(d)

        res = _map(cfg.workers, solve_one, items)
        k = 0
        for n in tree.stage_range(t):
            m = len(grids[n])
            chunk = res[k:k + m]
            k += m
            ys = np.array([r[0] for r in chunk])
            vt.grids[n] = (grids[n], ys)
            pol.controls[n] = (grids[n], np.array([r[1] for r in chunk]))
            if np.any(np.isneginf(ys)):
                bad = grids[n][np.isneginf(ys)]
                notes.append(f"node {n}: value -inf on x in [{bad.min():g}, {bad.max():g}]")
        values[t], policies[t] = vt, pol
    for msg in notes:
        warnings.warn(msg)
    return Solution(problem, "grid", values, policies, cfg, notes)


def solve_backward(problem: Problem, cfg: GridConfig | None = None) -> Solution:
    """y_T = u_T and y_t(x) = max_{z in Theta_t(x)} u_t(x, y_{t+1}(v_t(x, z)), z)."""
    cfg = cfg or GridConfig()
    if isinstance(problem.controls, ExplicitGridSet) or problem.forward.vector_state:
        return _solve_exact(problem, cfg)
    return _solve_grid(problem, cfg)


# -- forward extraction --------------------------------------------------------------

@dataclass
class Trajectory:
    states: dict     # node -> x*
    controls: dict   # node -> z*
    value: float     # composed objective along the trajectory
    y0: float        # y_0(x0) from the value function
    node_values: dict

    @property
    def gap(self) -> float:
        return self.value - self.y0


def composed_objective(problem: Problem, states: dict, controls: dict) -> dict:
    """Per-node values of u_t(x_t, ., z_t) o ... o u_T(x_T) along a policy."""
    tree = problem.tree
    vals = {}
    for n in reversed(range(tree.n_nodes)):
        x = np.asarray(states[n], dtype=float)
        if tree.stage[n] == tree.T:
            vals[n] = float(problem.terminal.value(tree, n, x[None, ...])[0])
            continue
        Y = np.array([[vals[c] for c in tree.children[n]]])
        z = np.asarray(controls[n], dtype=float)[None, :]
        vals[n] = float(problem.backward.aggregate(tree, n, x, Y, z)[0])
    return vals


def extract_policy(solution: Solution, x0=None) -> Trajectory:
    """Forward recursion: re-optimise at the realised state of every node."""
    problem = solution.problem
    tree = problem.tree
    x0 = problem.x0 if x0 is None else x0
    if solution.mode == "grid":
        xs = solution.values[0].grids[0][0]
        if not xs[0] - 1e-12 <= float(x0) <= xs[-1] + 1e-12:
            raise GridError(f"x0={x0} outside the root grid [{xs[0]:g}, {xs[-1]:g}]")
    states, controls = {0: np.asarray(x0, dtype=float)}, {}
    for t in range(tree.T):
        nxt = solution.values[t + 1]
        for n in tree.stage_range(t):
            x = states[n]
            if solution.mode == "grid":
                _, z = inner_max(problem, n, float(x), nxt, solution.config, polish=True)
            else:
                keys, zs = solution.policies[t].controls[n]
                z = zs[keys.index(_key(x))]
            controls[n] = z
            X1 = problem.forward.step(tree, n, x, z[None, :])[0]
            for j, c in enumerate(tree.children[n]):
                states[c] = X1[j]
                if solution.mode == "grid":
                    cx = solution.values[t + 1].grids[c][0]
                    if not cx[0] - 1e-9 <= X1[j] <= cx[-1] + 1e-9:
                        raise GridError(f"node {c}: rollout state {X1[j]:g} outside "
                                        f"[{cx[0]:g}, {cx[-1]:g}]")
    vals = composed_objective(problem, states, controls)
    y0 = float(solution.values[0](0, x0))
    return Trajectory(states, controls, vals[0], y0, vals)


def nearest_policy_value(solution: Solution, x0=None) -> float:
    """Composed objective of the policy that looks up the nearest grid control."""
    problem = solution.problem
    tree = problem.tree
    states, controls = {0: float(problem.x0 if x0 is None else x0)}, {}
    for t in range(tree.T):
        for n in tree.stage_range(t):
            xs, zs = solution.policies[t].controls[n]
            i = int(np.argmin(np.abs(np.asarray(xs) - states[n])))
            z = zs[i]
            if not problem.controls.feasible(tree, n, states[n], z[None, :])[0]:
                z = problem.controls.anchor(tree, n, states[n])
            controls[n] = z
            X1 = problem.forward.step(tree, n, states[n], z[None, :])[0]
            for j, c in enumerate(tree.children[n]):
                states[c] = float(X1[j])
    return composed_objective(problem, states, controls)[0]


# -- brute force oracle ----------------------------------------------------------------

def brute_force_value(problem: Problem, x0=None, budget: int = BRUTE_BUDGET):
    """Exhaustive maximum of the composed objective over all joint control
    assignments on the explicit grids; returns (value, node -> control)."""
    spec = problem.controls
    if not isinstance(spec, ExplicitGridSet):
        raise ValueError("brute force needs explicit control grids")
    tree, v, u = problem.tree, problem.forward, problem.backward
    x0 = problem.x0 if x0 is None else x0
    counts = {}

    def count(n, x):
        key = (n, _key(x))
        if key in counts:
            return counts[key]
        if tree.stage[n] == tree.T:
            counts[key] = [1]
            return counts[key]
        Z = spec.grid(tree, n, x)
        if len(Z) == 0:
            raise InfeasibleError(f"node {n}: empty control set at x={_key(x)}")
        X1 = v.step(tree, n, x, Z)
        sizes = []
        for i in range(len(Z)):
            s = 1
            for j, c in enumerate(tree.children[n]):
                s *= sum(count(c, X1[i, j]))
                if s > budget:
                    raise RuntimeError(f"assignment count exceeds budget {budget}")
            sizes.append(s)
        if sum(sizes) > budget:
            raise RuntimeError(f"assignment count {sum(sizes)} exceeds budget {budget}")
        counts[key] = sizes
        return sizes

    def values(n, x):
        if tree.stage[n] == tree.T:
            return problem.terminal.value(tree, n, np.asarray(x, dtype=float)[None, ...])
        Z = spec.grid(tree, n, x)
        X1 = v.step(tree, n, x, Z)
        blocks = []
        for i in range(len(Z)):
            subs = [values(c, X1[i, j]) for j, c in enumerate(tree.children[n])]
            idx = np.meshgrid(*[np.arange(len(s)) for s in subs], indexing="ij")
            Y = np.stack([s[k.ravel()] for s, k in zip(subs, idx)], axis=1)
            blocks.append(u.aggregate(tree, n, x, Y, np.repeat(Z[i][None, :], len(Y), axis=0)))
        return np.concatenate(blocks)

    x0 = np.asarray(x0, dtype=float)
    count(0, x0)
    vals = values(0, x0)
    best = int(np.argmax(vals))
    assignment = {}

    def decode(n, x, idx):
        if tree.stage[n] == tree.T:
            return
        Z = spec.grid(tree, n, x)
        sizes = counts[(n, _key(x))]
        i = 0
        while idx >= sizes[i]:
            idx -= sizes[i]
            i += 1
        assignment[n] = Z[i]
        X1 = v.step(tree, n, x, Z[i][None, :])[0]
        kids = tree.children[n]
        radix = [sum(counts[(c, _key(X1[j]))]) for j, c in enumerate(kids)]
        digits = np.unravel_index(idx, radix) if radix else ()
        for j, c in enumerate(kids):
            decode(c, X1[j], int(digits[j]))

    decode(0, x0, best)
    return float(vals[best]), assignment


# -- K-bound verification and refinement ----------------------------------------------

def verify_k_bound(solution: Solution, K: float, tol: float = 1e-6) -> Report:
    """0 <= y_t(x) - x <= (T - t) K at every grid point, and every stored z*
    inside the induced set {z: u(x, v(x, z), z) >= x - (T - t - 1) K}."""
    problem = solution.problem
    tree = problem.tree
    rep = Report(f"K-bound (K = {K:.6g})")
    worst, bad = 0.0, None
    for t in range(tree.T + 1):
        for n in tree.stage_range(t):
            xs, ys = solution.values[t].knots(n)
            d = ys - xs
            hi = (tree.T - t) * K
            viol = np.maximum(-d, d - hi)
            i = int(np.argmax(viol))
            if viol[i] > worst:
                worst = float(viol[i])
            if viol[i] > tol and bad is None:
                bad = {"stage": t, "node": n, "x": float(xs[i]), "y - x": float(d[i]), "bound": hi}
    rep.add("sandwich", bad is None, f"0 <= y_t - x <= (T-t)K, worst excess {worst:.2g}", bad)
    bad = None
    for t in range(tree.T):
        thr_k = (tree.T - t - 1) * K
        for n in tree.stage_range(t):
            xs, zs = solution.policies[t].controls[n]
            for x, z in zip(xs, zs):
                x = float(x)
                Z = np.asarray(z, dtype=float)[None, :]
                val = problem.backward.aggregate(tree, n, x, problem.forward.step(tree, n, x, Z), Z)[0]
                if val < x - thr_k - tol and bad is None:
                    bad = {"stage": t, "node": n, "x": x, "z": Z[0].tolist(), "gap": float(val - x + thr_k)}
    rep.add("induced set", bad is None, "optimal controls satisfy u(x, v(x,z), z) >= x - K_{t+1}", bad)
    return rep


@dataclass
class Refinement:
    levels: list      # (points, h)
    values: list      # y_0(x0) per level
    deltas: list
    ratio: float
    richardson: float  # estimated remaining error of the finest level

    def lines(self):
        out = [f"level {i}: points={p} h={h:g} y0={v:.12g}"
               for i, ((p, h), v) in enumerate(zip(self.levels, self.values))]
        out += [f"delta {i + 1}: {d:.6g}" for i, d in enumerate(self.deltas)]
        out.append(f"contraction ratio: {self.ratio:.4g}")
        out.append(f"richardson error estimate: {self.richardson:.3g}")
        return out


def refinement(problem: Problem, cfg: GridConfig, levels: int = 3) -> Refinement:
    """Solve with halved state spacing and control resolution per level, on
    state intervals fixed at the coarsest level."""
    bounds = cfg.bounds or state_bounds(problem, cfg)
    lv, vals = [], []
    for k in range(levels):
        pts = (cfg.points - 1) * 2 ** k + 1
        h = cfg.h / 2 ** k
        c = GridConfig(points=pts, h=h, polish_tol=cfg.polish_tol, pad=cfg.pad,
                       root_halfwidth=cfg.root_halfwidth, bounds=bounds, workers=cfg.workers)
        sol = solve_backward(problem, c)
        lv.append((pts, h))
        vals.append(sol.root_value)
    deltas = [abs(b - a) for a, b in zip(vals, vals[1:])]
    ratio = deltas[-2] / deltas[-1] if len(deltas) >= 2 and deltas[-1] > 0 else np.inf
    if len(deltas) >= 2 and deltas[-2] != deltas[-1]:
        rich = deltas[-1] ** 2 / abs(deltas[-2] - deltas[-1])
    else:
        rich = deltas[-1] if deltas else 0.0
    return Refinement(lv, vals, deltas, float(ratio), float(rich))


# -- random finite instances ------------------------------------------------------------

def random_finite_problem(rng, T: int | None = None, max_children: int = 3, max_controls: int = 4,
                          max_assignments: int = 200_000) -> Problem:
    """A random wealth problem with explicit per-node control grids.

    Grid sizes are trimmed (largest first) until the joint assignment count,
    the product of the per-node sizes, fits ``max_assignments``.
    """
    from .generators import (Additive, EntropicWealthDependent, TerminalExpUtility,
                             TerminalIdentity, WealthDynamics)
    from .tree import random_tree

    rng = np.random.default_rng(rng)
    T = int(T or rng.integers(1, 4))
    tree = random_tree(rng, T, max_children=max_children)
    consumption = bool(rng.integers(0, 2))
    forward = WealthDynamics(consumption=consumption)
    d = tree.shock_dim + int(consumption)
    inner = [n for n in range(tree.n_nodes) if tree.stage[n] < T]
    sizes = {n: int(rng.integers(1, max_controls + 1)) for n in inner}
    while np.prod([float(s) for s in sizes.values()]) > max_assignments:
        n = max(sizes, key=lambda k: (sizes[k], -k))
        sizes[n] -= 1
    grids = {}
    for n in inner:
        g = rng.uniform(-1.0, 1.0, size=(sizes[n], d))
        if consumption:
            g[:, -1] = np.abs(g[:, -1]) * 0.5
        grids[n] = np.round(g, 3)
    if rng.uniform() < 0.5:
        lo = float(rng.uniform(0.3, 1.0))
        backward = EntropicWealthDependent(lo, lo + float(rng.uniform(0.0, 1.5)))
    else:
        backward = Additive("consumption_exp" if consumption else "zero", float(rng.uniform(0.1, 1.0)))
    terminal = TerminalExpUtility(float(rng.uniform(0.2, 1.5))) if rng.uniform() < 0.5 \
        else TerminalIdentity()
    return Problem(tree, forward, backward, terminal, ExplicitGridSet(grids),
                   x0=float(np.round(rng.uniform(0.0, 2.0), 3)), name="random-finite")

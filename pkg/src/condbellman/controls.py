"""State-dependent control sets Theta_t(x) with the (c1)-(c4) surrogate checks.

At finite Omega conditional compactness is compactness atom by atom, so every
check here is a per-node check: feasibility of a batch of controls, a ray-scan
bounding radius, and a grid realisation of the set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .conditional import ConditionalValue
from .generators import BackwardGenerator, ForwardGenerator
from .report import Report
from .risk import ConditionalRiskMeasure
from .search import UnboundedError, ray_scan, scan_directions
from .tree import ScenarioTree

SLACK = 1e-9
SAFETY = 1.1


class ControlSetError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    """A reachable (node, state) pair has an empty control set."""


class ResolutionError(RuntimeError):
    def __init__(self, msg: str, suggested_h: float):
        super().__init__(f"{msg}; try h <= {suggested_h:g}")
        self.suggested_h = suggested_h


class ControlSet:
    kind = "abstract"
    continuous = True

    def dim(self, tree: ScenarioTree, node: int, x) -> int:
        raise NotImplementedError

    def feasible(self, tree: ScenarioTree, node: int, x, Z) -> np.ndarray:
        """Boolean (k,) for a (k, d) control batch at state ``x``."""
        raise NotImplementedError

    def anchor(self, tree: ScenarioTree, node: int, x) -> np.ndarray | None:
        """A feasible reference point (the origin when feasible), or None."""
        z = np.zeros(self.dim(tree, node, x))
        return z if self.feasible(tree, node, x, z[None, :])[0] else None

    def _check(self, tree, node, x, Z):
        Z = np.asarray(Z, dtype=float)
        Z = Z[None, :] if Z.ndim == 1 else Z
        d = self.dim(tree, node, x)
        if Z.shape[1] != d:
            raise ControlSetError(f"node {node}: control dimension {Z.shape[1]}, expected {d}")
        return Z


def _at(spec, node, x):
    return spec(node, x) if callable(spec) else spec


@dataclass(frozen=True)
class BoxSet(ControlSet):
    """lower <= z <= upper (or strict inequalities); bounds may be callables of (node, x)."""

    lower: object = -1.0
    upper: object = 1.0
    dimension: object = 1
    strict: bool = False

    kind = "box"

    def dim(self, tree, node, x):
        return int(_at(self.dimension, node, x))

    def bounds(self, tree, node, x):
        d = self.dim(tree, node, x)
        lo = np.broadcast_to(np.asarray(_at(self.lower, node, x), dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(_at(self.upper, node, x), dtype=float), (d,))
        return lo, hi

    def feasible(self, tree, node, x, Z):
        Z = self._check(tree, node, x, Z)
        lo, hi = self.bounds(tree, node, x)
        if self.strict:
            return np.all((Z > lo) & (Z < hi), axis=1)
        return np.all((Z >= lo) & (Z <= hi), axis=1)

    def anchor(self, tree, node, x):
        lo, hi = self.bounds(tree, node, x)
        with np.errstate(invalid="ignore"):
            mid = 0.5 * (lo + hi)
        for z in (np.clip(0.0, lo, hi), mid):
            if np.all(np.isfinite(z)) and self.feasible(tree, node, x, z[None, :])[0]:
                return z
        return None


@dataclass(frozen=True)
class RiskConstrainedSet(ControlSet):
    """{(theta, c): rho(theta . dS) <= x - c, 0 <= c <= x}, optionally solvent.

    With ``solvency`` every child wealth x - c + theta . dS stays nonnegative,
    which keeps the wealth process inside the state space where (0, 0) is
    feasible.
    """

    rho: ConditionalRiskMeasure = field(default_factory=ConditionalRiskMeasure)
    consumption: bool = True
    solvency: bool = True
    slack: float = SLACK

    kind = "risk_constrained"

    def dim(self, tree, node, x):
        return tree.shock_dim + int(self.consumption)

    def feasible(self, tree, node, x, Z):
        Z = self._check(tree, node, x, Z)
        dS = tree.child_shocks(node)
        d = dS.shape[1]
        pay = np.zeros((len(Z), len(dS)))
        for j in range(len(dS)):
            for i in range(d):
                pay[:, j] += Z[:, i] * dS[j, i]
        c = Z[:, d] if self.consumption else np.zeros(len(Z))
        ok = self.rho.local(tree, node, pay) <= x - c + self.slack
        if self.consumption:
            ok &= (c >= -self.slack) & (c <= x + self.slack)
        if self.solvency:
            ok &= np.all((x - c)[:, None] + pay >= -self.slack, axis=1)
        return ok


@dataclass(frozen=True)
class UpperLevelSet(ControlSet):
    """{z: u(x, v(x, z), z) >= x - (T - t - 1) K}, the set induced by a K bound."""

    forward: ForwardGenerator = None
    backward: BackwardGenerator = None
    K: float = 0.0
    slack: float = 1e-6

    kind = "upper_level"

    def dim(self, tree, node, x):
        return self.forward.control_dim(tree, node)

    def threshold(self, tree, node, x):
        t = int(tree.stage[node])
        return x - (tree.T - t - 1) * self.K

    def feasible(self, tree, node, x, Z):
        Z = self._check(tree, node, x, Z)
        val = self.backward.aggregate(tree, node, x, self.forward.step(tree, node, x, Z), Z)
        return val >= self.threshold(tree, node, x) - self.slack


@dataclass(frozen=True)
class ExplicitGridSet(ControlSet):
    """A finite list of controls per node: one array for all nodes, a mapping
    node -> array, or a callable (tree, node, x) -> array. ``within`` optionally
    filters the grid through another control set."""

    grids: object = None
    within: ControlSet | None = None

    kind = "explicit_grid"
    continuous = False

    def grid(self, tree, node, x) -> np.ndarray:
        g = self.grids
        if callable(g):
            g = g(tree, node, x)
        elif isinstance(g, Mapping):
            g = g[node]
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if self.within is not None:
            g = g[self.within.feasible(tree, node, x, g)]
        return g

    def dim(self, tree, node, x):
        g = self.grids
        if callable(g):
            g = g(tree, node, x)
        elif isinstance(g, Mapping):
            g = g[node]
        g = np.asarray(g, dtype=float)
        return 1 if g.ndim == 1 else g.shape[1]

    def feasible(self, tree, node, x, Z):
        Z = self._check(tree, node, x, Z)
        g = self.grid(tree, node, x)
        return np.array([bool(np.any(np.all(g == z, axis=1))) for z in Z], dtype=bool)

    def anchor(self, tree, node, x):
        g = self.grid(tree, node, x)
        if len(g) == 0:
            return None
        zero = np.all(g == 0, axis=1)
        return g[int(np.argmax(zero))] if zero.any() else g[0]


def budget_grid(prices, holdings, h: float) -> np.ndarray:
    """Frictionless rebalancing set {theta >= 0: theta . S = holdings . S} on a
    simplex lattice of wealth fractions with denominator ceil(1/h)."""
    S = np.asarray(prices, dtype=float)
    w = float(np.dot(holdings, S))
    if np.any(S <= 0) or w < 0:
        raise ControlSetError("budget set needs positive prices and nonnegative wealth")
    m = max(int(np.ceil(1.0 / h)), 1)
    fracs = _simplex_lattice(len(S), m)
    return fracs * w / S


def compositions(m: int, k: int):
    """All k-tuples of nonnegative integers summing to m, in lexicographic order."""
    if k == 1:
        yield (m,)
        return
    for i in range(m + 1):
        for rest in compositions(m - i, k - 1):
            yield (i,) + rest


def _simplex_lattice(k: int, m: int) -> np.ndarray:
    """All points of {f >= 0, sum f = 1} with coordinates in (1/m) Z."""
    return np.array(list(compositions(m, k)), dtype=float) / m


# -- node-level primitives ---------------------------------------------------------

def radius_at(spec: ControlSet, tree: ScenarioTree, node: int, x) -> float:
    """Ray-scan radius M with ||z|| <= M on Theta(x); raises UnboundedError."""
    if isinstance(spec, ExplicitGridSet):
        g = spec.grid(tree, node, x)
        return SAFETY * float(np.max(np.linalg.norm(g, axis=1))) if len(g) else 0.0
    a = spec.anchor(tree, node, x)
    if a is None:
        raise InfeasibleError(f"node {node}: no feasible control at x={x!r}")
    d = len(a)
    if d == 0:
        return 0.0
    dirs = scan_directions(d)
    try:
        r = ray_scan(lambda Z: spec.feasible(tree, node, x, Z), a, dirs)
    except UnboundedError as exc:
        raise UnboundedError(f"node {node}: control set unbounded ({exc})") from exc
    return SAFETY * float(np.max(np.linalg.norm(a[None, :] + r[:, None] * dirs, axis=1)))


def grid_at(spec: ControlSet, tree: ScenarioTree, node: int, x, h: float,
            max_points: int = 200_000) -> np.ndarray:
    """Feasible grid points of spacing <= h, always holding the anchor when feasible."""
    if isinstance(spec, ExplicitGridSet):
        g = spec.grid(tree, node, x)
        if len(g) == 0:
            raise InfeasibleError(f"node {node}: explicit grid empty at x={x!r}")
        return g
    d = spec.dim(tree, node, x)
    if d == 0:
        return np.zeros((1, 0))
    if isinstance(spec, BoxSet):
        lo, hi = spec.bounds(tree, node, x)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise UnboundedError(f"node {node}: box with infinite bounds")
        axes = [np.linspace(l, u, int(np.ceil((u - l) / h - 1e-9)) + 1) if u > l else np.array([l])
                for l, u in zip(lo, hi)]
    else:
        M = radius_at(spec, tree, node, x)
        n = int(np.floor(M / h))
        axes = [h * np.arange(-n, n + 1)] * d
    count = int(np.prod([len(a) for a in axes], dtype=float))
    if count > max_points:
        raise ResolutionError(f"node {node}: {count} grid points exceed {max_points}",
                              h * (count / max_points) ** (1.0 / d))
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(d, -1).T
    pts = pts[spec.feasible(tree, node, x, pts)]
    a = spec.anchor(tree, node, x)
    if a is not None and not np.any(np.all(pts == a, axis=1)):
        pts = np.vstack([pts, a[None, :]])
        pts = pts[np.lexsort(pts.T[::-1])]
    if len(pts) == 0:
        raise ResolutionError(f"node {node}: no feasible grid point at x={x!r}", h / 2)
    return pts


# -- ConditionalValue-level operations ------------------------------------------------

def _states(x: ConditionalValue):
    return list(x.payload)


def is_feasible(spec: ControlSet, tree: ScenarioTree, x: ConditionalValue,
                z: ConditionalValue) -> ConditionalValue:
    if x.stage != z.stage:
        raise ValueError("state and control at different stages")
    out = []
    for pos, n in enumerate(tree.stage_range(x.stage)):
        out.append(int(spec.feasible(tree, n, x[pos], np.asarray(z[pos])[None, :])[0]))
    return ConditionalValue.integer(x.stage, out)


def bounding_radius(spec: ControlSet, tree: ScenarioTree, x: ConditionalValue) -> ConditionalValue:
    return ConditionalValue.real(x.stage, [radius_at(spec, tree, n, x[pos])
                                           for pos, n in enumerate(tree.stage_range(x.stage))])


def discretize(spec: ControlSet, tree: ScenarioTree, x: ConditionalValue, h: float) -> dict:
    """Per-node finite control grids at the state ``x``."""
    return {n: grid_at(spec, tree, n, x[pos], h) for pos, n in enumerate(tree.stage_range(x.stage))}


def dimension_map(spec: ControlSet, tree: ScenarioTree, x: ConditionalValue) -> ConditionalValue:
    return ConditionalValue.integer(x.stage, [spec.dim(tree, n, x[pos])
                                              for pos, n in enumerate(tree.stage_range(x.stage))])


# -- (c4) surrogate and measurable dimension -----------------------------------------

def aitken_limit(seq: np.ndarray) -> np.ndarray:
    """Delta-squared extrapolation of the last three terms, coordinatewise."""
    seq = np.asarray(seq, dtype=float)
    if len(seq) < 3:
        return seq[-1]
    a, b, c = seq[-3], seq[-2], seq[-1]
    d1, d2 = c - b, c - 2 * b + a
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = c - d1 ** 2 / d2
    return np.where(np.abs(d2) > 1e-300, acc, c)


def check_c4_surrogate(spec: ControlSet, tree: ScenarioTree, node: int, xs, zs,
                       x_lim=None, z_lim=None, tol: float = 1e-7) -> Report:
    """Closedness of the graph along (x_n, z_n) -> (x, z) plus uniform radii."""
    xs = np.asarray(xs, dtype=float)
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    x_lim = float(aitken_limit(xs)) if x_lim is None else float(x_lim)
    z_lim = aitken_limit(zs) if z_lim is None else np.asarray(z_lim, dtype=float)
    rep = Report(f"(c4) surrogate at node {node} ({spec.kind})")

    feas = [bool(spec.feasible(tree, node, x, z[None, :])[0]) for x, z in zip(xs, zs)]
    rep.add("sequence feasible", all(feas), f"{sum(feas)}/{len(feas)} picks feasible",
            None if all(feas) else {"index": feas.index(False)})
    conv = abs(xs[-1] - x_lim) <= 1e2 * tol + 1e-12 and np.max(np.abs(zs[-1] - z_lim)) <= 1e2 * tol
    rep.add("sequence convergent", bool(conv), f"last gap {np.max(np.abs(zs[-1] - z_lim)):.2g}")
    closed = bool(spec.feasible(tree, node, x_lim, z_lim[None, :])[0])
    rep.add("(i) closedness", closed, "limit pair feasible" if closed else "limit pair infeasible",
            None if closed else {"x": x_lim, "z": z_lim.tolist()})
    try:
        radii = [radius_at(spec, tree, node, x) for x in list(xs) + [x_lim]]
        rep.add("(ii) boundedness", bool(np.all(np.isfinite(radii))),
                f"sup radius {max(radii):.6g}")
    except (UnboundedError, InfeasibleError) as exc:
        rep.add("(ii) boundedness", False, str(exc))
    return rep


def default_c4_probe(spec: ControlSet, tree: ScenarioTree, node: int, x: float, n: int = 40):
    """A feasible sequence (x_k, z_k) approaching the boundary of Theta(x).

    Boxes approach their upper bound along the first axis from inside; other
    sets approach the ray-scan boundary point along +e_1 with the state fixed.
    """
    k = np.arange(1, n + 1)
    if isinstance(spec, BoxSet):
        xs = x + 2.0 ** -k
        zs = []
        for xk, kk in zip(xs, k):
            lo, hi = spec.bounds(tree, node, xk)
            z = spec.anchor(tree, node, xk).copy()
            z[0] = hi[0] - (hi[0] - lo[0]) * 2.0 ** -(kk + 1)
            zs.append(z)
        lo, hi = spec.bounds(tree, node, x)
        z_lim = spec.anchor(tree, node, x).copy()
        z_lim[0] = hi[0]
        return xs, np.array(zs), x, z_lim
    a = spec.anchor(tree, node, x)
    if a is None:
        raise InfeasibleError(f"node {node}: no feasible control at x={x!r}")
    e = np.zeros(len(a))
    e[0] = 1.0
    r = float(ray_scan(lambda Z: spec.feasible(tree, node, x, Z), a, e[None, :], tol=1e-12)[0])
    lo = np.nextafter(r, 0.0)
    while lo > 0 and not spec.feasible(tree, node, x, (a + lo * e)[None, :])[0]:
        lo = np.nextafter(lo, 0.0)
    zs = np.array([a + lo * (1 - 2.0 ** -kk) * e for kk in k])
    return np.full(n, float(x)), zs, float(x), a + lo * e


def check_dimension_stabilization(spec: ControlSet, tree: ScenarioTree, node: int, xs,
                                  x_lim) -> int | None:
    """Smallest index past which d(node, x_n) = d(node, x_lim), or None."""
    target = spec.dim(tree, node, x_lim)
    dims = [spec.dim(tree, node, x) for x in xs]
    k0 = len(dims)
    while k0 > 0 and dims[k0 - 1] == target:
        k0 -= 1
    return k0 if k0 < len(dims) else None


def c1_c2_report(spec: ControlSet, tree: ScenarioTree, states, seed: int = 0) -> Report:
    """(c1) nonempty grids on a battery of states; (c2) stability of feasibility."""
    from .conditional import check_stability

    rep = Report(f"control set ({spec.kind})")
    bad = None
    for t in range(tree.T):
        for n in tree.stage_range(t):
            for x in states:
                if spec.anchor(tree, n, x) is None:
                    bad = bad or {"node": n, "x": x}
    rep.add("(c1)", bad is None, "a feasible control exists at every tested state", bad)
    rng = np.random.default_rng(seed)
    errs = []
    for t in range(tree.T):
        nodes = list(tree.stage_range(t))
        battery = []
        for _ in range(6):
            xs = rng.choice(np.asarray(states, dtype=float), size=len(nodes))
            zs = []
            for n, x in zip(nodes, xs):
                a = spec.anchor(tree, n, x)
                d = spec.dim(tree, n, x)
                zs.append(a if a is not None and rng.uniform() < 0.5 else rng.normal(size=d))
            battery.append((ConditionalValue.real(t, xs), ConditionalValue.vector(t, zs)))
        res = check_stability(lambda x, z: is_feasible(spec, tree, x, z), battery, tree, t,
                              rng=rng, trials=6)
        if not res.ok:
            errs.append((res.violations or res.errors)[0])
    rep.add("(c2)", not errs, "feasibility indicator F_t-stable", errs[:1] or None)
    return rep

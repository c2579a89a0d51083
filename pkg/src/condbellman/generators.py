"""Forward generators v_t (state dynamics) and backward generators u_t (aggregators).

Generators act locally at a node: the forward map sends a state and a batch of
controls to one next state per child, the backward map folds a batch of child
continuation values into one value at the node. Acting atom by atom makes
every generator F_t-stable by construction; the CV-level wrappers below let
the stability harness confirm it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conditional import ConditionalValue, check_stability
from .report import Report
from .risk import expectation, weighted_logsumexp
from .search import UnboundedError, coordinate_search, ray_scan, scan_directions
from .tree import ScenarioTree


class DomainError(ValueError):
    pass


class NoKError(RuntimeError):
    """The one-step certainty-equivalent gain is unbounded."""


def _batch(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    return Z[None, :] if Z.ndim == 1 else Z


# -- forward generators ------------------------------------------------------------

class ForwardGenerator:
    kind = "abstract"
    vector_state = False

    def control_dim(self, tree: ScenarioTree, node: int) -> int:
        raise NotImplementedError

    def step(self, tree: ScenarioTree, node: int, x, Z) -> np.ndarray:
        """Next states, shape (k, n_children) for a (k, d) control batch."""
        raise NotImplementedError

    def reach(self, tree: ScenarioTree, node: int, lo: float, hi: float, radius: float):
        """Per-child interval containing v(x, z) for x in [lo, hi], |z| <= radius."""
        raise NotImplementedError


@dataclass(frozen=True)
class WealthDynamics(ForwardGenerator):
    """x' = x + theta . dS - c (consumption) or x' = x + theta . dS."""

    consumption: bool = True

    @property
    def kind(self):
        return "wealth_consumption" if self.consumption else "self_financing"

    def control_dim(self, tree, node):
        return tree.shock_dim + int(self.consumption)

    def step(self, tree, node, x, Z):
        Z = _batch(Z)
        dS = tree.child_shocks(node)
        if dS.shape[1] == 0:
            raise DomainError(f"node {node}: forward generator needs shock data")
        d = dS.shape[1]
        if Z.shape[1] != self.control_dim(tree, node):
            raise DomainError(f"node {node}: control dimension {Z.shape[1]} != "
                              f"{self.control_dim(tree, node)}")
        x = np.asarray(x, dtype=float)
        base = x - Z[:, d] if self.consumption else x + np.zeros(len(Z))
        out = np.empty((len(Z), len(dS)))
        for j in range(len(dS)):
            acc = base
            for i in range(d):
                acc = acc + Z[:, i] * dS[j, i]
            out[:, j] = acc
        return out

    def reach(self, tree, node, lo, hi, radius):
        dS = tree.child_shocks(node)
        gain = np.sqrt(np.sum(dS ** 2, axis=1) + (1.0 if self.consumption else 0.0))
        return lo - radius * gain, hi + radius * gain


@dataclass(frozen=True)
class PortfolioIdentity(ForwardGenerator):
    """x' = z on every child: the chosen portfolio becomes the next state."""

    dim: int = 1
    vector_state = True

    @property
    def kind(self):
        return "portfolio_identity"

    def control_dim(self, tree, node):
        return self.dim

    def step(self, tree, node, x, Z):
        Z = _batch(Z)
        nc = len(tree.children[node])
        return np.repeat(Z[:, None, :], nc, axis=1)


@dataclass(frozen=True)
class UserForward(ForwardGenerator):
    fn: Callable
    dim: int = 1
    label: str = "user_table"

    @property
    def kind(self):
        return self.label

    def control_dim(self, tree, node):
        return self.dim

    def step(self, tree, node, x, Z):
        return np.asarray(self.fn(tree, node, x, _batch(Z)), dtype=float)


# -- backward generators -----------------------------------------------------------

def gamma_family(gamma_min: float, gamma_max: float, shape: str = "decreasing") -> Callable:
    """Risk aversion as a function of wealth with range in [gamma_min, gamma_max]."""
    if not 0 < gamma_min <= gamma_max:
        raise ValueError("need 0 < gamma_min <= gamma_max")
    span = gamma_max - gamma_min
    if shape == "decreasing":
        return lambda x: gamma_min + span / (1.0 + np.maximum(x, 0.0))
    if shape == "increasing":
        return lambda x: gamma_max - span / (1.0 + np.maximum(x, 0.0))
    if shape == "constant":
        return lambda x: gamma_min + 0.0 * np.asarray(x, dtype=float)
    raise ValueError(f"unknown gamma shape {shape!r}")


def entropic_kernel(p: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """g(y) = -log E[exp(-y) | F_t]; increasing, concave, g(0) = 0."""
    return -weighted_logsumexp(p, -np.asarray(Y, dtype=float))


class BackwardGenerator:
    kind = "abstract"

    def aggregate(self, tree: ScenarioTree, node: int, x, Y, Z) -> np.ndarray:
        """Value at ``node`` for child continuations ``Y`` (k, n_children)."""
        raise NotImplementedError


@dataclass(frozen=True)
class EntropicWealthDependent(BackwardGenerator):
    """u(x, y) = (1/gamma(x)) g(gamma(x) y) with the entropic kernel g."""

    gamma_min: float = 1.0
    gamma_max: float = 1.0
    shape: str = "decreasing"

    kind = "entropic_wealth_dependent"

    def gamma(self, x):
        return gamma_family(self.gamma_min, self.gamma_max, self.shape)(np.asarray(x, dtype=float))

    def aggregate(self, tree, node, x, Y, Z=None):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        g = self.gamma(x)
        gcol = g[..., None] if np.ndim(g) else g
        return -weighted_logsumexp(tree.child_probs(node), -gcol * Y) / g


@dataclass(frozen=True)
class ScalingFamily(BackwardGenerator):
    """u(x, y) = x g(y / x) for x > 0 (risk sharing aggregator)."""

    kind = "scaling_family"

    def aggregate(self, tree, node, x, Y, Z=None):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError(f"node {node}: scaling family needs positive states")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        xcol = x[..., None] if x.ndim else x
        return x * entropic_kernel(tree.child_probs(node), Y / xcol)


REWARDS = {
    # consumption utility kappa (1 - exp(-c)); the last control component is c
    "consumption_exp": lambda x, Z, w: w * (1.0 - np.exp(-Z[:, -1])),
    # unbounded above; used to exhibit a failing K bound
    "quadratic_bonus": lambda x, Z, w: w * np.sum(Z ** 2, axis=1),
    "zero": lambda x, Z, w: np.zeros(len(Z)),
}


@dataclass(frozen=True)
class Additive(BackwardGenerator):
    """u(x, y, z) = E[y | F_t] + r(x, z)."""

    reward: str = "zero"
    weight: float = 1.0

    kind = "additive"

    def aggregate(self, tree, node, x, Y, Z):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        Z = _batch(Z)
        r = REWARDS[self.reward](x, Z, self.weight)
        return expectation(tree.child_probs(node), Y) + r


@dataclass(frozen=True)
class UserBackward(BackwardGenerator):
    fn: Callable
    label: str = "user_table"

    @property
    def kind(self):
        return self.label

    def aggregate(self, tree, node, x, Y, Z):
        return np.asarray(self.fn(tree, node, x, np.atleast_2d(Y), _batch(Z)), dtype=float)


class TerminalGenerator:
    kind = "abstract"

    def value(self, tree: ScenarioTree, node: int, X) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class TerminalIdentity(TerminalGenerator):
    kind = "identity"

    def value(self, tree, node, X):
        return np.asarray(X, dtype=float).copy()


@dataclass(frozen=True)
class TerminalExpUtility(TerminalGenerator):
    """(1 - exp(-a x)) / a."""

    a: float = 1.0
    kind = "exponential_utility"

    def value(self, tree, node, X):
        return -np.expm1(-self.a * np.asarray(X, dtype=float)) / self.a


@dataclass(frozen=True)
class TerminalUser(TerminalGenerator):
    fn: Callable
    kind = "user_table"

    def value(self, tree, node, X):
        return np.asarray(self.fn(tree, node, X), dtype=float)


# -- ConditionalValue-level evaluation ------------------------------------------------

def evaluate_forward(v: ForwardGenerator, tree: ScenarioTree, x: ConditionalValue,
                     z: ConditionalValue) -> ConditionalValue:
    t = x.stage
    if z.stage != t:
        raise ValueError("state and control live at different stages")
    if t >= tree.T:
        raise ValueError("no forward step from the terminal stage")
    out = [None] * tree.n_atoms(t + 1)
    for pos, n in enumerate(tree.stage_range(t)):
        zc = np.asarray(z[pos], dtype=float).reshape(1, -1)
        nxt = v.step(tree, n, x[pos], zc)[0]
        for j, c in enumerate(tree.children[n]):
            out[tree.position(c)] = nxt[j]
    kind = "vector" if v.vector_state else "real"
    return ConditionalValue(t + 1, out, kind)


def evaluate_backward(u: BackwardGenerator, tree: ScenarioTree, x: ConditionalValue,
                      y: ConditionalValue, z: ConditionalValue | None = None) -> ConditionalValue:
    t = x.stage
    if y.stage != t + 1:
        raise ValueError("continuation must live one stage after the state")
    if np.any(y.payload == np.inf):
        raise ValueError("continuation values may not be +inf")
    out = []
    for pos, n in enumerate(tree.stage_range(t)):
        kids = [tree.position(c) for c in tree.children[n]]
        zc = np.zeros((1, 0)) if z is None else np.asarray(z[pos], dtype=float).reshape(1, -1)
        out.append(float(u.aggregate(tree, n, x[pos], y.payload[kids][None, :], zc)[0]))
    return ConditionalValue.real(t, out)


# -- condition checks ----------------------------------------------------------------

GENERAL = ("(v1)", "(v2)", "(u1)", "(u2)", "(u3)")
BOUNDED_GAIN = ("(v1)", "(v2)", "(v3)", "(v4)", "(v5)", "(v6)",
                "(u1)", "(u2')", "(u3)", "(u4)", "(u5)", "(u6)", "(u7)", "K-bound")


def _tol(v, tol=1e-10):
    return tol * np.maximum(1.0, np.abs(v))


def check_generator_conditions(v: ForwardGenerator, u: BackwardGenerator, tree: ScenarioTree,
                               battery: int = 40, seed: int = 0, regime: str = "bounded_gain",
                               x_range: tuple[float, float] = (-3.0, 3.0),
                               k_battery=None) -> Report:
    """Battery tests for the generator hypotheses of the chosen regime.

    ``regime="general"`` checks (v1)-(v2), (u1)-(u3); ``"bounded_gain"`` checks
    (v1)-(v6), (u1), (u2'), (u3)-(u7) and the existence of a finite K.
    """
    labels = {"general": GENERAL, "bounded_gain": BOUNDED_GAIN}.get(
        regime, GENERAL + BOUNDED_GAIN)
    rng = np.random.default_rng(seed)
    rep = Report(f"generator conditions ({v.kind} / {u.kind}, regime {regime})")
    positive = isinstance(u, ScalingFamily)
    lo, hi = (0.1, max(x_range[1], 1.0)) if positive else x_range

    samples = []
    for _ in range(battery):
        t = int(rng.integers(0, tree.T))
        n = int(rng.choice(tree.atoms(t)))
        d = v.control_dim(tree, n)
        nc = len(tree.children[n])
        x = float(rng.uniform(lo, hi))
        z = rng.normal(size=d)
        y = rng.normal(scale=2.0, size=nc)
        samples.append((t, n, x, z, y))

    def V(n, x, z):
        return v.step(tree, n, x, z[None, :])[0]

    def U(n, x, y, z):
        return float(u.aggregate(tree, n, x, y[None, :], z[None, :])[0])

    def stage_battery(t, size):
        out = []
        for _ in range(size):
            nt = tree.n_atoms(t)
            xs = rng.uniform(lo, hi, size=nt)
            zs = [rng.normal(size=v.control_dim(tree, m)) for m in tree.stage_range(t)]
            ys = rng.normal(scale=2.0, size=tree.n_atoms(t + 1))
            out.append((ConditionalValue.real(t, xs), ConditionalValue.vector(t, zs),
                        ConditionalValue.real(t + 1, ys)))
        return out

    if "(v1)" in labels or "(u1)" in labels:
        vrep, urep = [], []
        for t in range(tree.T):
            bat = stage_battery(t, 6)
            if not v.vector_state:
                vrep.append(check_stability(lambda x, z: evaluate_forward(v, tree, x, z),
                                            [b[:2] for b in bat], tree, t, rng=rng, trials=6))
            urep.append(check_stability(lambda x, y, z: evaluate_backward(u, tree, x, y, z),
                                        [(b[0], b[2], b[1]) for b in bat], tree, t, rng=rng, trials=6))
        if "(v1)" in labels:
            bad = [r for r in vrep if not r.ok]
            rep.add("(v1)", not bad, "forward generator F_t-stable",
                    (bad[0].violations or bad[0].errors)[:1] if bad else None)
        if "(u1)" in labels:
            bad = [r for r in urep if not r.ok]
            rep.add("(u1)", not bad, "backward generator F_t-stable",
                    (bad[0].violations or bad[0].errors)[:1] if bad else None)

    if "(v2)" in labels:
        eps, worst = 1e-6, 0.0
        for t, n, x, z, y in samples:
            dz = rng.normal(size=len(z))
            dz *= eps / max(np.linalg.norm(dz), 1e-300)
            diff = np.max(np.abs(V(n, x + eps, z + dz) - V(n, x, z)))
            worst = max(worst, diff / eps)
        rep.add("(v2)", np.isfinite(worst) and worst < 1e6,
                f"finite-difference Lipschitz estimate {worst:.3g}")

    if "(v3)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            if np.any(V(n, x + abs(rng.normal()), z) < V(n, x, z) - 1e-12):
                bad = bad or {"node": n, "x": x, "z": z.tolist()}
        rep.add("(v3)", bad is None, "increasing in the state", bad)

    if "(v4)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            z2 = rng.normal(size=len(z))
            lam = rng.uniform()
            lhs = V(n, x, lam * z + (1 - lam) * z2)
            rhs = lam * V(n, x, z) + (1 - lam) * V(n, x, z2)
            if np.any(lhs < rhs - _tol(rhs)):
                bad = bad or {"node": n, "x": x, "z": z.tolist(), "z'": z2.tolist()}
        rep.add("(v4)", bad is None, "concave in the control", bad)

    if "(v5)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            if np.linalg.norm(z) > 0 and not np.any(V(n, x, z) < x):
                bad = bad or {"node": n, "x": x, "z": z.tolist()}
        rep.add("(v5)", bad is None, "every nonzero control has downside", bad)

    if "(v6)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            if np.any(np.abs(V(n, x, np.zeros_like(z)) - x) > _tol(x, 1e-12)):
                bad = bad or {"node": n, "x": x}
        rep.add("(v6)", bad is None, "v(x, 0) = x", bad)

    if "(u2)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            y2 = y + np.abs(rng.normal(size=len(y)))
            if U(n, x, y2, z) < U(n, x, y, z) - _tol(U(n, x, y, z)):
                bad = bad or {"node": n, "x": x, "y": y.tolist(), "y'": y2.tolist()}
        rep.add("(u2)", bad is None, "increasing in the continuation", bad)

    if "(u2')" in labels:
        bad = None
        for t, n, x, z, y in samples:
            x2 = x + abs(rng.normal())
            y2 = y + np.abs(rng.normal(size=len(y))) * rng.integers(0, 2)
            if U(n, x2, y2, z) < U(n, x, y, z) - _tol(U(n, x, y, z)):
                bad = bad or {"node": n, "x": x, "x'": x2, "y": y.tolist(), "y'": y2.tolist()}
        rep.add("(u2')", bad is None, "increasing in state and continuation", bad)

    if "(u3)" in labels:
        bad, worst = None, -np.inf
        for t, n, x, z, y in samples:
            limit = U(n, x, y, z)
            tail = U(n, x + 2.0 ** -30, y + 2.0 ** -30, z)
            worst = max(worst, tail - limit)
            if tail > limit + 1e-8:
                bad = bad or {"node": n, "x": x, "y": y.tolist()}
        rep.add("(u3)", bad is None,
                f"upper semi-continuity along decreasing sequences (max excess {worst:.2g})", bad)

    if "(u4)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            y2, z2, lam = rng.normal(scale=2.0, size=len(y)), rng.normal(size=len(z)), rng.uniform()
            lhs = U(n, x, lam * y + (1 - lam) * y2, lam * z + (1 - lam) * z2)
            rhs = min(U(n, x, y, z), U(n, x, y2, z2))
            if lhs < rhs - _tol(rhs):
                bad = bad or {"node": n, "x": x}
        rep.add("(u4)", bad is None, "quasi-concave in (y, z)", bad)

    if "(u5)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            c = rng.normal(scale=3.0)
            base = U(n, x, y, z)
            if abs(U(n, x, y + c, z) - (base + c)) > _tol(base):
                bad = bad or {"node": n, "x": x, "c": c}
        rep.add("(u5)", bad is None, "translation invariant in y", bad)

    if "(u6)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            if not np.any(y < 0):
                continue
            hit = any(U(n, x, (2.0 ** j) * y, (2.0 ** j) * z) <= -1e6 for j in range(61))
            if not hit:
                bad = bad or {"node": n, "x": x, "y": y.tolist(), "z": z.tolist()}
        rep.add("(u6)", bad is None, "doubling scan diverges to -inf on downside nodes", bad)

    if "(u7)" in labels:
        bad = None
        for t, n, x, z, y in samples:
            val = U(n, x, np.zeros_like(y), np.zeros_like(z))
            if abs(val) > 1e-12:
                bad = bad or {"node": n, "x": x, "value": val}
        rep.add("(u7)", bad is None, "u(x, 0, 0) = 0", bad)

    if "K-bound" in labels:
        kb = k_battery if k_battery is not None else np.linspace(lo, hi, 5)
        try:
            est = estimate_K(v, u, tree, kb)
            rep.add("K-bound", True, f"K = {est.K:.6g}", est.argmax)
        except (NoKError, DomainError) as exc:
            rep.add("K-bound", False, f"ineligible for the unbounded-control regime: {exc}")
    return rep


# -- the K constant ---------------------------------------------------------------

@dataclass
class KEstimate:
    K: float
    per_stage: list
    argmax: dict


def one_step_gain(v: ForwardGenerator, u: BackwardGenerator, tree: ScenarioTree, node: int,
                  x: float) -> Callable:
    def gain(Z):
        Z = _batch(Z)
        return u.aggregate(tree, node, x, v.step(tree, node, x, Z), Z) - x
    return gain


def maximize_gain(gain: Callable, d: int, h: float = 0.05, tol: float = 1e-7,
                  slack: float = 1e-9, max_points: int = 20000):
    """sup_z gain(z) over the scanned level set {gain >= -slack}; gain(0) = 0."""
    if d == 0:
        return np.zeros(0), float(gain(np.zeros((1, 0)))[0])
    dirs = scan_directions(d)
    radii = ray_scan(lambda Z: gain(Z) >= -slack, np.zeros(d), dirs)
    R = float(np.max(radii))
    n_axis = int(np.floor(R / h))
    while (2 * n_axis + 1) ** d > max_points:
        h *= 2
        n_axis = int(np.floor(R / h))
    axis = h * np.arange(-n_axis, n_axis + 1)
    lattice = np.array(np.meshgrid(*[axis] * d, indexing="ij")).reshape(d, -1).T
    vals = gain(lattice)
    i = int(np.argmax(vals))
    z, best = coordinate_search(gain, lattice[i], step=h, tol=tol)
    return z, best


def estimate_K(v: ForwardGenerator, u: BackwardGenerator, tree: ScenarioTree, x_battery,
               h: float = 0.05) -> KEstimate:
    """max over stages, nodes and battery states of sup_z u(x, v(x, z), z) - x."""
    per_stage, best = [], {"K": -np.inf}
    for t in range(tree.T):
        kt = -np.inf
        for n in tree.stage_range(t):
            for x in np.atleast_1d(x_battery):
                gain = one_step_gain(v, u, tree, n, float(x))
                try:
                    z, val = maximize_gain(gain, v.control_dim(tree, n), h=h)
                except UnboundedError as exc:
                    raise NoKError(f"node {n}, x={x:g}: one-step supremum diverges ({exc})") from exc
                if val > kt:
                    kt = val
                if val > best["K"]:
                    best = {"K": val, "stage": t, "node": n, "x": float(x), "z": z.tolist()}
        per_stage.append(kt)
    return KEstimate(K=max(max(per_stage), 0.0), per_stage=per_stage, argmax=best)

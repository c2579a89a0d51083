"""Conditional convex risk measures rho_t: L0_{t+1} -> L0_t on a scenario tree."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .conditional import ConditionalValue, check_stability
from .report import Report
from .tree import ScenarioTree

SENSITIVITY_THRESHOLD = 1e6
MAX_DOUBLINGS = 60


def weighted_logsumexp(p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """log sum_j p_j exp(a[..., j]) with a max shift; rows with -inf stay finite-safe.

    The sum over children is an explicit loop so the floating-point result of a
    row does not depend on how many rows are evaluated together.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=-1)
    shift = np.where(np.isfinite(m), m, 0.0)
    acc = np.zeros(a.shape[:-1])
    with np.errstate(invalid="ignore", over="ignore"):
        for j in range(a.shape[-1]):
            acc = acc + p[j] * np.exp(a[..., j] - shift)
        out = np.log(acc) + shift
    return np.where(m == np.inf, np.inf, out)


def expectation(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum_j p_j y[..., j] in a fixed summation order; -inf absorbs."""
    acc = np.zeros(np.shape(y)[:-1])
    for j in range(np.shape(y)[-1]):
        acc = acc + p[j] * y[..., j]
    return acc


@dataclass(frozen=True)
class ConditionalRiskMeasure:
    """``entropic``: (1/gamma) log E[exp(-gamma x) | F_t], gamma possibly per node.
    ``neg_expectation``: -E[x | F_t].  ``table``: user map (probs, values) -> value.
    """

    kind: str = "entropic"
    gamma: float | Mapping[int, float] = 1.0
    table: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("entropic", "neg_expectation", "table"):
            raise ValueError(f"unknown risk measure kind {self.kind!r}")
        if self.kind == "entropic":
            gammas = self.gamma.values() if isinstance(self.gamma, Mapping) else [self.gamma]
            if any(not g > 0 for g in gammas):
                raise ValueError("entropic risk aversion must be positive")
        if self.kind == "table" and self.table is None:
            raise ValueError("table risk measure needs a callable")

    def gamma_at(self, node: int) -> float:
        if isinstance(self.gamma, Mapping):
            return float(self.gamma.get(node, self.gamma.get(-1, 1.0)))
        return float(self.gamma)

    def local(self, tree: ScenarioTree, node: int, values: np.ndarray) -> np.ndarray:
        """Risk of child payoffs ``values[..., j]`` seen from ``node``."""
        p = tree.child_probs(node)
        values = np.asarray(values, dtype=float)
        if self.kind == "entropic":
            g = self.gamma_at(node)
            return weighted_logsumexp(p, -g * values) / g
        if self.kind == "neg_expectation":
            return -expectation(p, values)
        return np.asarray(self.table(p, values), dtype=float)


def evaluate(rho: ConditionalRiskMeasure, tree: ScenarioTree, x: ConditionalValue
             ) -> ConditionalValue:
    if x.kind == "vector":
        raise ValueError("risk measures act on scalar payoffs")
    if x.stage < 1:
        raise ValueError("risk measures act on stage >= 1 payoffs")
    vals = x.payload.astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("risk measure of an infinite payoff")
    t = x.stage - 1
    out = []
    for n in tree.stage_range(t):
        kids = [tree.position(c) for c in tree.children[n]]
        out.append(float(rho.local(tree, n, vals[kids][None, :])[0]))
    return ConditionalValue.real(t, out)


def random_battery(tree: ScenarioTree, t: int, size: int, rng, scale: float = 2.0):
    rng = np.random.default_rng(rng)
    n = tree.n_atoms(t + 1)
    return [ConditionalValue.real(t + 1, rng.normal(scale=scale, size=n)) for _ in range(size)]


def _lift(tree: ScenarioTree, m: np.ndarray, t: int) -> np.ndarray:
    """Stage-t values broadcast to the stage-(t+1) atoms below them."""
    return np.array([m[tree.position(tree.parent[c])] for c in tree.stage_range(t + 1)])


def check_axioms(rho: ConditionalRiskMeasure, tree: ScenarioTree, t: int, battery,
                 rng=0, tol: float = 1e-10) -> Report:
    """Normalisation, monotonicity, translation invariance, F_t-convexity,
    F_t-stability and the sensitivity-to-large-losses doubling scan."""
    rng = np.random.default_rng(rng)
    battery = list(battery)
    if not battery:
        raise ValueError("empty battery")
    report = Report(f"risk measure axioms ({rho.kind}) at stage {t}")
    rho_of = lambda x: evaluate(rho, tree, x).payload
    scale = lambda v: tol * np.maximum(1.0, np.abs(v))

    zero = ConditionalValue.constant(tree, t + 1, 0.0)
    r0 = rho_of(zero)
    report.add("normalized", bool(np.all(r0 == 0.0)), f"max |rho(0)| = {np.max(np.abs(r0)):.3g}")

    worst = None
    for y in battery:
        x = ConditionalValue.real(t + 1, y.payload + np.abs(rng.normal(size=len(y))))
        gap = rho_of(x) - rho_of(y)
        bad = gap > scale(rho_of(y))
        if np.any(bad):
            worst = worst or {"x": x.payload.tolist(), "y": y.payload.tolist(),
                              "atom": int(np.argmax(bad))}
    report.add("monotone", worst is None, "" if worst is None else "x >= y but rho(x) > rho(y)", worst)

    worst = None
    for y in battery:
        m = rng.normal(scale=3.0, size=tree.n_atoms(t))
        shifted = ConditionalValue.real(t + 1, y.payload + _lift(tree, m, t))
        err = np.abs(rho_of(shifted) - (rho_of(y) - m))
        if np.any(err > scale(rho_of(y))):
            worst = worst or {"y": y.payload.tolist(), "m": m.tolist(), "err": float(err.max())}
    report.add("translation invariant", worst is None, "", worst)

    worst = None
    for a, b in zip(battery, battery[1:] + battery[:1]):
        lam = rng.uniform(size=tree.n_atoms(t))
        L = _lift(tree, lam, t)
        mix = ConditionalValue.real(t + 1, L * a.payload + (1 - L) * b.payload)
        rhs = lam * rho_of(a) + (1 - lam) * rho_of(b)
        if np.any(rho_of(mix) > rhs + scale(rhs)):
            worst = worst or {"x": a.payload.tolist(), "y": b.payload.tolist(), "lambda": lam.tolist()}
    report.add("F_t-convex", worst is None, "", worst)

    stab = check_stability(lambda x: evaluate(rho, tree, x), [(b,) for b in battery], tree, t,
                           rng=rng, trials=min(20, len(battery)))
    report.add("F_t-stable", stab.ok, f"{len(stab.violations)} violations, {len(stab.errors)} errors",
               stab.violations[:1] or stab.errors[:1] or None)

    failures = []
    for y in battery:
        for pos, n in enumerate(tree.stage_range(t)):
            kids = [tree.position(c) for c in tree.children[n]]
            if not np.any(y.payload[kids] < 0):
                continue
            if sensitivity_scan(rho, tree, n, y.payload[kids]) is None:
                failures.append({"node": n, "y": y.payload[kids].tolist()})
    report.add("sensitive to large losses", not failures,
               f"doubling scan to 2^{MAX_DOUBLINGS} with threshold {SENSITIVITY_THRESHOLD:g}",
               failures[:1] or None)
    return report


def sensitivity_scan(rho: ConditionalRiskMeasure, tree: ScenarioTree, node: int,
                     child_values: np.ndarray) -> int | None:
    """Smallest j <= 60 with rho(2^j y) >= 1e6 at ``node``, or None."""
    y = np.asarray(child_values, dtype=float)
    for j in range(MAX_DOUBLINGS + 1):
        if rho.local(tree, node, (2.0 ** j) * y[None, :])[0] >= SENSITIVITY_THRESHOLD:
            return j
    return None

"""Random closed sets, stable families of selections and normal integrands on a
finite sample space Omega' = {0, ..., m-1} with a finite target E' = {0, ..., k-1}.

A selection is a row of point labels, one per sample point. With the full
power set as sigma-algebra every subset is measurable and every subset of E'
is closed, so stability (closure under pasting) is the only structure left,
and it is equivalent to being a product of the pointwise projections.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .report import Report

MATERIALIZE_LIMIT = 10 ** 6


class NotStableError(ValueError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


@dataclass(frozen=True)
class FiniteRandomClosedSet:
    """S(omega) as a tuple of sorted label tuples over E' = range(n_points)."""

    sets: tuple
    n_points: int
    weights: tuple | None = None
    dist: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        sets = tuple(tuple(sorted(set(int(e) for e in s))) for s in self.sets)
        if not sets:
            raise ValueError("empty sample space")
        for w, s in enumerate(sets):
            if not s:
                raise ValueError(f"S({w}) is empty")
            if s[0] < 0 or s[-1] >= self.n_points:
                raise ValueError(f"S({w}) has labels outside E'")
        object.__setattr__(self, "sets", sets)
        if self.weights is not None and len(self.weights) != len(sets):
            raise ValueError("one weight per sample point")

    @property
    def n_omega(self) -> int:
        return len(self.sets)

    def preimage(self, open_set) -> tuple:
        """S^{-1}(O) = {omega: S(omega) meets O}."""
        O = set(open_set)
        return tuple(w for w, s in enumerate(self.sets) if O.intersection(s))


class StableSet:
    """A family of selections: explicit unique rows, or an implicit product."""

    def __init__(self, rows=None, factors=None, n_omega=None):
        if (rows is None) == (factors is None):
            raise ValueError("give rows or factors")
        self.factors = None if factors is None else tuple(tuple(f) for f in factors)
        if rows is not None:
            rows = np.asarray(rows, dtype=np.int64)
            if rows.ndim != 2:
                rows = rows.reshape(len(rows), -1) if len(rows) else np.zeros((0, n_omega or 0), np.int64)
            rows = np.unique(rows, axis=0) if len(rows) else rows
        self._rows = rows

    @classmethod
    def product(cls, factors) -> "StableSet":
        return cls(factors=factors)

    @property
    def n_omega(self) -> int:
        return len(self.factors) if self.factors is not None else self._rows.shape[1]

    def __len__(self):
        if self.factors is not None:
            return int(np.prod([len(f) for f in self.factors], dtype=object))
        return len(self._rows)

    @property
    def rows(self) -> np.ndarray:
        """All selections as sorted unique rows (materialised on demand)."""
        if self._rows is None:
            if len(self) > MATERIALIZE_LIMIT:
                raise MemoryError(f"{len(self)} selections exceed the materialisation limit")
            grids = np.meshgrid(*[np.asarray(f) for f in self.factors], indexing="ij")
            self._rows = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
        return self._rows

    def __iter__(self):
        if self._rows is None:
            return (tuple(r) for r in itertools.product(*self.factors))
        return (tuple(int(v) for v in r) for r in self._rows)

    def __contains__(self, x) -> bool:
        x = tuple(int(v) for v in x)
        if self.factors is not None:
            return len(x) == len(self.factors) and all(v in f for v, f in zip(x, self.factors))
        return bool(np.any(np.all(self._rows == np.array(x), axis=1)))

    def as_set(self) -> set:
        return set(iter(self))

    def projections(self) -> tuple:
        if self.factors is not None:
            return self.factors
        return tuple(tuple(int(v) for v in np.unique(self._rows[:, w])) for w in range(self.n_omega))

    def is_product(self) -> bool:
        """X = prod_omega proj_omega(X) (rows are unique and lie in the product)."""
        if self.factors is not None:
            return True
        return len(self) == int(np.prod([len(p) for p in self.projections()], dtype=object))

    def __eq__(self, other):
        if not isinstance(other, StableSet):
            return NotImplemented
        if len(self) != len(other) or self.n_omega != other.n_omega:
            return False
        if self.factors is not None and other.factors is not None:
            return self.factors == other.factors
        return self.as_set() == other.as_set()

    def __repr__(self):
        return f"StableSet({len(self)} selections on {self.n_omega} points)"


def paste(x, y, block) -> tuple:
    """1_{A^c} x + 1_A y."""
    block = set(block)
    return tuple(b if w in block else a for w, (a, b) in enumerate(zip(x, y)))


def _swap_witness(members: set, m: int):
    proj = [sorted({x[w] for x in members}) for w in range(m)]
    for x in sorted(members):
        for w in range(m):
            for e in proj[w]:
                if e == x[w]:
                    continue
                z = x[:w] + (e,) + x[w + 1:]
                if z not in members:
                    y = next(v for v in sorted(members) if v[w] == e)
                    return {"x": x, "y": y, "block": (w,), "pasted": z}
    return None


def _product_size(members: set, m: int) -> int:
    size = 1
    for w in range(m):
        size *= len({x[w] for x in members})
    return size


def pasting_witness(X: StableSet):
    """(x, y, {omega}) whose pasting leaves X, or None when X is closed under
    all single-point pastings (which generate every pasting)."""
    return _swap_witness(X.as_set(), X.n_omega)


def is_stable(X: StableSet) -> bool:
    """Closure under pasting, tested directly (independently of the product form)."""
    return pasting_witness(X) is None


def selections(S: FiniteRandomClosedSet) -> StableSet:
    """X_S = prod_omega S(omega); materialised lazily."""
    X = StableSet.product(S.sets)
    if len(X) <= MATERIALIZE_LIMIT:
        X.rows  # noqa: B018  (materialise eagerly while small)
    return X


def set_from_stable(X: StableSet, n_points: int | None = None, validate: bool = True
                    ) -> FiniteRandomClosedSet:
    """S_X(omega) = {x(omega): x in X}."""
    if len(X) == 0:
        raise ValueError("empty family of selections")
    if validate and not X.is_product():
        w = pasting_witness(X)
        raise NotStableError(f"family is not stable: pasting {w['x']} with {w['y']} on "
                             f"{w['block']} gives {w['pasted']}", w)
    proj = X.projections()
    n = n_points if n_points is not None else max(max(p) for p in proj) + 1
    return FiniteRandomClosedSet(proj, n)


def stable_hull(X0) -> StableSet:
    """Smallest stable superset: add single-point pastings until nothing changes."""
    members = {tuple(int(v) for v in x) for x in X0}
    if not members:
        raise ValueError("empty family")
    m = len(next(iter(members)))
    while True:
        proj = [sorted({x[w] for x in members}) for w in range(m)]
        new = {x[:w] + (e,) + x[w + 1:] for x in members for w in range(m) for e in proj[w]}
        if new <= members:
            return StableSet(rows=sorted(members))
        members |= new


def castaing_family(S: FiniteRandomClosedSet) -> list[tuple]:
    """x_k(omega) = k-th smallest element of S(omega), clamped to the last."""
    K = max(len(s) for s in S.sets)
    return [tuple(s[min(k, len(s) - 1)] for s in S.sets) for k in range(K)]


# -- normal integrands -----------------------------------------------------------------

@dataclass(frozen=True)
class FiniteNormalIntegrand:
    """f(omega, e) in R or +inf, one row per sample point."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2:
            raise ValueError("integrand table must be 2-D (omega, e)")
        if np.any(np.isnan(t)) or np.any(t == -np.inf):
            raise ValueError("integrand values must lie in R or be +inf")
        if not np.all(np.any(np.isfinite(t), axis=1)):
            raise ValueError("every section needs a finite value (nonempty epigraph)")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def shape(self):
        return self.table.shape


def functional(f: FiniteNormalIntegrand) -> Callable:
    """u_f: selections (k, m) -> values (k, m) with u_f(x)(omega) = f(omega, x(omega))."""
    table = f.table
    cols = np.arange(table.shape[0])

    def u(X):
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        return table[cols[None, :], X]

    return u


def level_family(u: Callable, n_omega: int, n_points: int, levels: np.ndarray) -> StableSet:
    """X_u = {(x, r): u(x) <= r} with r on the level grid, pairs encoded as
    e * len(levels) + level index."""
    L = len(levels)
    xs = np.array(list(itertools.product(range(n_points), repeat=n_omega)), dtype=np.int64)
    rs = np.array(list(itertools.product(range(L), repeat=n_omega)), dtype=np.int64)
    vals = u(xs)                                   # (kx, m)
    ok = np.all(vals[:, None, :] <= levels[rs][None, :, :], axis=2)  # (kx, kr)
    ix, ir = np.nonzero(ok)
    return StableSet(rows=xs[ix] * L + rs[ir], n_omega=n_omega)


def integrand_from_functional(u: Callable, n_omega: int, n_points: int, levels: np.ndarray
                              ) -> FiniteNormalIntegrand:
    """f_u(omega, e) = inf of the omega-section of the epigraphical set S_{X_u}."""
    L = len(levels)
    X = level_family(u, n_omega, n_points, levels)
    S = set_from_stable(X, n_points * L)
    table = np.full((n_omega, n_points), np.inf)
    for w, pairs in enumerate(S.sets):
        for code in pairs:
            e, k = divmod(code, L)
            table[w, e] = min(table[w, e], levels[k])
    return FiniteNormalIntegrand(table)


def integrand_roundtrip(f: FiniteNormalIntegrand) -> Report:
    """f_{u_f} = f on the table and u_{f_u} = u on every selection."""
    m, k = f.shape
    levels = np.unique(f.table[np.isfinite(f.table)])
    u = functional(f)
    fu = integrand_from_functional(u, m, k, levels)
    rep = Report(f"normal integrand roundtrip ({m} x {k})")
    diff = np.argwhere(~((fu.table == f.table)))
    rep.add("f_(u_f) = f", len(diff) == 0, f"{len(diff)} mismatching cells",
            None if len(diff) == 0 else {"omega": int(diff[0][0]), "e": int(diff[0][1])})
    xs = np.array(list(itertools.product(range(k), repeat=m)), dtype=np.int64)
    bad = np.flatnonzero(~np.all(functional(fu)(xs) == u(xs), axis=1))
    rep.add("u_(f_u) = u", len(bad) == 0, f"{len(xs)} selections, {len(bad)} mismatches",
            None if len(bad) == 0 else {"x": xs[bad[0]].tolist()})
    return rep


# -- suites ---------------------------------------------------------------------------

def all_random_sets(n_omega: int, n_points: int):
    subsets = [s for r in range(1, n_points + 1) for s in itertools.combinations(range(n_points), r)]
    for combo in itertools.product(subsets, repeat=n_omega):
        yield FiniteRandomClosedSet(combo, n_points)


def random_set(rng, n_omega: int, n_points: int, max_size: int | None = None) -> FiniteRandomClosedSet:
    rng = np.random.default_rng(rng)
    sets = []
    for _ in range(n_omega):
        size = int(rng.integers(1, (max_size or n_points) + 1))
        sets.append(rng.choice(n_points, size=size, replace=False))
    return FiniteRandomClosedSet(sets, n_points)


def reciprocality_suite(max_omega: int = 3, max_points: int = 4, random_cases: int = 100,
                        seed: int = 0) -> Report:
    """S = S_{X_S} and X = X_{S_X}, exhaustively on small spaces and on random
    larger ones; Castaing families cover S; the hull equals the product of projections."""
    rep = Report("random set reciprocality")
    rng = np.random.default_rng(seed)
    n, bad = 0, None
    for m in range(1, max_omega + 1):
        for k in range(1, max_points + 1):
            for S in all_random_sets(m, k):
                n += 1
                X = selections(S)
                ok = set_from_stable(X, k) == S and selections(set_from_stable(X, k)) == X
                fam = castaing_family(S)
                ok &= all({x[w] for x in fam} == set(S.sets[w]) for w in range(m))
                if not ok and bad is None:
                    bad = S.sets
    rep.add("exhaustive reciprocality", bad is None, f"{n} random sets", bad)
    bad = None
    for _ in range(random_cases):
        m, k = int(rng.integers(4, 7)), int(rng.integers(5, 9))
        S = random_set(rng, m, k, max_size=3)
        X = selections(S)
        ok = set_from_stable(X, k) == S and selections(set_from_stable(X, k)) == X
        fam = castaing_family(S)
        ok &= all({x[w] for x in fam} == set(S.sets[w]) for w in range(m))
        raw = X.rows[rng.choice(len(X), size=min(len(X), 4), replace=False)]
        hull = stable_hull(raw)
        ok &= hull == selections(set_from_stable(StableSet(rows=raw), k, validate=False))
        if not ok and bad is None:
            bad = S.sets
    rep.add("randomized reciprocality", bad is None, f"{random_cases} larger instances", bad)
    return rep


def stability_product_suite(max_size: int = 16) -> Report:
    """X stable <=> X = prod proj(X), over every subset X of E'^Omega' with
    |E'|^|Omega'| <= max_size."""
    rep = Report("stability is product structure")
    n, bad = 0, None
    for m in range(1, 5):
        for k in range(1, 5):
            if k ** m > max_size:
                continue
            universe = list(itertools.product(range(k), repeat=m))
            for r in range(1, len(universe) + 1):
                for sub in itertools.combinations(universe, r):
                    n += 1
                    members = set(sub)
                    stable = _swap_witness(members, m) is None
                    if stable != (len(members) == _product_size(members, m)) and bad is None:
                        bad = sub
    rep.add("stable <=> product", bad is None, f"{n} families", bad)
    return rep


def integrand_suite(random_cases: int = 100, seed: int = 0) -> Report:
    rep = Report("normal integrand roundtrip")
    n, bad = 0, None
    for m in range(1, 4):
        for k in range(1, 5):
            if m * k > 8:
                continue
            for vals in itertools.product((0.0, 1.0, np.inf), repeat=m * k):
                t = np.array(vals).reshape(m, k)
                if not np.all(np.any(np.isfinite(t), axis=1)):
                    continue
                n += 1
                if not integrand_roundtrip(FiniteNormalIntegrand(t)).ok and bad is None:
                    bad = t.tolist()
    rep.add("exhaustive roundtrip", bad is None, f"{n} integrands with values in {{0, 1, inf}}", bad)
    rng = np.random.default_rng(seed)
    bad = None
    for _ in range(random_cases):
        t = rng.integers(0, 6, size=(3, 4)).astype(float)
        t[rng.uniform(size=t.shape) < 0.2] = np.inf
        t[np.arange(3), rng.integers(0, 4, size=3)] = rng.integers(0, 6, size=3)
        if not integrand_roundtrip(FiniteNormalIntegrand(t)).ok and bad is None:
            bad = t.tolist()
    rep.add("randomized roundtrip", bad is None, f"{random_cases} random 3 x 4 integer tables", bad)
    return rep

"""F_t-measurable random objects on a scenario tree.

On a finite tree every G-measurable random variable is one payload per atom,
so concatenation, the conditional metric, essential suprema and conditional
expectations are all exact nodewise operations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tree import ScenarioTree, StagePartition, TreeError

KINDS = ("real", "int", "vector")


@dataclass(frozen=True, eq=False)
class ConditionalValue:
    """One payload per stage-``stage`` atom.

    ``real`` payloads are extended reals (±inf allowed), ``int`` payloads are
    naturals under the discrete metric, ``vector`` payloads are finite real
    vectors whose length may vary from atom to atom (measurable dimension).
    """

    stage: int
    payload: object
    kind: str = "real"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown payload kind {self.kind!r}")
        if self.kind == "vector":
            rows = tuple(np.array(r, dtype=float).reshape(-1) for r in self.payload)
            for r in rows:
                if not np.all(np.isfinite(r)):
                    raise ValueError("vector payloads must be finite")
                r.setflags(write=False)
            object.__setattr__(self, "payload", rows)
        else:
            dtype = np.int64 if self.kind == "int" else float
            arr = np.array(self.payload, dtype=dtype).reshape(-1)
            if self.kind == "real" and np.any(np.isnan(arr)):
                raise ValueError("NaN is not an extended real")
            arr.setflags(write=False)
            object.__setattr__(self, "payload", arr)

    @classmethod
    def real(cls, stage: int, values) -> "ConditionalValue":
        return cls(stage, values, "real")

    @classmethod
    def integer(cls, stage: int, values) -> "ConditionalValue":
        return cls(stage, values, "int")

    @classmethod
    def vector(cls, stage: int, rows) -> "ConditionalValue":
        return cls(stage, rows, "vector")

    @classmethod
    def constant(cls, tree: ScenarioTree, stage: int, c: float) -> "ConditionalValue":
        return cls.real(stage, np.full(tree.n_atoms(stage), float(c)))

    def __len__(self):
        return len(self.payload)

    def __getitem__(self, pos):
        return self.payload[pos]

    @property
    def dims(self) -> tuple[int, ...]:
        if self.kind == "vector":
            return tuple(len(r) for r in self.payload)
        return (1,) * len(self)

    @property
    def values(self) -> np.ndarray:
        if self.kind == "vector":
            raise TypeError("vector payloads have per-atom length; use .payload")
        return self.payload

    def map(self, fn: Callable) -> "ConditionalValue":
        """Apply a map atom by atom (always F_t-stable)."""
        if self.kind == "vector":
            return ConditionalValue.vector(self.stage, [fn(r) for r in self.payload])
        return ConditionalValue(self.stage, [fn(v) for v in self.payload], self.kind)

    def same_as(self, other: "ConditionalValue", atol: float = 0.0) -> bool:
        return not mismatches(self, other, atol)

    def __repr__(self):
        body = list(self.payload) if self.kind == "vector" else self.payload.tolist()
        return f"ConditionalValue(stage={self.stage}, kind={self.kind}, {body})"


def _check_compatible(x: ConditionalValue, y: ConditionalValue):
    if x.stage != y.stage:
        raise ValueError(f"stage mismatch: {x.stage} vs {y.stage}")
    if x.kind != y.kind:
        raise ValueError(f"payload kind mismatch: {x.kind} vs {y.kind}")
    if len(x) != len(y):
        raise ValueError("payloads cover different numbers of atoms")


def mismatches(x: ConditionalValue, y: ConditionalValue, atol: float = 0.0) -> list[int]:
    """Atom positions where the two values differ by more than ``atol``."""
    _check_compatible(x, y)
    bad = []
    for i in range(len(x)):
        a, b = x[i], y[i]
        if x.kind == "vector":
            if a.shape != b.shape or (a.size and np.max(np.abs(a - b)) > atol):
                bad.append(i)
        elif a != b and not (np.isfinite(a) and np.isfinite(b) and abs(a - b) <= atol):
            bad.append(i)
    return bad


def lift_partition(partition: StagePartition, tree: ScenarioTree, s: int) -> StagePartition:
    """The same F_t partition expressed on the atoms of a later stage s."""
    t = partition.stage
    if s == t:
        return partition
    if s < t:
        raise TreeError("cannot lift a partition to an earlier stage")
    blocks = [partition.blocks[tree.position(tree.ancestor(n, t))] for n in tree.stage_range(s)]
    # every block stays nonempty because each atom has descendants at s
    return StagePartition(s, tuple(blocks))


def concatenate(parts: Sequence[ConditionalValue], partition: StagePartition,
                tree: ScenarioTree | None = None, dims: Sequence[int] | None = None
                ) -> ConditionalValue:
    """Paste part k on block k: the unique element sum_k 1_{A_k} x_k.

    Parts may live at a later stage than the partition (F_t partitions act on
    F_s objects for s >= t); ``tree`` is then needed to lift the partition.
    """
    if not parts:
        raise ValueError("no parts to concatenate")
    if len(parts) < partition.n_blocks:
        raise ValueError(f"{partition.n_blocks} blocks but only {len(parts)} parts")
    stage, kind = parts[0].stage, parts[0].kind
    for p in parts:
        if p.stage != stage:
            raise ValueError(f"stage mismatch among parts: {p.stage} vs {stage}")
        if p.kind != kind:
            raise ValueError("parts mix payload kinds")
    if stage != partition.stage:
        if tree is None:
            raise ValueError("partition stage differs from parts; pass the tree to lift it")
        partition = lift_partition(partition, tree, stage)
    if len(partition.blocks) != len(parts[0]):
        raise ValueError("partition and parts cover different atoms")
    if dims is not None and len(dims) != len(partition.blocks):
        raise ValueError("one dimension per atom required")
    out = []
    for i, k in enumerate(partition.blocks):
        v = parts[k][i]
        if dims is not None and kind == "vector" and len(v) != dims[i]:
            raise ValueError(f"atom {i}: part {k} has dimension {len(v)}, expected {dims[i]}")
        out.append(v)
    return ConditionalValue(stage, out, kind)


def metric(x: ConditionalValue, y: ConditionalValue) -> ConditionalValue:
    """Nodewise distance: Euclidean for reals/vectors, discrete for integers."""
    _check_compatible(x, y)
    if x.kind == "int":
        return ConditionalValue.real(x.stage, (x.payload != y.payload).astype(float))
    if x.kind == "real":
        a, b = x.payload, y.payload
        same = a == b
        if np.any(~same & ~(np.isfinite(a) & np.isfinite(b))):
            raise ValueError("metric undefined between distinct infinite payloads")
        d = np.where(same, 0.0, np.abs(np.where(same, 0.0, a - b)))
        return ConditionalValue.real(x.stage, d)
    d = []
    for i, (a, b) in enumerate(zip(x.payload, y.payload)):
        if a.shape != b.shape:
            raise ValueError(f"atom {i}: dimension mismatch {a.size} vs {b.size}")
        d.append(float(np.sqrt(np.sum((a - b) ** 2))))
    return ConditionalValue.real(x.stage, d)


def _extended_family(values: Sequence[ConditionalValue]) -> np.ndarray:
    if not values:
        raise ValueError("essential sup/inf of an empty family")
    for v in values:
        if v.kind == "vector":
            raise ValueError("essential sup/inf needs scalar payloads")
        _check_compatible(values[0], v)
    return np.vstack([v.payload.astype(float) for v in values])


def essential_sup(values: Sequence[ConditionalValue]) -> ConditionalValue:
    return ConditionalValue.real(values[0].stage if values else 0, _extended_family(values).max(axis=0))


def essential_inf(values: Sequence[ConditionalValue]) -> ConditionalValue:
    return ConditionalValue.real(values[0].stage if values else 0, _extended_family(values).min(axis=0))


def conditional_expectation(tree: ScenarioTree, x: ConditionalValue, t: int) -> ConditionalValue:
    """E[x | F_t] for a finite real F_s-measurable x (s >= t)."""
    if x.kind == "vector":
        raise ValueError("conditional expectation of scalar payloads only")
    if t > x.stage or t < 0:
        raise ValueError(f"cannot condition a stage-{x.stage} value on F_{t}")
    vals = x.payload.astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("conditional expectation of an infinite payload")
    out = np.empty(tree.n_atoms(t))
    for i, n in enumerate(tree.stage_range(t)):
        w = tree.conditional_probability(n, x.stage)
        out[i] = float(np.dot(w, vals))
    return ConditionalValue.real(t, out)


def measurable_subsequence(sequence: Sequence[ConditionalValue], index: ConditionalValue
                           ) -> ConditionalValue:
    """sum_j 1_{index = j} x_j, i.e. the nodewise pick x_{index(atom)}(atom)."""
    if index.kind != "int":
        raise ValueError("index must be an integer-valued conditional value")
    picks = []
    for i, j in enumerate(index.payload):
        if not 0 <= j < len(sequence):
            raise IndexError(f"atom {i}: index {j} outside the sequence")
        picks.append(sequence[j][i])
    return ConditionalValue(index.stage, picks, sequence[0].kind)


# -- stability harness ---------------------------------------------------------

@dataclass
class StabilityReport:
    trials: int = 0
    violations: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.errors


def _paste_args(arg_tuples, partition, tree):
    return tuple(concatenate([a[j] for a in arg_tuples], partition, tree)
                 for j in range(len(arg_tuples[0])))


def check_stability(f: Callable, battery: Sequence[tuple], tree: ScenarioTree, t: int,
                    rng: np.random.Generator | int = 0, trials: int = 20,
                    atol: float = 1e-12) -> StabilityReport:
    """Test f(sum 1_{A_k} x_k) == sum 1_{A_k} f(x_k) along F_t partitions.

    ``battery`` holds argument tuples of ConditionalValues (stages >= t). Each
    trial draws a partition of the stage-t atoms and one argument tuple per
    block; the finest partition is always among the trials.
    """
    rng = np.random.default_rng(rng)
    report = StabilityReport()
    battery = [b if isinstance(b, tuple) else (b,) for b in battery]
    n = tree.n_atoms(t)
    partitions = [StagePartition(t, tuple(range(n)))]
    partitions += [StagePartition.random(tree, t, rng) for _ in range(max(trials - 1, 0))]
    for partition in partitions:
        pick = rng.integers(0, len(battery), size=partition.n_blocks)
        # distinct inputs per block where the battery allows it
        if len(battery) >= partition.n_blocks:
            pick = rng.choice(len(battery), size=partition.n_blocks, replace=False)
        chosen = [battery[i] for i in pick]
        report.trials += 1
        try:
            pasted = _paste_args(chosen, partition, tree)
            lhs = f(*pasted)
            images = [f(*args) for args in chosen]
            rhs = concatenate(images, partition, tree)
        except Exception as exc:  # surfaced as a diagnostic, not a violation
            report.errors.append({"partition": partition.blocks, "inputs": pick.tolist(),
                                  "error": f"{type(exc).__name__}: {exc}"})
            continue
        bad = mismatches(lhs, rhs, atol)
        if bad:
            report.violations.append({"partition": partition.blocks, "inputs": pick.tolist(),
                                      "stage": lhs.stage, "atom": bad[0],
                                      "node": tree.node_at(lhs.stage, bad[0])})
    return report


def random_value(tree: ScenarioTree, stage: int, rng: np.random.Generator, kind: str = "real",
                 scale: float = 1.0, dims: Sequence[int] | None = None) -> ConditionalValue:
    n = tree.n_atoms(stage)
    if kind == "real":
        return ConditionalValue.real(stage, rng.normal(scale=scale, size=n))
    if kind == "int":
        return ConditionalValue.integer(stage, rng.integers(0, 5, size=n))
    dims = rng.integers(1, 4, size=n) if dims is None else dims
    return ConditionalValue.vector(stage, [rng.normal(scale=scale, size=int(d)) for d in dims])

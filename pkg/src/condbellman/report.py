from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class Check:
    label: str
    passed: bool
    detail: str = ""
    witness: Any = None


@dataclass
class Report:
    """Ordered pass/fail entries; checkers return these instead of raising."""

    title: str = ""
    checks: list[Check] = field(default_factory=list)

    def add(self, label: str, passed: bool, detail: str = "", witness: Any = None) -> Check:
        check = Check(label, bool(passed), detail, witness)
        self.checks.append(check)
        return check

    def extend(self, other: "Report", prefix: str = "") -> "Report":
        for c in other.checks:
            self.checks.append(Check(prefix + c.label, c.passed, c.detail, c.witness))
        return self

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def get(self, label: str) -> Check:
        for c in self.checks:
            if c.label == label:
                return c
        raise KeyError(label)

    def lines(self) -> list[str]:
        out = [self.title] if self.title else []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            out.append(f"[{mark}] {c.label}" + (f": {c.detail}" if c.detail else ""))
        return out

    def __str__(self):
        return "\n".join(self.lines())

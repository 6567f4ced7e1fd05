"""Action-assignment plans: deterministic (pattern -> action) or probabilistic
(pattern -> Pr*(A=1 | z))."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .dataset import Pattern
from .errors import InputError, MissingColumn, PlanPatternMissing, UnparseableValue


@dataclass(frozen=True)
class Plan:
    """An investigator-specified plan.

    ``assignments`` maps patterns to an action (deterministic plans) or to a
    probability of action 1 (probabilistic plans). ``default`` covers patterns
    missing from the mapping; leave it ``None`` to make them an error.
    """

    assignments: Mapping[Pattern, float]
    probabilistic: bool = False
    default: float | None = None
    label: str = "plan"

    def __post_init__(self):
        clean = {tuple(int(v) for v in z): float(g) for z, g in self.assignments.items()}
        values = list(clean.values()) + ([] if self.default is None else [float(self.default)])
        for g in values:
            if self.probabilistic and not 0.0 <= g <= 1.0:
                raise InputError(f"plan probability {g} outside [0, 1]")
            if not self.probabilistic and g not in (0.0, 1.0):
                raise InputError(f"deterministic plan action {g} is not 0 or 1")
        object.__setattr__(self, "assignments", clean)

    @classmethod
    def constant(cls, action: int) -> Plan:
        """Everyone takes ``action``; the ACE contrasts ``constant(1)`` with ``constant(0)``."""
        return cls({}, default=float(action), label="all-treat" if action else "all-untreat")

    @classmethod
    def from_rule(cls, rule: Callable[[Pattern], float], patterns: Iterable[Pattern],
                  probabilistic: bool = False, label: str = "plan") -> Plan:
        return cls({tuple(z): rule(tuple(z)) for z in patterns}, probabilistic=probabilistic, label=label)

    def value(self, z) -> float:
        z = tuple(z)
        if z in self.assignments:
            return self.assignments[z]
        if self.default is None:
            raise PlanPatternMissing(z)
        return float(self.default)

    def arm_weight(self, z, arm: int) -> float:
        """Probability the plan puts on ``arm`` at ``z``."""
        g = self.value(z)
        return g if arm == 1 else 1.0 - g

    def describe(self) -> dict:
        return {
            "label": self.label,
            "kind": "probabilistic" if self.probabilistic else "deterministic",
            "default": self.default,
            "assignments": [{"z": list(z), "value": g} for z, g in sorted(self.assignments.items())],
        }


def load_plan(path, covariates: Sequence[str]) -> Plan:
    """Read a plan CSV: covariate columns plus either ``action`` or ``probability``."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for c in covariates:
            if c not in header:
                raise MissingColumn(c, str(path))
        if "action" in header:
            column, probabilistic = "action", False
        elif "probability" in header:
            column, probabilistic = "probability", True
        else:
            raise MissingColumn("action or probability", str(path))
        table = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                z = tuple(int(row[c]) for c in covariates)
            except ValueError:
                raise UnparseableValue(lineno, ",".join(covariates), str([row[c] for c in covariates]),
                                       "level codes") from None
            try:
                table[z] = float(row[column])
            except ValueError:
                raise UnparseableValue(lineno, column, row[column], "a number") from None
    return Plan(table, probabilistic=probabilistic, label=path.stem)

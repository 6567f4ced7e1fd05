"""Positivity audits.

Two conditions are checked. The *sample* condition asks whether every observed
covariate pattern has at least one unit in each arm, using the empirical
propensity ``n_za / n_z``. The *structural* condition asks whether a declared
population-level propensity keeps each arm at or above ``epsilon`` wherever the
pattern has positive mass. A sample zero can be attributed to one type or the
other only against a declared :class:`StructuralSpec`; the data alone cannot
tell them apart.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import Pattern, StratumTable, format_pattern
from .errors import EmptyTable, InputError, MissingColumn, SpecPatternMissing, UnknownStratum, UnparseableValue
from .plans import Plan

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"
INDETERMINATE = "indeterminate"

_INDETERMINATE_NOTE = (
    "sample zero cells cannot be attributed to a structural or a sampling cause "
    "from the data alone; supply a structural spec"
)
_TWO_SIDED_NOTE = (
    "probabilistic plan checked on both arms: Pr(A=1|z) >= epsilon where g*(z) > 0 "
    "and Pr(A=0|z) >= epsilon where g*(z) < 1"
)


@dataclass(frozen=True)
class PositivityConfig:
    epsilon: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InputError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class StructuralSpec:
    """Declared population propensities ``Pr(A=1 | z)``.

    ``structural_zeros`` holds ``(pattern, arm)`` pairs for actions that are
    impossible by background knowledge. ``masses`` is optional; patterns with
    declared mass 0 are outside the population and never checked.
    """

    probabilities: Mapping[Pattern, float]
    structural_zeros: frozenset = frozenset()
    label: str = ""
    masses: Mapping[Pattern, float] | None = None

    def __post_init__(self):
        probs = {tuple(z): float(p) for z, p in self.probabilities.items()}
        zeros = frozenset((tuple(z), int(a)) for z, a in self.structural_zeros)
        for z, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise InputError(f"declared Pr(A=1|{z}) = {p} outside [0, 1]")
        for z, a in zeros:
            if z not in probs:
                probs[z] = 1.0 - a
            if probs[z] != 1.0 - a:
                raise InputError(f"structural zero for A={a} at {z} contradicts declared Pr(A=1|z)={probs[z]}")
        object.__setattr__(self, "probabilities", dict(sorted(probs.items())))
        object.__setattr__(self, "structural_zeros", zeros)
        if self.masses is not None:
            object.__setattr__(self, "masses", {tuple(z): float(m) for z, m in self.masses.items()})

    def pr(self, z, arm: int) -> float:
        z = tuple(z)
        if z not in self.probabilities:
            raise SpecPatternMissing(z)
        p = self.probabilities[z]
        return p if arm == 1 else 1.0 - p

    def is_structural_zero(self, z, arm: int) -> bool:
        return (tuple(z), arm) in self.structural_zeros

    def has_mass(self, z) -> bool:
        return self.masses is None or self.masses.get(tuple(z), 0.0) > 0.0

    @property
    def patterns(self) -> list[Pattern]:
        return list(self.probabilities)


@dataclass(frozen=True)
class CellFinding:
    pattern: Pattern
    n_total: int | None = None
    n_by_arm: tuple[int, int] | None = None
    propensity: tuple[float, float] | None = None
    declared: tuple[float, float] | None = None
    plan_weight: tuple[float, float] | None = None
    exact_violation: tuple[bool, bool] = (False, False)
    near_violation: tuple[bool, bool] = (False, False)
    structural_violation: tuple[bool, bool] = (False, False)
    classification: tuple[str | None, str | None] = (None, None)

    def to_dict(self, names: Sequence[str]) -> dict:
        d = {"pattern": list(self.pattern), "label": format_pattern(names, self.pattern)}
        for key in ("n_total", "n_by_arm", "propensity", "declared", "plan_weight"):
            value = getattr(self, key)
            if value is not None:
                d[key] = list(value) if isinstance(value, tuple) else value
        d["exact_violation"] = list(self.exact_violation)
        d["near_violation"] = list(self.near_violation)
        d["structural_violation"] = list(self.structural_violation)
        d["classification"] = list(self.classification)
        return d


@dataclass(frozen=True)
class PositivityReport:
    kind: str
    epsilon: float
    findings: tuple[CellFinding, ...]
    verdict: str
    notes: tuple[str, ...] = ()
    population: str | None = None
    covariate_names: tuple[str, ...] = field(default=())

    @property
    def exact_violations(self) -> list[tuple[Pattern, int]]:
        return [(f.pattern, a) for f in self.findings for a in (0, 1) if f.exact_violation[a]]

    @property
    def near_violations(self) -> list[tuple[Pattern, int]]:
        return [(f.pattern, a) for f in self.findings for a in (0, 1) if f.near_violation[a]]

    @property
    def structural_violations(self) -> list[tuple[Pattern, int]]:
        return [(f.pattern, a) for f in self.findings for a in (0, 1) if f.structural_violation[a]]

    def finding(self, z) -> CellFinding:
        for f in self.findings:
            if f.pattern == tuple(z):
                return f
        raise UnknownStratum(z)

    def to_dict(self) -> dict:
        names = self.covariate_names
        if not names and self.findings:
            names = tuple(f"z{j + 1}" for j in range(len(self.findings[0].pattern)))
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "population": self.population,
            "verdict": self.verdict,
            "findings": [f.to_dict(names) for f in self.findings],
            "notes": list(self.notes),
        }


def empirical_propensity(table: StratumTable, z, a: int) -> float:
    """``n_by_arm[a] / n_total`` for the cell at ``z``."""
    cell = table[z]
    if cell.n_total == 0:
        raise UnknownStratum(z)
    return cell.n_by_arm[a] / cell.n_total


def _sample_flags(table: StratumTable, z: Pattern, epsilon: float):
    cell = table[z]
    props = (empirical_propensity(table, z, 0), empirical_propensity(table, z, 1))
    exact = tuple(cell.n_by_arm[a] == 0 for a in (0, 1))
    near = tuple(0.0 < props[a] < epsilon for a in (0, 1))
    return cell, props, exact, near


def audit_sample(table: StratumTable, config: PositivityConfig = PositivityConfig()) -> PositivityReport:
    """Check every observed cell for an empty arm (exact) or a propensity below epsilon (near)."""
    if len(table) == 0:
        raise EmptyTable("cannot audit an empty stratum table")
    findings = []
    for z in table:
        cell, props, exact, near = _sample_flags(table, z, config.epsilon)
        findings.append(CellFinding(
            z, cell.n_total, cell.n_by_arm, props,
            exact_violation=exact, near_violation=near,
            classification=tuple(INDETERMINATE if e else None for e in exact),
        ))
    violated = any(any(f.exact_violation) for f in findings)
    return PositivityReport(
        "sample", config.epsilon, tuple(findings),
        "violated" if violated else "satisfied",
        (_INDETERMINATE_NOTE,) if violated else (),
        covariate_names=table.covariate_names,
    )


def audit_structural(spec: StructuralSpec, config: PositivityConfig = PositivityConfig(),
                     table: StratumTable | None = None) -> PositivityReport:
    """Check declared propensities against epsilon; when ``table`` is given, also
    attribute each sample zero cell to a deterministic or a stochastic cause."""
    eps = config.epsilon
    patterns = list(spec.patterns)
    if table is not None:
        for z in table:
            if z not in spec.probabilities:
                raise SpecPatternMissing(z)
    findings = []
    for z in patterns:
        declared = (spec.pr(z, 0), spec.pr(z, 1))
        struct = tuple(spec.has_mass(z) and declared[a] < eps for a in (0, 1))
        kwargs = {}
        if table is not None and z in table:
            cell, props, exact, near = _sample_flags(table, z, eps)
            kwargs = dict(
                n_total=cell.n_total, n_by_arm=cell.n_by_arm, propensity=props,
                exact_violation=exact, near_violation=near,
                classification=tuple(
                    (DETERMINISTIC if declared[a] < eps else STOCHASTIC) if exact[a] else None
                    for a in (0, 1)
                ),
            )
        findings.append(CellFinding(z, declared=declared, structural_violation=struct, **kwargs))
    notes = []
    for f in findings:
        for a in (0, 1):
            if f.classification[a] is not None:
                notes.append(
                    f"zero count for A={a} at {f.pattern}: {f.classification[a]} "
                    f"(declared Pr(A={a}|z) = {f.declared[a]:g})"
                )
    violated = any(any(f.structural_violation) for f in findings)
    return PositivityReport(
        "structural", eps, tuple(findings), "violated" if violated else "satisfied",
        tuple(notes), population=spec.label or None,
        covariate_names=table.covariate_names if table is not None else (),
    )


def check_plan_positivity(spec: StructuralSpec, plan: Plan,
                          config: PositivityConfig = PositivityConfig()) -> PositivityReport:
    """Structural positivity restricted to the arms a plan actually uses."""
    eps = config.epsilon
    findings = []
    for z in spec.patterns:
        g = plan.value(z)
        declared = (spec.pr(z, 0), spec.pr(z, 1))
        weight = (1.0 - g, g)
        if plan.probabilistic:
            required = (g < 1.0, g > 0.0)
        else:
            required = (g == 0.0, g == 1.0)
        struct = tuple(spec.has_mass(z) and required[a] and declared[a] < eps for a in (0, 1))
        findings.append(CellFinding(z, declared=declared, plan_weight=weight, structural_violation=struct))
    violated = any(any(f.structural_violation) for f in findings)
    notes = (_TWO_SIDED_NOTE,) if plan.probabilistic else ()
    return PositivityReport(
        "plan", eps, tuple(findings), "violated" if violated else "satisfied",
        notes, population=spec.label or None,
    )


# -- spec files --------------------------------------------------------------


def _parse_p_treat(text: str, lineno: int):
    token = text.strip().lower()
    if token in ("zero:0", "structural_zero:0", "never_untreated"):
        return 1.0, 0
    if token in ("zero:1", "structural_zero:1", "never_treated"):
        return 0.0, 1
    try:
        return float(token), None
    except ValueError:
        raise UnparseableValue(lineno, "p_treat", text, "a probability or zero:0 / zero:1") from None


def load_structural_spec(path, covariates: Sequence[str], label: str | None = None) -> StructuralSpec:
    """Read a structural spec CSV.

    Columns: the covariates, ``p_treat`` (declared ``Pr(A=1|z)``, or the marker
    ``zero:0`` / ``zero:1`` for a structural zero in that arm) and an optional
    ``mass``.
    """
    path = Path(path)
    probs, zeros, masses = {}, set(), {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for c in [*covariates, "p_treat"]:
            if c not in header:
                raise MissingColumn(c, str(path))
        for lineno, row in enumerate(reader, start=2):
            try:
                z = tuple(int(row[c]) for c in covariates)
            except ValueError:
                raise UnparseableValue(lineno, ",".join(covariates), str([row[c] for c in covariates]),
                                       "level codes") from None
            p, zero_arm = _parse_p_treat(row["p_treat"], lineno)
            probs[z] = p
            if zero_arm is not None:
                zeros.add((z, zero_arm))
            if "mass" in header and row.get("mass", "").strip():
                masses[z] = float(row["mass"])
    return StructuralSpec(probs, frozenset(zeros), label or path.stem, masses or None)

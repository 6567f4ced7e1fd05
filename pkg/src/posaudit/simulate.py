"""Sampling from fully specified target populations and the probability that a
sample of size n shows an empty arm in some observed cell.

For a cell with mass ``p`` and propensity ``pi`` the event "observed, but arm 0
absent" has probability ``(1 - p(1-pi))^n - (1-p)^n``, and likewise for arm 1
with ``p*pi``. The two events are disjoint, so their sum is the exact per-cell
violation probability. Cells are multinomially dependent, so the probability
that *any* cell is violated is only estimated by Monte Carlo.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rng as rng_mod
from .dataset import Dataset, Pattern, build_strata, bundled_path, format_pattern
from .errors import InputError, InvalidSpec
from .positivity import StructuralSpec, audit_sample

BUILTIN_SPECS = ("table1-s1", "table1-s2")
MASS_TOL = 1e-12


@dataclass(frozen=True)
class PopulationSpec:
    """Joint law of (Z, A, Y) with binary Y.

    ``p_outcome[k]`` is ``(Pr(Y=1|A=0,z_k), Pr(Y=1|A=1,z_k))``.
    """

    patterns: tuple[Pattern, ...]
    masses: tuple[float, ...]
    p_treat: tuple[float, ...]
    p_outcome: tuple[tuple[float, float], ...]
    covariate_names: tuple[str, ...]
    structural_zeros: frozenset = frozenset()
    label: str = ""

    def __post_init__(self):
        k = len(self.patterns)
        if not k:
            raise InvalidSpec("population spec has no patterns")
        if not (len(self.masses) == len(self.p_treat) == len(self.p_outcome) == k):
            raise InvalidSpec("patterns, masses, p_treat and p_outcome must have equal lengths")
        pats = tuple(tuple(int(v) for v in z) for z in self.patterns)
        if len(set(pats)) != k:
            raise InvalidSpec("duplicate patterns in population spec")
        if any(len(z) != len(self.covariate_names) for z in pats):
            raise InvalidSpec("pattern length does not match the covariate names")
        if any(v < 0 for z in pats for v in z):
            raise InvalidSpec("level codes must be non-negative")
        probs = [*self.masses, *self.p_treat, *(p for pair in self.p_outcome for p in pair)]
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise InvalidSpec("all spec probabilities must lie in [0, 1]")
        if abs(math.fsum(self.masses) - 1.0) > MASS_TOL:
            raise InvalidSpec(f"pattern masses sum to {math.fsum(self.masses)!r}, not 1")
        zeros = frozenset((tuple(z), int(a)) for z, a in self.structural_zeros)
        for z, a in zeros:
            if z not in pats:
                raise InvalidSpec(f"structural zero at unknown pattern {z}")
            if self.p_treat[pats.index(z)] != 1.0 - a:
                raise InvalidSpec(f"structural zero for A={a} at {z} needs Pr(A=1|z) = {1 - a} exactly")
        object.__setattr__(self, "patterns", pats)
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        object.__setattr__(self, "p_treat", tuple(float(p) for p in self.p_treat))
        object.__setattr__(self, "p_outcome", tuple((float(a), float(b)) for a, b in self.p_outcome))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "structural_zeros", zeros)

    @property
    def covariate_levels(self) -> tuple[int, ...]:
        return tuple(max(z[j] for z in self.patterns) + 1 for j in range(len(self.covariate_names)))

    def mass(self, z) -> float:
        return self.masses[self.patterns.index(tuple(z))]

    def to_structural(self) -> StructuralSpec:
        return StructuralSpec(
            dict(zip(self.patterns, self.p_treat)), self.structural_zeros, self.label,
            dict(zip(self.patterns, self.masses)),
        )


def _prob(x) -> float:
    return float(Fraction(x)) if isinstance(x, str) else float(x)


def population_from_dict(doc: Mapping) -> PopulationSpec:
    """Build a spec from its JSON form.

    ``{"label", "covariates": [...], "patterns": [{"z", "mass", "p_treat",
    "p_outcome": [y|a=0, y|a=1], "structural_zero": arm (optional)}]}``.
    Probabilities may be numbers or fraction strings such as ``"15/246"``.
    """
    try:
        rows = doc["patterns"]
        names = tuple(doc["covariates"])
        zeros = {(tuple(r["z"]), int(r["structural_zero"])) for r in rows if r.get("structural_zero") is not None}
        return PopulationSpec(
            tuple(tuple(r["z"]) for r in rows),
            tuple(_prob(r["mass"]) for r in rows),
            tuple(_prob(r["p_treat"]) for r in rows),
            tuple(tuple(_prob(p) for p in r["p_outcome"]) for r in rows),
            names,
            frozenset(zeros),
            str(doc.get("label", "")),
        )
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise InvalidSpec(f"malformed population spec: {exc}") from None


def load_population_spec(path_or_name) -> PopulationSpec:
    """Load a JSON spec from disk, or one of the bundled ``table1-s1`` / ``table1-s2``."""
    if str(path_or_name) in BUILTIN_SPECS:
        path = bundled_path(f"{path_or_name}.json")
    else:
        path = Path(path_or_name)
        if not path.exists():
            raise InputError(f"population spec not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from None
    spec = population_from_dict(doc)
    if not spec.label:
        spec = PopulationSpec(spec.patterns, spec.masses, spec.p_treat, spec.p_outcome,
                              spec.covariate_names, spec.structural_zeros, Path(path).stem)
    return spec


def _draw(spec: PopulationSpec, n: int, gen: np.random.Generator) -> Dataset:
    k = len(spec.patterns)
    cum = np.cumsum(spec.masses)
    cum /= cum[-1]
    idx = np.minimum(np.searchsorted(cum, gen.random(n), side="right"), k - 1)
    pats = np.array(spec.patterns, dtype=np.int64)
    a = (gen.random(n) < np.array(spec.p_treat)[idx]).astype(np.int64)
    py = np.array(spec.p_outcome)[idx, a]
    y = (gen.random(n) < py).astype(np.float64)
    return Dataset(pats[idx].reshape(n, len(spec.covariate_names)), a, y, spec.covariate_names, spec.covariate_levels)


def sample_population(spec: PopulationSpec, n: int, seed: int = 0) -> Dataset:
    """``n`` independent units: Z from the masses, then A given Z, then Y given (A, Z).

    The draws come from the stream ``(seed, SAMPLE)``: one uniform per unit for
    Z (inverse CDF over the patterns in spec order), then one for A, then one
    for Y.
    """
    if n < 0:
        raise InputError("n must be non-negative")
    return _draw(spec, n, rng_mod.stream(seed, rng_mod.SAMPLE))


def _none_of(x: float, n: int) -> float:
    # (1 - x)^n
    if n == 0:
        return 1.0
    if x >= 1.0:
        return 0.0
    return math.exp(n * math.log1p(-x))


def violation_probability_analytic(spec: PopulationSpec, n: int) -> dict[Pattern, float]:
    """Per cell, Pr(the cell is observed in a size-``n`` sample and one arm is empty)."""
    if n < 0:
        raise InputError("n must be non-negative")
    out = {}
    for z, p, pi in zip(spec.patterns, spec.masses, spec.p_treat):
        absent = _none_of(p, n)
        q = (_none_of(p * (1.0 - pi), n) - absent) + (_none_of(p * pi, n) - absent)
        out[z] = max(q, 0.0)
    return out


@dataclass(frozen=True)
class StudyRow:
    n: int
    cell: Pattern | None  # None is the any-cell row
    analytic: float | None
    mc_frequency: float
    replicates: int
    seed: int


@dataclass(frozen=True)
class SimResult:
    rows: tuple[StudyRow, ...]
    label: str
    covariate_names: tuple[str, ...]

    def row(self, n: int, cell=None) -> StudyRow:
        key = None if cell is None else tuple(cell)
        for r in self.rows:
            if r.n == n and r.cell == key:
                return r
        raise KeyError((n, cell))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "cell", "analytic", "mc_frequency", "replicates", "seed"])
        for r in self.rows:
            w.writerow([
                r.n,
                "any" if r.cell is None else format_pattern(self.covariate_names, r.cell),
                "" if r.analytic is None else format(r.analytic, ".12g"),
                format(r.mc_frequency, ".12g"),
                r.replicates,
                r.seed,
            ])
        return buf.getvalue()


def _replicate(spec: PopulationSpec, n: int, r: int, seed: int) -> tuple[set, bool]:
    data = _draw(spec, n, rng_mod.stream(seed, rng_mod.STUDY, n, r))
    if n == 0:
        return set(), False
    report = audit_sample(build_strata(data))
    cells = {z for z, _ in report.exact_violations}
    return cells, bool(cells)


def run_study(spec: PopulationSpec, n_grid: Sequence[int] | Iterable[int], replicates: int,
              seed: int = 0, threads: int = 1) -> SimResult:
    """Monte Carlo violation frequencies next to the closed-form per-cell values.

    Replicate ``r`` at sample size ``n`` uses the stream ``(seed, STUDY, n, r)``,
    so results do not depend on the grid order or on ``threads``.
    """
    grid = [int(n) for n in n_grid]
    if not grid:
        raise InputError("n_grid must be nonempty")
    if any(n < 0 for n in grid):
        raise InputError("sample sizes must be non-negative")
    if replicates < 1:
        raise InputError("replicates must be at least 1")
    rows = []
    for n in grid:
        jobs = range(replicates)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda r: _replicate(spec, n, r, seed), jobs))
        else:
            results = [_replicate(spec, n, r, seed) for r in jobs]
        analytic = violation_probability_analytic(spec, n)
        for z in spec.patterns:
            hits = sum(z in cells for cells, _ in results)
            rows.append(StudyRow(n, z, analytic[z], hits / replicates, replicates, seed))
        rows.append(StudyRow(n, None, None, sum(any_ for _, any_ in results) / replicates, replicates, seed))
    return SimResult(tuple(rows), spec.label, spec.covariate_names)

"""Unit-level data, exact stratum tables, and population restriction.

Covariates are categorical level codes (small non-negative integers). A
:class:`Dataset` stores records column-wise as read-only numpy arrays, and
:func:`build_strata` reduces it to per-pattern, per-arm counts and outcome
sums, which are sufficient for every nonparametric estimator in the package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyData,
    InputError,
    MissingColumn,
    NonBinaryAction,
    UnknownStratum,
    UnparseableValue,
)

Pattern = tuple[int, ...]

BUNDLED = ("table1.csv", "table1_counts.csv")


@dataclass(frozen=True)
class Schema:
    """Which columns hold the covariates, the action and the outcome."""

    covariates: tuple[str, ...]
    action: str = "A"
    outcome: str = "Y"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise InputError("schema needs at least one covariate")
        names = [*self.covariates, self.action, self.outcome]
        if len(set(names)) != len(names):
            raise InputError(f"schema columns must be distinct: {names}")


TABLE1_SCHEMA = Schema(covariates=("V", "W"), action="A", outcome="Y")


@dataclass(frozen=True)
class UnitRecord:
    covariates: Pattern
    action: int
    outcome: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sample of ``n`` units with categorical covariates.

    Parameters
    ----------
    covariates : ndarray of shape (n, k)
        Level codes; column ``j`` takes values in ``range(covariate_levels[j])``.
    action : ndarray of shape (n,)
        Binary action.
    outcome : ndarray of shape (n,)
        Real outcome in ``outcome_range`` when one is declared.
    covariate_names : tuple of str
    covariate_levels : tuple of int, optional
        Inferred as ``max code + 1`` when omitted.
    outcome_range : (float, float), optional
        Defaults to ``(0, 1)`` when every outcome is 0 or 1, otherwise stays
        ``None`` until declared. Only the bounds need it.
    provenance : tuple of str
        Human-readable record of restrictions applied to the data.
    """

    covariates: np.ndarray
    action: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple[str, ...]
    covariate_levels: tuple[int, ...] | None = None
    outcome_range: tuple[float, float] | None = None
    provenance: tuple[str, ...] = field(default=())

    def __post_init__(self):
        k = len(self.covariate_names)
        cov = np.asarray(self.covariates, dtype=np.int64).reshape(-1, k)
        act = np.asarray(self.action, dtype=np.int64).reshape(-1)
        out = np.asarray(self.outcome, dtype=np.float64).reshape(-1)
        if not (len(cov) == len(act) == len(out)):
            raise InputError("covariates, action and outcome have different lengths")
        if act.size and not np.isin(act, (0, 1)).all():
            raise InputError("action must be binary (0/1)")
        if cov.size and cov.min() < 0:
            raise InputError("covariate level codes must be non-negative")
        if out.size and not np.isfinite(out).all():
            raise InputError("outcomes must be finite")

        observed = tuple(int(c) + 1 for c in cov.max(axis=0)) if len(cov) else (0,) * k
        levels = observed if self.covariate_levels is None else tuple(int(x) for x in self.covariate_levels)
        if len(levels) != k:
            raise InputError("covariate_levels must have one entry per covariate")
        for name, have, declared in zip(self.covariate_names, observed, levels):
            if have > declared:
                raise InputError(f"covariate {name!r} has code {have - 1} beyond its {declared} declared levels")

        rng = self.outcome_range
        if rng is None:
            if np.isin(out, (0.0, 1.0)).all():
                rng = (0.0, 1.0)
        else:
            rng = (float(rng[0]), float(rng[1]))
            if not rng[0] < rng[1]:
                raise InputError(f"outcome range must satisfy y_min < y_max, got {rng}")
            if out.size and (out.min() < rng[0] or out.max() > rng[1]):
                raise InputError(f"outcomes fall outside the declared range {list(rng)}")

        for arr in (cov, act, out):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "action", act)
        object.__setattr__(self, "outcome", out)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "covariate_levels", levels)
        object.__setattr__(self, "outcome_range", rng)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def n(self) -> int:
        return len(self.action)

    def __len__(self) -> int:
        return self.n

    @property
    def records(self) -> Iterator[UnitRecord]:
        for z, a, y in zip(self.covariates.tolist(), self.action.tolist(), self.outcome.tolist()):
            yield UnitRecord(tuple(z), a, y)

    def patterns(self) -> list[Pattern]:
        return [tuple(z) for z in self.covariates.tolist()]

    def take(self, indices) -> Dataset:
        """Subset (or resample, with repeats) the records by position."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.covariates[idx],
            self.action[idx],
            self.outcome[idx],
            self.covariate_names,
            self.covariate_levels,
            self.outcome_range,
            self.provenance,
        )

    def with_outcome_range(self, y_min: float, y_max: float) -> Dataset:
        return Dataset(
            self.covariates, self.action, self.outcome, self.covariate_names,
            self.covariate_levels, (y_min, y_max), self.provenance,
        )

    def summary(self) -> dict:
        return {
            "n": self.n,
            "covariates": list(self.covariate_names),
            "covariate_levels": list(self.covariate_levels),
            "n_treated": int(self.action.sum()),
            "outcome_range": None if self.outcome_range is None else list(self.outcome_range),
            "provenance": list(self.provenance),
        }


@dataclass(frozen=True)
class CellCounts:
    n_total: int
    n_by_arm: tuple[int, int]
    outcome_sum_by_arm: tuple[float, float]

    def mean(self, arm: int) -> float | None:
        """Outcome mean among units with action ``arm``; ``None`` if the arm is empty."""
        if self.n_by_arm[arm] == 0:
            return None
        return self.outcome_sum_by_arm[arm] / self.n_by_arm[arm]


@dataclass(frozen=True, eq=False)
class StratumTable:
    """Per-pattern counts, iterated in lexicographic pattern order."""

    cells: Mapping[Pattern, CellCounts]
    covariate_names: tuple[str, ...]
    covariate_levels: tuple[int, ...]
    outcome_range: tuple[float, float] | None = None
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cells", dict(sorted(self.cells.items())))

    @property
    def n(self) -> int:
        return sum(c.n_total for c in self.cells.values())

    @property
    def n_treated(self) -> int:
        return sum(c.n_by_arm[1] for c in self.cells.values())

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[Pattern]:
        return iter(self.cells)

    def __contains__(self, z) -> bool:
        return tuple(z) in self.cells

    def __getitem__(self, z) -> CellCounts:
        try:
            return self.cells[tuple(z)]
        except KeyError:
            raise UnknownStratum(z) from None

    def items(self):
        return self.cells.items()

    def __eq__(self, other) -> bool:
        if not isinstance(other, StratumTable):
            return NotImplemented
        return self.cells == other.cells and self.covariate_names == other.covariate_names

    def filter(self, predicate: Callable[[Pattern], bool]) -> StratumTable:
        return StratumTable(
            {z: c for z, c in self.cells.items() if predicate(z)},
            self.covariate_names,
            self.covariate_levels,
            self.outcome_range,
            self.provenance,
        )

    def label(self, z: Pattern) -> str:
        return format_pattern(self.covariate_names, z)


def format_pattern(names: Sequence[str], z: Pattern) -> str:
    return " ".join(f"{name}={level}" for name, level in zip(names, z))


def unique_patterns(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Distinct covariate rows in lexicographic order, and each unit's row index."""
    levels = [max(L, 1) for L in data.covariate_levels]
    if math.prod(levels) < 2**62:
        # row-major codes sort lexicographically
        codes = np.ravel_multi_index(data.covariates.T, levels)
        ucodes, inverse = np.unique(codes, return_inverse=True)
        keys = np.column_stack(np.unravel_index(ucodes, levels)).reshape(-1, len(levels))
        return keys, inverse.reshape(-1)
    keys, inverse = np.unique(data.covariates, axis=0, return_inverse=True)
    return keys, inverse.reshape(-1)


def build_strata(data: Dataset) -> StratumTable:
    cells: dict[Pattern, CellCounts] = {}
    if data.n:
        keys, inverse = unique_patterns(data)
        slot = inverse * 2 + data.action
        m = 2 * len(keys)
        counts = np.bincount(slot, minlength=m).reshape(-1, 2)
        sums = np.bincount(slot, weights=data.outcome, minlength=m).reshape(-1, 2)
        for z, cnt, s in zip(keys.tolist(), counts.tolist(), sums.tolist()):
            cells[tuple(z)] = CellCounts(cnt[0] + cnt[1], (cnt[0], cnt[1]), (float(s[0]), float(s[1])))
    return StratumTable(
        cells, data.covariate_names, data.covariate_levels, data.outcome_range, data.provenance
    )


def restrict(data: Dataset, predicate: Callable[[Pattern], bool], description: str | None = None) -> Dataset:
    """Keep the units whose covariate pattern satisfies ``predicate``.

    The restriction is appended to the result's provenance so reports can say
    which target population an estimate refers to. An empty result is allowed.
    """
    keep = np.fromiter((bool(predicate(z)) for z in data.patterns()), dtype=bool, count=data.n)
    label = description if description is not None else str(predicate)
    return replace(data.take(np.flatnonzero(keep)), provenance=(*data.provenance, f"restrict: {label}"))


# -- CSV input -------------------------------------------------------------


def _parse_level(text: str, row: int, column: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise UnparseableValue(
            row, column, text, "a categorical level code (continuous covariates are not supported)"
        ) from None
    if value < 0:
        raise UnparseableValue(row, column, text, "a non-negative level code")
    return value


def _parse_action(text: str, row: int, column: str) -> int:
    if text.strip() not in ("0", "1"):
        raise NonBinaryAction(row, column, text)
    return int(text)


def _parse_outcome(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise UnparseableValue(row, column, text, "a real number") from None
    if not math.isfinite(value):
        raise UnparseableValue(row, column, text, "a finite real number")
    return value


def _read_rows(path: Path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise MissingColumn(col, str(path))
        # line 1 is the header
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def load_csv(path, schema: Schema, outcome_range: tuple[float, float] | None = None) -> Dataset:
    """Read one unit per row from a headed CSV file."""
    path = Path(path)
    cols = [*schema.covariates, schema.action, schema.outcome]
    zs, acts, ys = [], [], []
    for lineno, row in _read_rows(path, cols):
        zs.append([_parse_level(row[c], lineno, c) for c in schema.covariates])
        acts.append(_parse_action(row[schema.action], lineno, schema.action))
        ys.append(_parse_outcome(row[schema.outcome], lineno, schema.outcome))
    return Dataset(np.array(zs, dtype=np.int64), acts, ys, schema.covariates, outcome_range=outcome_range)


def load_counts(path, schema: Schema, outcome_range: tuple[float, float] | None = None) -> Dataset:
    """Read a counts file (one row per pattern/action/outcome with a ``count`` column)
    and expand it to unit records."""
    path = Path(path)
    cols = [*schema.covariates, schema.action, schema.outcome, "count"]
    zs, acts, ys = [], [], []
    for lineno, row in _read_rows(path, cols):
        z = [_parse_level(row[c], lineno, c) for c in schema.covariates]
        a = _parse_action(row[schema.action], lineno, schema.action)
        y = _parse_outcome(row[schema.outcome], lineno, schema.outcome)
        try:
            k = int(row["count"])
        except ValueError:
            raise UnparseableValue(lineno, "count", row["count"], "a non-negative integer") from None
        if k < 0:
            raise UnparseableValue(lineno, "count", row["count"], "a non-negative integer")
        zs.extend([z] * k)
        acts.extend([a] * k)
        ys.extend([y] * k)
    cov = np.array(zs, dtype=np.int64).reshape(-1, len(schema.covariates))
    return Dataset(cov, acts, ys, schema.covariates, outcome_range=outcome_range)


def load_table(path, schema: Schema, outcome_range: tuple[float, float] | None = None) -> Dataset:
    """Load either CSV form, choosing the counts reader when a ``count`` column exists.

    A bare bundled fixture name (``table1.csv``, ``table1_counts.csv``) that
    does not exist on disk resolves to the packaged copy.
    """
    path = Path(path)
    if not path.exists() and path.name in BUNDLED and str(path) == path.name:
        path = bundled_path(path.name)
    if not path.exists():
        raise InputError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    loader = load_counts if "count" in header else load_csv
    return loader(path, schema, outcome_range)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("posaudit") / "data" / name))


def load_table1(form: str = "rows") -> Dataset:
    """The bundled 246-unit reference sample (``form`` is ``"rows"`` or ``"counts"``)."""
    if form == "rows":
        return load_csv(bundled_path("table1.csv"), TABLE1_SCHEMA)
    if form == "counts":
        return load_counts(bundled_path("table1_counts.csv"), TABLE1_SCHEMA)
    raise ValueError(f"unknown form {form!r}")


def write_counts(table: StratumTable, path, action: str = "A", outcome: str = "Y") -> None:
    """Write ``table`` in the counts format.

    Binary outcomes are written exactly as Y=1 / Y=0 counts. Other outcomes
    are written as one row per pattern and arm holding the arm mean, which
    preserves counts and sums but not the outcome distribution.
    """
    names = table.covariate_names
    binary = table.outcome_range == (0.0, 1.0) and all(
        float(s).is_integer() for c in table.cells.values() for s in c.outcome_sum_by_arm
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, action, outcome, "count"])
        for z, cell in table.items():
            for a in (1, 0):
                n_a, s_a = cell.n_by_arm[a], cell.outcome_sum_by_arm[a]
                if binary:
                    w.writerow([*z, a, 1, int(s_a)])
                    w.writerow([*z, a, 0, n_a - int(s_a)])
                elif n_a:
                    w.writerow([*z, a, repr(s_a / n_a), n_a])


def require_nonempty(data: Dataset) -> None:
    if data.n == 0:
        raise EmptyData("dataset is empty")

"""Point estimates of counterfactual means, the ACE and weaker estimands.

An *estimand* argument is one of

* ``0`` or ``1``: the counterfactual mean ``E[Y^a]``;
* ``"ace"``: ``E[Y^1] - E[Y^0]``;
* a :class:`~posaudit.plans.Plan`: the plan mean ``E[Y^g]``.

Internally every estimand is a signed sum of plan means, the ACE being
``constant(1) - constant(0)``. Two estimators are provided: plug-in
standardization over the stratum table (:func:`gcomp_plugin`) and inverse
probability weighting over unit records (:func:`ipw_estimate`). With the
empirical propensity they agree exactly wherever both are defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import rng as rng_mod
from .dataset import Dataset, StratumTable, unique_patterns
from .errors import (
    EmptyData,
    EmptyTable,
    InputError,
    InvalidLevel,
    NoActionVariation,
    NoTreatedUnits,
    PositivityError,
    PositivityViolation,
    RankDeficientDesign,
    TooManyFailedReplicates,
    UndefinedCellMean,
)
from .plans import Plan
from .propensity import PropensityEstimator

Estimand = Union[int, str, Plan]

DEFAULT_TRUNCATION = 0.01
DEFAULT_FAILURE_CAP = 0.10

# resample-induced failures that bootstrap_ci counts instead of propagating
_REPLICATE_FAILURES = (PositivityError, EmptyTable, NoTreatedUnits, NoActionVariation, RankDeficientDesign)


@dataclass(frozen=True)
class Estimate:
    value: float
    estimand: str
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimand": self.estimand, "value": self.value, "n_used": self.n_used,
                "diagnostics": dict(self.diagnostics)}


@dataclass(frozen=True)
class BoundsResult:
    lower: float
    upper: float
    width: float
    violating_mass: float
    estimand: str = ""

    def to_dict(self) -> dict:
        return {"estimand": self.estimand, "lower": self.lower, "upper": self.upper,
                "width": self.width, "violating_mass": self.violating_mass}


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    replicates: int
    seed: int
    level: float = 0.95
    failures: int = 0

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "level": self.level,
                "replicates": self.replicates, "failures": self.failures, "seed": self.seed}


def _components(estimand: Estimand) -> tuple[str, list[tuple[float, Plan]]]:
    if isinstance(estimand, Plan):
        return f"E[Y^g] ({estimand.label})", [(1.0, estimand)]
    if isinstance(estimand, str) and estimand.lower() == "ace":
        return "ACE", [(1.0, Plan.constant(1)), (-1.0, Plan.constant(0))]
    if estimand in (0, 1) and not isinstance(estimand, bool):
        return f"E[Y^{int(estimand)}]", [(1.0, Plan.constant(int(estimand)))]
    raise InputError(f"unknown estimand {estimand!r}")


def _provenance(obj) -> list[str]:
    return list(getattr(obj, "provenance", ()) or ())


def gcomp_plugin(table: StratumTable, estimand: Estimand) -> Estimate:
    """Standardization: ``sum_z (n_z / n) * sum_a g(a|z) * mean(Y | A=a, z)``.

    Raises :class:`UndefinedCellMean` when an arm the estimand puts weight on
    is empty in an observed cell.
    """
    if len(table) == 0 or table.n == 0:
        raise EmptyTable("cannot standardize over an empty table")
    label, parts = _components(estimand)
    n = table.n
    total = 0.0
    min_prop = math.inf
    for coef, plan in parts:
        acc = []
        for z, cell in table.items():
            for a in (0, 1):
                w = plan.arm_weight(z, a)
                if w == 0.0:
                    continue
                mean = cell.mean(a)
                if mean is None:
                    raise UndefinedCellMean(z, a)
                min_prop = min(min_prop, cell.n_by_arm[a] / cell.n_total)
                acc.append(cell.n_total * w * mean)
        total += coef * math.fsum(acc) / n
    return Estimate(total, label, n, {
        "method": "g-computation (plug-in)",
        "min_propensity": min_prop,
        "restriction": _provenance(table),
    })


def ipw_estimate(data: Dataset, est: PropensityEstimator, estimand: Estimand,
                 truncation: float | None = None, hajek: bool = False) -> Estimate:
    """Inverse probability weighted estimate from unit records.

    The default is the Horvitz-Thompson form
    ``(1/n) sum_i Y_i g(A_i|Z_i) / Pr(A=A_i | Z_i)``, which for the ACE reads
    ``(1/n) sum Y A / e(Z) - (1/n) sum Y (1-A) / (1-e(Z))``. With ``hajek``
    each plan term is instead normalized by the sum of its weights; that
    variant is offered for comparison only.

    Parameters
    ----------
    truncation : float, optional
        Clamp propensities to ``[truncation, 1 - truncation]``; must lie in
        ``(0, 0.5]``. Off by default.

    Raises
    ------
    PositivityViolation
        When, without truncation, some observed pattern needs an arm whose
        predicted propensity is exactly 0.
    """
    if data.n == 0:
        raise EmptyData("cannot estimate from an empty dataset")
    if truncation is not None and not 0.0 < truncation <= 0.5:
        raise InputError(f"truncation bound must lie in (0, 0.5], got {truncation}")
    label, parts = _components(estimand)

    keys, inverse = unique_patterns(data)
    patterns = [tuple(z) for z in keys.tolist()]
    e1 = np.array([float(est.predict(z)) for z in patterns])
    if truncation is not None:
        e1 = np.clip(e1, truncation, 1.0 - truncation)
    props = np.column_stack([1.0 - e1, e1])  # props[k, a] = Pr(A=a | pattern k)

    a = data.action
    y = data.outcome
    total = 0.0
    min_prop = math.inf
    max_weight = 0.0
    for coef, plan in parts:
        g = np.array([[plan.arm_weight(z, 0), plan.arm_weight(z, 1)] for z in patterns])
        needed = g > 0.0
        for k, z in enumerate(patterns):
            for arm in (0, 1):
                if needed[k, arm] and props[k, arm] == 0.0:
                    raise PositivityViolation(z, arm)
        if needed.any():
            min_prop = min(min_prop, float(props[needed].min()))
        unit_p = props[inverse, a]
        unit_g = g[inverse, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(unit_g > 0.0, unit_g / unit_p, 0.0)
        if w.size:
            max_weight = max(max_weight, float(w.max()))
        if hajek:
            denom = math.fsum(w)
            term = math.fsum(w * y) / denom if denom > 0 else 0.0
        else:
            term = math.fsum(w * y) / data.n
        total += coef * term
    return Estimate(total, label, data.n, {
        "method": "ipw (hajek)" if hajek else "ipw (horvitz-thompson)",
        "propensity_model": type(est).__name__,
        "min_propensity": min_prop,
        "max_weight": max_weight,
        "truncation": truncation,
        "restriction": _provenance(data),
    })


def att_estimate(table: StratumTable) -> Estimate:
    """``E[Y | A=1] - sum_z Pr(z | A=1) * mean(Y | A=0, z)``.

    Standard average effect in the treated; only cells holding treated units
    need untreated units.
    """
    n1 = table.n_treated
    if n1 == 0:
        raise NoTreatedUnits("the ATT needs at least one treated unit")
    treated_sum = math.fsum(c.outcome_sum_by_arm[1] for c in table.cells.values())
    parts = []
    min_prop = math.inf
    for z, cell in table.items():
        if cell.n_by_arm[1] == 0:
            continue
        mean0 = cell.mean(0)
        if mean0 is None:
            raise UndefinedCellMean(z, 0)
        min_prop = min(min_prop, cell.n_by_arm[0] / cell.n_total)
        parts.append(cell.n_by_arm[1] * mean0)
    value = treated_sum / n1 - math.fsum(parts) / n1
    return Estimate(value, "ATT", table.n, {
        "method": "g-computation (plug-in, treated standardization)",
        "min_propensity": min_prop,
        "n_treated": n1,
        "restriction": _provenance(table),
    })


def natural_course(data: Dataset) -> Estimate:
    """Mean outcome under the observed action distribution (the sample mean)."""
    if data.n == 0:
        raise EmptyData("natural course of an empty dataset")
    return Estimate(math.fsum(data.outcome) / data.n, "natural course", data.n,
                    {"restriction": _provenance(data)})


def _mean_bounds(table: StratumTable, arm: int, y_min: float, y_max: float):
    n = table.n
    lo, hi, missing = [], [], 0
    for cell in table.cells.values():
        mean = cell.mean(arm)
        if mean is None:
            missing += cell.n_total
            lo.append(cell.n_total * y_min)
            hi.append(cell.n_total * y_max)
        else:
            lo.append(cell.n_total * mean)
            hi.append(cell.n_total * mean)
    return math.fsum(lo) / n, math.fsum(hi) / n, missing / n


def manski_bounds(table: StratumTable, estimand: int | str,
                  outcome_range: tuple[float, float] | None = None) -> BoundsResult:
    """Worst-case bounds substituting ``y_min`` / ``y_max`` for undefined cell means.

    Cells whose required arm is observed keep their point-identified mean.
    For the ACE the two counterfactual-mean bounds are combined worst-case:
    ``[L1 - U0, U1 - L0]``. ``violating_mass`` is the share of units in
    substituted cells.
    """
    rng = outcome_range if outcome_range is not None else table.outcome_range
    if rng is None:
        raise InputError("bounds need a declared outcome range")
    y_min, y_max = float(rng[0]), float(rng[1])
    if len(table) == 0 or table.n == 0:
        raise EmptyTable("cannot bound over an empty table")
    if isinstance(estimand, str) and estimand.lower() == "ace":
        l1, u1, m1 = _mean_bounds(table, 1, y_min, y_max)
        l0, u0, m0 = _mean_bounds(table, 0, y_min, y_max)
        lower, upper, mass, label = l1 - u0, u1 - l0, m1 + m0, "ACE"
    elif estimand in (0, 1):
        lower, upper, mass = _mean_bounds(table, int(estimand), y_min, y_max)
        label = f"E[Y^{int(estimand)}]"
    else:
        raise InputError(f"bounds support the ACE or a counterfactual mean, not {estimand!r}")
    return BoundsResult(lower, upper, upper - lower, mass, label)


def bootstrap_ci(data: Dataset, recipe: Callable[[Dataset], Estimate | float], replicates: int,
                 seed: int = 0, level: float = 0.95,
                 failure_cap: float = DEFAULT_FAILURE_CAP) -> Interval:
    """Percentile interval from ``replicates`` nonparametric bootstrap resamples.

    Replicate ``r`` resamples ``n`` units with replacement from the stream
    ``(seed, r)``. Replicates where ``recipe`` raises a positivity error (an
    arm missing from the resample) are counted in ``failures``; more than
    ``failure_cap * replicates`` of them raises
    :class:`TooManyFailedReplicates`.
    """
    if replicates < 1:
        raise InputError("replicates must be at least 1")
    if not 0.0 < level < 1.0:
        raise InvalidLevel(f"coverage level must lie in (0, 1), got {level}")
    if data.n == 0:
        raise EmptyData("cannot bootstrap an empty dataset")
    values, failures = [], 0
    for r in range(replicates):
        idx = rng_mod.stream(seed, rng_mod.BOOTSTRAP, r).integers(0, data.n, size=data.n)
        try:
            out = recipe(data.take(idx))
        except _REPLICATE_FAILURES:
            failures += 1
            continue
        values.append(out.value if isinstance(out, Estimate) else float(out))
    if failures > failure_cap * replicates or not values:
        raise TooManyFailedReplicates(failures, replicates, failure_cap)
    alpha = 1.0 - level
    lo, hi = np.quantile(np.array(values), [alpha / 2, 1 - alpha / 2])
    return Interval(float(lo), float(hi), replicates, seed, level, failures)

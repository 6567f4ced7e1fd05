"""Positivity audits and causal effect estimation for categorical covariates."""

__version__ = "0.1.0"

from .dataset import (
    TABLE1_SCHEMA,
    CellCounts,
    Dataset,
    Schema,
    StratumTable,
    UnitRecord,
    build_strata,
    load_counts,
    load_csv,
    load_table,
    load_table1,
    restrict,
    write_counts,
)
from .estimators import (
    BoundsResult,
    Estimate,
    Interval,
    att_estimate,
    bootstrap_ci,
    gcomp_plugin,
    ipw_estimate,
    manski_bounds,
    natural_course,
)
from .plans import Plan, load_plan
from .positivity import (
    PositivityConfig,
    PositivityReport,
    StructuralSpec,
    audit_sample,
    audit_structural,
    check_plan_positivity,
    empirical_propensity,
    load_structural_spec,
)
from .propensity import (
    EmpiricalPropensity,
    ForestFit,
    LogisticFit,
    TreeFit,
    empirical,
    fit_forest,
    fit_logistic,
    fit_tree,
    main_effects,
    predict,
    saturated,
)
from .simulate import (
    PopulationSpec,
    SimResult,
    load_population_spec,
    run_study,
    sample_population,
    violation_probability_analytic,
)

__all__ = [
    "BoundsResult",
    "CellCounts",
    "Dataset",
    "EmpiricalPropensity",
    "Estimate",
    "ForestFit",
    "Interval",
    "LogisticFit",
    "Plan",
    "PopulationSpec",
    "PositivityConfig",
    "PositivityReport",
    "Schema",
    "SimResult",
    "StratumTable",
    "StructuralSpec",
    "TABLE1_SCHEMA",
    "TreeFit",
    "UnitRecord",
    "att_estimate",
    "audit_sample",
    "audit_structural",
    "bootstrap_ci",
    "build_strata",
    "check_plan_positivity",
    "empirical",
    "empirical_propensity",
    "fit_forest",
    "fit_logistic",
    "fit_tree",
    "gcomp_plugin",
    "ipw_estimate",
    "load_counts",
    "load_csv",
    "load_plan",
    "load_population_spec",
    "load_structural_spec",
    "load_table",
    "load_table1",
    "main_effects",
    "manski_bounds",
    "natural_course",
    "predict",
    "restrict",
    "run_study",
    "sample_population",
    "saturated",
    "violation_probability_analytic",
    "write_counts",
]

"""Command-line interface: ``posaudit audit | estimate | simulate``.

Exit codes: 0 success, 1 input or validation error, 2 estimation blocked by a
positivity violation (the report names the cell and arm), 64 usage error.
Reports are a single JSON document (``simulate`` writes CSV by default).
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import BUNDLED, TABLE1_SCHEMA, Dataset, Schema, build_strata, format_pattern, load_table, restrict
from .errors import PosauditError, PositivityError, SeparationWarning
from .estimators import (
    DEFAULT_FAILURE_CAP,
    DEFAULT_TRUNCATION,
    att_estimate,
    bootstrap_ci,
    gcomp_plugin,
    ipw_estimate,
    manski_bounds,
    natural_course,
)
from .expr import parse_predicate
from .plans import load_plan
from .positivity import PositivityConfig, audit_sample, audit_structural, check_plan_positivity, load_structural_spec
from .propensity import empirical, fit_forest, fit_logistic, fit_tree, saturated
from .report import SCHEMA_VERSION, dumps
from .simulate import load_population_spec, run_study

EXIT_OK, EXIT_INPUT, EXIT_BLOCKED, EXIT_USAGE = 0, 1, 2, 64

RESTRICT_HELP = (
    "keep only units matching EXPR, e.g. '!(V=0&W=0)'. Grammar: NAME=INT, NAME!=INT, "
    "'&' (and), '|' (or), '!' (not), parentheses"
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class Command:
    name: str
    options: dict

    def echo(self) -> dict:
        # thread count never changes results, so it stays out of the report
        return {"command": self.name, **{k: v for k, v in sorted(self.options.items()) if k != "threads"}}


@dataclass
class RunReport:
    command: dict
    sections: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    exit_code: int = EXIT_OK
    csv: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool": f"posaudit {__version__}",
            "command": self.command,
            **self.sections,
            "warnings": self.warnings,
            "errors": self.errors,
            "exit_code": self.exit_code,
        }


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return value


def _truncation(text: str) -> float:
    value = _probability(text)
    if value > 0.5:
        raise argparse.ArgumentTypeError(f"must lie in (0, 0.5]: {text!r}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected non-negative integers: {text!r}")
    return values


def _range(text: str) -> list[float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI: {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"need LO < HI: {text!r}")
    return [lo, hi]


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True,
                   help="row CSV or counts CSV (has a 'count' column); bundled: " + ", ".join(BUNDLED))
    p.add_argument("--covariates", help="comma-separated covariate columns (default V,W for bundled data)")
    p.add_argument("--action", default="A", help="action column (default: A)")
    p.add_argument("--outcome", default="Y", help="outcome column (default: Y)")
    p.add_argument("--outcome-range", type=_range, metavar="LO,HI",
                   help="declared outcome range; defaults to 0,1 for binary outcomes")
    p.add_argument("--restrict", metavar="EXPR", help=RESTRICT_HELP)
    p.add_argument("--epsilon", type=_probability, default=0.01,
                   help="near-violation threshold in (0,1) (default: 0.01)")
    p.add_argument("--out", help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posaudit", description="Positivity audits and causal effect estimates "
                     "for categorical covariate data.")
    parser.add_argument("--version", action="version", version=f"posaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    audit = sub.add_parser("audit", help="sample, structural and plan positivity audits")
    _add_data_options(audit)
    audit.add_argument("--spec", help="structural spec: bundled table1-s1/table1-s2, a population "
                       "JSON, or a CSV with p_treat (number or zero:0 / zero:1)")
    audit.add_argument("--plan", help="plan CSV (covariates + action or probability); needs --spec")

    est = sub.add_parser("estimate", help="estimate a causal quantity")
    _add_data_options(est)
    est.add_argument("--estimand", default="ace",
                     choices=["ace", "mean1", "mean0", "plan", "att", "natural-course"],
                     help="what to estimate (default: ace)")
    est.add_argument("--method", default="ipw", choices=["ipw", "gcomp"],
                     help="ipw (Horvitz-Thompson) or plug-in g-computation (default: ipw)")
    est.add_argument("--ps", default="empirical",
                     choices=["empirical", "logistic", "saturated", "tree", "forest"],
                     help="propensity model for ipw (default: empirical)")
    est.add_argument("--terms", help="logistic design terms, e.g. 'V,W,V:W' (default: main effects)")
    est.add_argument("--min-leaf", type=_positive_int, default=5, help="tree/forest minimum leaf size (default: 5)")
    est.add_argument("--n-trees", type=_positive_int, default=100, help="forest size (default: 100)")
    est.add_argument("--no-tree-bootstrap", action="store_true", help="grow every forest tree on the full data")
    est.add_argument("--truncate", type=_truncation, nargs="?", const=DEFAULT_TRUNCATION, metavar="B",
                     help=f"clamp propensities to [B, 1-B] (flag alone: B={DEFAULT_TRUNCATION})")
    est.add_argument("--hajek", action="store_true",
                     help="normalized-weight IPW instead of the default Horvitz-Thompson form")
    est.add_argument("--plan", help="plan CSV for --estimand plan")
    est.add_argument("--bounds", action="store_true", help="add worst-case bounds (ace, mean0, mean1)")
    est.add_argument("--bootstrap", type=_nonneg_int, default=0, metavar="N",
                     help="percentile bootstrap replicates (default: 0, off)")
    est.add_argument("--level", type=_probability, default=0.95, help="bootstrap coverage (default: 0.95)")
    est.add_argument("--failure-cap", type=_probability, default=DEFAULT_FAILURE_CAP,
                     help=f"max failed bootstrap fraction (default: {DEFAULT_FAILURE_CAP})")
    est.add_argument("--seed", type=int, default=0, help="seed for forest and bootstrap (default: 0)")

    sim = sub.add_parser("simulate", help="stochastic-violation study on a population spec")
    sim.add_argument("--spec", default="table1-s2", help="table1-s1, table1-s2 or a population JSON")
    sim.add_argument("--n-grid", type=_int_list, default=[50, 246, 2000, 20000], metavar="N1,N2,...",
                     help="sample sizes (default: 50,246,2000,20000)")
    sim.add_argument("--replicates", type=_positive_int, default=2000, help="replicates per n (default: 2000)")
    sim.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    sim.add_argument("--threads", type=_positive_int, default=1, help="worker threads; results unchanged")
    sim.add_argument("--format", default="csv", choices=["csv", "json"], help="output format (default: csv)")
    sim.add_argument("--out", help="write output here instead of stdout")
    return parser


def parse_command(argv: Sequence[str]) -> Command:
    argv = list(argv)
    for tok in argv:
        if not tok.startswith("-"):
            break
        if tok not in ("-h", "--help", "--version"):
            raise UsageError(f"unrecognized argument: {tok}")
    ns = build_parser().parse_args(argv)
    options = {k: v for k, v in vars(ns).items() if k != "command"}
    if ns.command == "estimate" and ns.estimand == "plan" and not ns.plan:
        raise UsageError("--estimand plan requires --plan")
    if ns.command == "audit" and ns.plan and not ns.spec:
        raise UsageError("--plan requires --spec")
    return Command(ns.command, options)


# -- execution ----------------------------------------------------------------


def _schema(opts: dict) -> Schema:
    if opts.get("covariates"):
        covs = tuple(c.strip() for c in opts["covariates"].split(",") if c.strip())
    elif Path(opts["data"]).name in BUNDLED:
        covs = TABLE1_SCHEMA.covariates
    else:
        raise UsageError("--covariates is required for non-bundled data")
    return Schema(covs, opts["action"], opts["outcome"])


def _load(opts: dict, report: RunReport) -> Dataset:
    schema = _schema(opts)
    rng = tuple(opts["outcome_range"]) if opts.get("outcome_range") else None
    data = load_table(opts["data"], schema, rng)
    if opts.get("restrict"):
        data = restrict(data, parse_predicate(opts["restrict"], schema.covariates))
    report.sections["dataset"] = data.summary()
    return data


def _structural_spec(ref: str, covariates):
    if ref.endswith(".csv"):
        return load_structural_spec(ref, covariates)
    return load_population_spec(ref).to_structural()


def _near_warnings(audit, names) -> list[str]:
    return [
        f"near violation: Pr(A={arm} | {format_pattern(names, z)}) below epsilon {audit.epsilon:g}"
        for z, arm in audit.near_violations
    ]


def _run_audit(cmd: Command, report: RunReport) -> None:
    opts = cmd.options
    data = _load(opts, report)
    table = build_strata(data)
    config = PositivityConfig(opts["epsilon"])
    section = {}
    if data.n:
        sample = audit_sample(table, config)
        section["sample"] = sample
        report.warnings.extend(_near_warnings(sample, data.covariate_names))
    else:
        report.warnings.append("dataset is empty after restriction; sample audit skipped")
    if opts.get("spec"):
        spec = _structural_spec(opts["spec"], data.covariate_names)
        section["structural"] = audit_structural(spec, config, table if data.n else None)
        if opts.get("plan"):
            plan = load_plan(opts["plan"], data.covariate_names)
            section["plan"] = check_plan_positivity(spec, plan, config)
    report.sections["positivity"] = section


def _propensity(opts: dict, data: Dataset):
    kind = opts["ps"]
    if kind == "empirical":
        return empirical(data)
    if kind == "logistic":
        terms = [t.strip() for t in opts["terms"].split(",")] if opts.get("terms") else None
        return fit_logistic(data, terms)
    if kind == "saturated":
        return fit_logistic(data, saturated(data.covariate_names))
    if kind == "tree":
        return fit_tree(data, opts["min_leaf"])
    return fit_forest(data, opts["n_trees"], opts["min_leaf"], not opts["no_tree_bootstrap"], opts["seed"])


def _model_summary(model, data: Dataset) -> dict:
    out = model.to_dict()
    if out.get("model") == "forest":
        out.pop("trees")
    out["predictions"] = [
        {"z": list(z), "label": format_pattern(data.covariate_names, z), "p_treat": model.predict(z)}
        for z in build_strata(data)
    ]
    return out


def _point_estimate(opts: dict, data: Dataset, plan, model=None):
    estimand = opts["estimand"]
    if estimand == "natural-course":
        return natural_course(data)
    if estimand == "att":
        return att_estimate(build_strata(data))
    target = {"ace": "ace", "mean1": 1, "mean0": 0, "plan": plan}[estimand]
    if opts["method"] == "gcomp":
        return gcomp_plugin(build_strata(data), target)
    if model is None:
        model = _propensity(opts, data)
    return ipw_estimate(data, model, target, truncation=opts.get("truncate"), hajek=opts["hajek"])


def _run_estimate(cmd: Command, report: RunReport) -> None:
    opts = cmd.options
    data = _load(opts, report)
    table = build_strata(data)
    if data.n:
        audit = audit_sample(table, PositivityConfig(opts["epsilon"]))
        report.sections["positivity"] = {"sample": audit}
        report.warnings.extend(_near_warnings(audit, data.covariate_names))
    plan = load_plan(opts["plan"], data.covariate_names) if opts.get("plan") else None

    if opts["bounds"]:
        target = {"ace": "ace", "mean1": 1, "mean0": 0}.get(opts["estimand"])
        if target is None:
            report.warnings.append(f"bounds are not available for estimand {opts['estimand']!r}")
        else:
            report.sections["bounds"] = manski_bounds(table, target, data.outcome_range)

    model = None
    uses_model = opts["method"] == "ipw" and opts["estimand"] in ("ace", "mean1", "mean0", "plan")
    if uses_model:
        model = _propensity(opts, data)
        report.sections["propensity_model"] = _model_summary(model, data)
    estimate = _point_estimate(opts, data, plan, model)
    report.sections["estimate"] = estimate
    if opts.get("truncate") is not None and uses_model:
        report.warnings.append(f"propensities truncated to [{opts['truncate']:g}, {1 - opts['truncate']:g}]")

    if opts["bootstrap"]:
        interval = bootstrap_ci(
            data, lambda d: _point_estimate(opts, d, plan), opts["bootstrap"], opts["seed"],
            opts["level"], opts["failure_cap"],
        )
        report.sections["interval"] = interval
        if interval.failures:
            report.warnings.append(f"{interval.failures} bootstrap replicates failed and were excluded")


def _run_simulate(cmd: Command, report: RunReport) -> None:
    opts = cmd.options
    spec = load_population_spec(opts["spec"])
    result = run_study(spec, opts["n_grid"], opts["replicates"], opts["seed"], opts["threads"])
    report.csv = result.to_csv()
    report.sections["simulation"] = {
        "population": spec.label,
        "rows": [
            {"n": r.n, "cell": None if r.cell is None else list(r.cell), "analytic": r.analytic,
             "mc_frequency": r.mc_frequency, "replicates": r.replicates, "seed": r.seed}
            for r in result.rows
        ],
    }


def _error_entry(exc: Exception, names=None) -> dict:
    entry = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, PositivityError):
        entry["blocking"] = True
        entry["cell"] = list(exc.cell)
        entry["arm"] = exc.arm
        if names:
            entry["cell_label"] = format_pattern(names, exc.cell)
    return entry


def execute(cmd: Command) -> RunReport:
    report = RunReport(cmd.echo())
    runner = {"audit": _run_audit, "estimate": _run_estimate, "simulate": _run_simulate}[cmd.name]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SeparationWarning)
        try:
            runner(cmd, report)
        except PositivityError as exc:
            names = report.sections.get("dataset", {}).get("covariates")
            report.errors.append(_error_entry(exc, names))
            report.exit_code = EXIT_BLOCKED
        except UsageError as exc:
            report.errors.append(_error_entry(exc))
            report.exit_code = EXIT_USAGE
        except (PosauditError, OSError) as exc:
            report.errors.append(_error_entry(exc))
            report.exit_code = EXIT_INPUT
    report.warnings.extend(str(w.message) for w in caught if issubclass(w.category, SeparationWarning))
    return report


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_command(argv)
    except UsageError as exc:
        sys.stderr.write(f"posaudit: usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    report = execute(cmd)
    out = cmd.options.get("out")
    if cmd.name == "simulate" and cmd.options["format"] == "csv" and report.exit_code == EXIT_OK:
        _emit(report.csv, out)
    else:
        _emit(dumps(report), out)
    for err in report.errors:
        sys.stderr.write(f"posaudit: {err['type']}: {err['message']}\n")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())

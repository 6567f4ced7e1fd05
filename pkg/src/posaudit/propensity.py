"""Propensity score estimators.

All estimators expose ``predict(z) -> Pr(A=1 | z)``:

* :class:`EmpiricalPropensity` returns the stratum ratio ``n_z1 / n_z`` and
  refuses unseen patterns.
* :class:`LogisticFit` is a logistic regression on products of covariate
  codes, fit by Newton-Raphson (IRLS) with step halving.
* :class:`TreeFit` is a greedy Gini tree with a minimum leaf size.
* :class:`ForestFit` averages trees grown on seeded bootstrap resamples.

The models extrapolate to patterns absent from the training data, which the
empirical estimator cannot do.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from . import rng as rng_mod
from .dataset import Dataset, Pattern, StratumTable, build_strata
from .errors import (
    EmptyData,
    InputError,
    NoActionVariation,
    RankDeficientDesign,
    SeparationWarning,
    UnknownStratum,
)
from .positivity import empirical_propensity

IRLS_TOL = 1e-10
IRLS_MAX_ITER = 100
SEPARATION_TOL = 1e-6


def _check_levels(z, levels: Sequence[int]) -> Pattern:
    z = tuple(int(v) for v in z)
    if len(z) != len(levels) or any(not 0 <= v < L for v, L in zip(z, levels)):
        raise InputError(f"pattern {z} outside the declared covariate levels {tuple(levels)}")
    return z


@dataclass(frozen=True)
class EmpiricalPropensity:
    table: StratumTable

    def predict(self, z) -> float:
        z = tuple(z)
        if z not in self.table:
            raise UnknownStratum(z)
        return empirical_propensity(self.table, z, 1)

    def to_dict(self) -> dict:
        return {
            "model": "empirical",
            "cells": [
                {"z": list(z), "n": c.n_total, "n_treated": c.n_by_arm[1], "p_treat": self.predict(z)}
                for z, c in self.table.items()
            ],
        }


def empirical(data: Dataset) -> EmpiricalPropensity:
    return EmpiricalPropensity(build_strata(data))


# -- logistic regression -------------------------------------------------------


def main_effects(names: Sequence[str]) -> tuple[str, ...]:
    return tuple(names)


def saturated(names: Sequence[str]) -> tuple[str, ...]:
    """Every main effect and interaction product; saturated for binary covariates."""
    return tuple(
        ":".join(combo)
        for r in range(1, len(names) + 1)
        for combo in itertools.combinations(names, r)
    )


def _parse_term(term: str, names: Sequence[str]) -> tuple[tuple[int, int | None], ...]:
    """``"V:W"`` -> code product; ``"V=2"`` -> indicator of level 2."""
    factors = []
    for part in term.split(":"):
        name, _, level = part.partition("=")
        name = name.strip()
        if name not in names:
            raise InputError(f"design term {term!r} names unknown covariate {name!r}")
        factors.append((list(names).index(name), int(level) if level else None))
    return tuple(factors)


def _design(cov: np.ndarray, parsed) -> np.ndarray:
    cols = [np.ones(len(cov))]
    for factors in parsed:
        col = np.ones(len(cov))
        for j, level in factors:
            col = col * (cov[:, j] == level if level is not None else cov[:, j])
        cols.append(col)
    return np.column_stack(cols).astype(np.float64)


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(eta, dtype=np.float64)))


def _loglik(X, a, beta) -> float:
    eta = X @ beta
    return float(np.sum(a * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True, eq=False)
class LogisticFit:
    coefficients: np.ndarray
    terms: tuple[str, ...]
    covariate_names: tuple[str, ...]
    covariate_levels: tuple[int, ...]
    converged: bool
    separation_detected: bool
    iterations: int
    final_gradient_norm: float
    log_likelihood: float
    tolerance: float = IRLS_TOL

    def design_row(self, z) -> np.ndarray:
        z = _check_levels(z, self.covariate_levels)
        parsed = [_parse_term(t, self.covariate_names) for t in self.terms]
        return _design(np.array([z], dtype=np.int64), parsed)[0]

    def predict(self, z) -> float:
        return float(_expit(self.design_row(z) @ self.coefficients))

    def to_dict(self) -> dict:
        return {
            "model": "logistic",
            "terms": ["(intercept)", *self.terms],
            "coefficients": self.coefficients.tolist(),
            "converged": self.converged,
            "separation_detected": self.separation_detected,
            "iterations": self.iterations,
            "final_gradient_norm": self.final_gradient_norm,
            "log_likelihood": self.log_likelihood,
        }


def fit_logistic(data: Dataset, terms: Sequence[str] | None = None,
                 tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER) -> LogisticFit:
    """Maximum-likelihood logistic regression of the action on ``terms``.

    Parameters
    ----------
    data : Dataset
    terms : sequence of str, optional
        Design terms besides the intercept. ``"V"`` enters the covariate code,
        ``"V:W"`` the product of codes, ``"V=2"`` an indicator. Defaults to the
        main effects of every covariate.
    tol : float
        Stop once the score vector's Euclidean norm is at most ``tol``.
    max_iter : int
        Newton iteration cap.

    Returns
    -------
    LogisticFit
        ``separation_detected`` is set (and a :class:`SeparationWarning`
        issued) when some fitted probability ends within 1e-6 of 0 or 1. The
        fit is still returned: finite coefficients never give a probability of
        exactly 0 or 1, but they can get arbitrarily close.
    """
    terms = tuple(main_effects(data.covariate_names) if terms is None else terms)
    parsed = [_parse_term(t, data.covariate_names) for t in terms]
    a = data.action.astype(np.float64)
    if data.n == 0 or a.min() == a.max():
        raise NoActionVariation("both actions must occur in the data to fit a propensity model")
    X = _design(data.covariates, parsed)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign(f"design {['(intercept)', *terms]} is not of full column rank on these data")

    beta = np.zeros(X.shape[1])
    ll = _loglik(X, a, beta)
    grad = X.T @ (a - _expit(X @ beta))
    iterations = 0
    while np.linalg.norm(grad) > tol and iterations < max_iter:
        pi = _expit(X @ beta)
        hess = X.T @ (X * (pi * (1.0 - pi))[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            candidate = beta + t * step
            ll_new = _loglik(X, a, candidate)
            if ll_new >= ll or t < 2.0 ** -30:
                break
            t *= 0.5
        beta, ll = candidate, ll_new
        grad = X.T @ (a - _expit(X @ beta))
        iterations += 1

    gnorm = float(np.linalg.norm(grad))
    fitted = _expit(X @ beta)
    separated = bool(np.any((fitted < SEPARATION_TOL) | (fitted > 1.0 - SEPARATION_TOL)))
    if separated:
        warnings.warn(
            "quasi-complete separation: some fitted propensities are within "
            f"{SEPARATION_TOL:g} of 0 or 1; the maximum-likelihood estimate does not exist",
            SeparationWarning,
            stacklevel=2,
        )
    return LogisticFit(
        beta, terms, data.covariate_names, data.covariate_levels,
        converged=gnorm <= tol, separation_detected=separated, iterations=iterations,
        final_gradient_norm=gnorm, log_likelihood=ll, tolerance=tol,
    )


# -- trees ---------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    n: int
    treated: int

    @property
    def probability(self) -> Fraction:
        return Fraction(self.treated, self.n)

    def to_dict(self) -> dict:
        return {"leaf": True, "n": self.n, "treated": self.treated, "p_treat": float(self.probability)}


@dataclass(frozen=True)
class Split:
    """Units whose covariate ``covariate`` is in ``levels`` go left, all others right."""

    covariate: int
    levels: frozenset
    left: Union["Split", Leaf]
    right: Union["Split", Leaf]
    n: int
    treated: int

    def to_dict(self) -> dict:
        return {
            "leaf": False, "n": self.n, "treated": self.treated,
            "covariate": self.covariate, "left_levels": sorted(self.levels),
            "left": self.left.to_dict(), "right": self.right.to_dict(),
        }


def _gini_mass(n: int, t: int) -> Fraction:
    # n * Gini impurity of a node with t treated out of n
    return Fraction(2 * t * (n - t), n) if n else Fraction(0)


def _grow(cells: list[tuple[Pattern, int, int]], min_leaf: int, k: int) -> Split | Leaf:
    n = sum(c[1] for c in cells)
    t = sum(c[2] for c in cells)
    parent = _gini_mass(n, t)
    best = None
    for j in range(k):
        levels = sorted({z[j] for z, _, _ in cells})
        if len(levels) < 2:
            continue
        for level in levels:
            if len(levels) == 2 and level == levels[1]:
                break  # same partition as levels[0] vs rest
            n_l = sum(c[1] for c in cells if c[0][j] == level)
            t_l = sum(c[2] for c in cells if c[0][j] == level)
            if n_l < min_leaf or n - n_l < min_leaf:
                continue
            gain = parent - _gini_mass(n_l, t_l) - _gini_mass(n - n_l, t - t_l)
            if best is None or gain > best[0]:
                best = (gain, j, level)
    if best is None or best[0] <= 0:
        return Leaf(n, t)
    _, j, level = best
    left = [c for c in cells if c[0][j] == level]
    right = [c for c in cells if c[0][j] != level]
    return Split(j, frozenset({level}), _grow(left, min_leaf, k), _grow(right, min_leaf, k), n, t)


@dataclass(frozen=True)
class TreeFit:
    root: Split | Leaf
    min_leaf: int
    covariate_names: tuple[str, ...]
    covariate_levels: tuple[int, ...]

    def leaf_for(self, z) -> Leaf:
        z = _check_levels(z, self.covariate_levels)
        node = self.root
        while isinstance(node, Split):
            node = node.left if z[node.covariate] in node.levels else node.right
        return node

    def predict_exact(self, z) -> Fraction:
        return self.leaf_for(z).probability

    def predict(self, z) -> float:
        return float(self.predict_exact(z))

    def leaves(self) -> list[Leaf]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    def to_dict(self) -> dict:
        return {"model": "tree", "min_leaf": self.min_leaf, "root": self.root.to_dict()}


def fit_tree(data: Dataset, min_leaf: int = 1) -> TreeFit:
    """Greedy binary tree for Pr(A=1 | z) under a minimum leaf size.

    Each split sends one level of one covariate left and the remaining levels
    right. A split is admissible only when both children hold at least
    ``min_leaf`` units; among admissible splits the largest decrease in Gini
    impurity wins, ties going to the lowest covariate index and then the
    lowest level code. Growth stops when no admissible split decreases the
    impurity. Leaf probabilities are exact treated/n ratios.
    """
    if min_leaf < 1:
        raise InputError("min_leaf must be at least 1")
    if data.n == 0:
        raise EmptyData("cannot fit a tree to an empty dataset")
    table = build_strata(data)
    cells = [(z, c.n_total, c.n_by_arm[1]) for z, c in table.items()]
    root = _grow(cells, min_leaf, len(data.covariate_names))
    return TreeFit(root, min_leaf, data.covariate_names, data.covariate_levels)


@dataclass(frozen=True)
class ForestFit:
    trees: tuple[TreeFit, ...]
    n_trees: int
    bootstrap: bool
    seed: int
    min_leaf: int

    def predict_exact(self, z) -> Fraction:
        return sum((t.predict_exact(z) for t in self.trees), Fraction(0)) / len(self.trees)

    def predict(self, z) -> float:
        # exact rational mean, rounded once
        return float(self.predict_exact(z))

    def to_dict(self) -> dict:
        return {
            "model": "forest", "n_trees": self.n_trees, "bootstrap": self.bootstrap,
            "seed": self.seed, "min_leaf": self.min_leaf,
            "trees": [t.to_dict()["root"] for t in self.trees],
        }


def fit_forest(data: Dataset, n_trees: int = 100, min_leaf: int = 5, bootstrap: bool = True,
               seed: int = 0, threads: int = 1) -> ForestFit:
    """Bagged trees.

    Tree ``i`` is grown on ``n`` draws with replacement from the stream
    ``(seed, i)`` (see :mod:`posaudit.rng`), or on the full data when
    ``bootstrap`` is off. Splits consider every covariate; there is no
    per-split feature subsampling, so the bootstrap is the only randomness.
    """
    if n_trees < 1:
        raise InputError("n_trees must be at least 1")
    if data.n == 0:
        raise EmptyData("cannot fit a forest to an empty dataset")

    def grow(i: int) -> TreeFit:
        sample = data
        if bootstrap:
            idx = rng_mod.stream(seed, rng_mod.FOREST, i).integers(0, data.n, size=data.n)
            sample = data.take(idx)
        return fit_tree(sample, min_leaf)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = tuple(pool.map(grow, range(n_trees)))
    else:
        trees = tuple(grow(i) for i in range(n_trees))
    return ForestFit(trees, n_trees, bootstrap, seed, min_leaf)


PropensityEstimator = Union[EmpiricalPropensity, LogisticFit, TreeFit, ForestFit]


def predict(est: PropensityEstimator, z) -> float:
    """Pr(A=1 | z) under ``est``; Pr(A=0 | z) is the complement."""
    return est.predict(z)

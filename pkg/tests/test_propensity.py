import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from oracles import TABLE1, n_arm, n_cell
from posaudit import Dataset, empirical, fit_forest, fit_logistic, fit_tree, predict, saturated
from posaudit.errors import InputError, NoActionVariation, RankDeficientDesign, SeparationWarning, UnknownStratum
from posaudit.propensity import Leaf, LogisticFit


def _score_residuals(fit, data):
    X = np.array([fit.design_row(z) for z in data.patterns()])
    pi = np.array([fit.predict(z) for z in data.patterns()])
    return X.T @ (data.action - pi)


def _reference_logistic(data):
    # BFGS on the negative log-likelihood; shares nothing with the IRLS path
    X = np.column_stack([np.ones(data.n), data.covariates])
    a = data.action

    def nll(b):
        eta = X @ b
        return np.sum(np.logaddexp(0, eta) - a * eta)

    def grad(b):
        return X.T @ (expit(X @ b) - a)

    res = minimize(nll, np.zeros(X.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-9})
    return res.x


def test_main_effects_fit(table1):
    fit = fit_logistic(table1)
    assert fit.converged
    assert fit.final_gradient_norm <= 1e-10
    assert not fit.separation_detected
    assert np.max(np.abs(_score_residuals(fit, table1))) < 1e-8
    np.testing.assert_allclose(fit.coefficients, _reference_logistic(table1), atol=1e-6)
    for z in TABLE1:
        assert 0.0 < fit.predict(z) < 1.0


def test_fitted_treated_totals_match(table1):
    fit = fit_logistic(table1)
    fitted = sum(n_cell(z) * fit.predict(z) for z in TABLE1)
    assert fitted == pytest.approx(145, abs=1e-8)
    # V and W score equations: fitted treated among V=1 and W=1
    assert sum(n_cell(z) * fit.predict(z) for z in TABLE1 if z[0] == 1) == pytest.approx(55, abs=1e-8)
    assert sum(n_cell(z) * fit.predict(z) for z in TABLE1 if z[1] == 1) == pytest.approx(92, abs=1e-8)


def test_saturated_fit_separates(table1):
    with pytest.warns(SeparationWarning):
        fit = fit_logistic(table1, saturated(table1.covariate_names))
    assert fit.terms == ("V", "W", "V:W")
    assert fit.separation_detected
    assert 1.0 - fit.predict((0, 0)) < 1e-3
    assert 0.0 < fit.predict((0, 0)) < 1.0
    # the other cells are fitted exactly
    for z in [(1, 1), (1, 0), (0, 1)]:
        assert fit.predict(z) == pytest.approx(n_arm(z, 1) / n_cell(z), abs=1e-9)


def test_no_action_variation():
    d = Dataset([[0], [1]], [1, 1], [0, 1], ("V",))
    with pytest.raises(NoActionVariation):
        fit_logistic(d)


def test_rank_deficient(table1):
    with pytest.raises(RankDeficientDesign):
        fit_logistic(table1, ["V", "V"])


def test_predict_structural_identities(table1):
    zero = LogisticFit(np.zeros(3), ("V", "W"), ("V", "W"), (2, 2), True, False, 0, 0.0, 0.0)
    assert all(predict(zero, z) == 0.5 for z in TABLE1)
    fit = fit_logistic(table1)
    assert fit.predict((0, 0)) == pytest.approx(expit(fit.coefficients[0]), abs=1e-15)
    with pytest.raises(InputError):
        fit.predict((2, 0))


def test_indicator_terms():
    d = Dataset([[0], [1], [2], [2], [1], [0]], [0, 1, 1, 0, 0, 1], [0] * 6, ("X",))
    fit = fit_logistic(d, ["X=1", "X=2"])
    assert fit.converged
    for z in [(0,), (1,), (2,)]:
        assert fit.predict(z) == pytest.approx(0.5, abs=1e-9)


def test_empirical_predict(table1):
    est = empirical(table1)
    assert predict(est, (1, 0)) == 38 / 64 == 0.59375
    assert predict(est, (0, 0)) == 1.0


def test_empirical_unknown():
    est = empirical(Dataset([[0]], [1], [1], ("V",), (2,)))
    with pytest.raises(UnknownStratum):
        est.predict((1,))


def _gini_mass(n, t):
    return 2.0 * t * (n - t) / n


def test_root_split_matches_hand_trace(table1):
    # gain of splitting the root on V vs on W, from the table counts
    parent = _gini_mass(246, 145)
    gains = {}
    for j in (0, 1):
        side = [z for z in TABLE1 if z[j] == 0]
        n0, t0 = sum(n_cell(z) for z in side), sum(n_arm(z, 1) for z in side)
        gains[j] = parent - _gini_mass(n0, t0) - _gini_mass(246 - n0, 145 - t0)
    assert gains[0] == pytest.approx(16.1178, abs=1e-3)
    assert gains[1] == pytest.approx(1.5442, abs=1e-3)
    tree = fit_tree(table1, 16)
    assert tree.root.covariate == 0


def test_tree_min_leaf_5(table1):
    tree = fit_tree(table1, 5)
    assert tree.predict((0, 0)) == 1.0
    leaves = tree.leaves()
    assert len(leaves) == 4
    for z in TABLE1:
        assert tree.predict_exact(z) == Fraction(n_arm(z, 1), n_cell(z))


def test_tree_single_leaf(table1):
    tree = fit_tree(table1, 246)
    assert isinstance(tree.root, Leaf)
    assert all(tree.predict(z) == 145 / 246 for z in TABLE1)


def test_tree_min_leaf_16(table1):
    tree = fit_tree(table1, 16)
    # V=0 cannot be split further: its W=0 child would hold 15 units
    assert tree.predict_exact((0, 0)) == Fraction(90, 115)
    assert tree.predict_exact((0, 1)) == Fraction(90, 115)
    assert tree.predict_exact((1, 0)) == Fraction(38, 64)
    assert tree.predict_exact((1, 1)) == Fraction(17, 67)


@pytest.mark.parametrize("min_leaf", range(1, 247))
def test_tree_boundary_and_leaf_invariants(table1, min_leaf):
    tree = fit_tree(table1, min_leaf)
    leaf = tree.leaf_for((0, 0))
    # pure only when the 15-unit cell is its own leaf
    assert (tree.predict((0, 0)) == 1.0) == (min_leaf <= 15)
    assert (leaf.n == 15) == (min_leaf <= 15)
    leaves = tree.leaves()
    assert sum(l.n for l in leaves) == 246
    if len(leaves) > 1:
        assert all(l.n >= min_leaf for l in leaves)


def test_tree_errors(table1):
    with pytest.raises(InputError):
        fit_tree(table1, 0)
    with pytest.raises(InputError):
        fit_tree(Dataset(np.zeros((0, 1)), [], [], ("V",)), 1)


def test_tree_tie_break_lowest_covariate():
    # two identical covariates: equal gains, the first must win
    d = Dataset([[0, 0], [0, 0], [1, 1], [1, 1]], [0, 0, 1, 1], [0] * 4, ("X", "Z"))
    tree = fit_tree(d, 1)
    assert tree.root.covariate == 0
    assert tree.root.levels == frozenset({0})


def test_tree_multilevel_one_vs_rest():
    d = Dataset([[0], [1], [2], [2]], [0, 0, 1, 1], [0] * 4, ("X",))
    tree = fit_tree(d, 1)
    assert tree.predict((2,)) == 1.0
    assert tree.predict((0,)) == 0.0


def test_forest_single_tree_equals_tree(table1):
    forest = fit_forest(table1, n_trees=1, min_leaf=5, bootstrap=False)
    tree = fit_tree(table1, 5)
    for z in TABLE1:
        assert forest.predict(z) == tree.predict(z)
    assert forest.predict((0, 0)) == 1.0


@pytest.mark.parametrize("k", [2, 3, 7, 10])
def test_forest_without_bootstrap_equals_tree(table1, k):
    forest = fit_forest(table1, n_trees=k, min_leaf=16, bootstrap=False)
    tree = fit_tree(table1, 16)
    for z in TABLE1:
        assert forest.predict(z) == tree.predict(z)


def test_forest_determinism_and_mean_bound(table1):
    f1 = fit_forest(table1, n_trees=25, min_leaf=10, seed=42)
    f2 = fit_forest(table1, n_trees=25, min_leaf=10, seed=42)
    f3 = fit_forest(table1, n_trees=25, min_leaf=10, seed=42, threads=4)
    other = fit_forest(table1, n_trees=25, min_leaf=10, seed=43)
    for z in TABLE1:
        assert f1.predict(z) == f2.predict(z) == f3.predict(z)
        per_tree = [t.predict(z) for t in f1.trees]
        assert min(per_tree) <= f1.predict(z) <= max(per_tree)
    assert any(f1.predict(z) != other.predict(z) for z in TABLE1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 1)), min_size=8, max_size=80))
def test_logistic_score_equations_property(rows):
    acts = [r[2] for r in rows]
    d = Dataset([[r[0], r[1]] for r in rows], acts, [0] * len(rows), ("V", "W"), (2, 3))
    if len(set(acts)) < 2 or np.linalg.matrix_rank(np.column_stack([np.ones(d.n), d.covariates])) < 3:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationWarning)
        fit = fit_logistic(d)
    for z in [(v, w) for v in (0, 1) for w in (0, 1, 2)]:
        assert 0.0 <= fit.predict(z) <= 1.0
    if fit.converged and not fit.separation_detected:
        assert np.max(np.abs(_score_residuals(fit, d))) < 1e-8

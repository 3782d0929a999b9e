import warnings

import numpy as np
import pytest
from sklearn.base import clone

from ddsignal import DesignSpec, RobustOLS, WithinTransformer, fit_ols, linear_combination_se, within_transform
from ddsignal.exceptions import DegenerateWeights, DimensionMismatch, RankDeficientWarning
from ddsignal.ols import encode_groups, fe_degrees_of_freedom


def naive_fit(X, y, w=None, hc1=False):
    """Textbook weighted OLS and sandwich via explicit inverses."""
    n, k = X.shape
    w = np.ones(n) if w is None else w
    W = np.diag(w)
    XtWX_inv = np.linalg.inv(X.T @ W @ X)
    b = XtWX_inv @ X.T @ W @ y
    e = y - X @ b
    meat = sum(w[i] ** 2 * e[i] ** 2 * np.outer(X[i], X[i]) for i in range(n))
    V = XtWX_inv @ meat @ XtWX_inv
    return b, (V * n / (n - k) if hc1 else V), e


def dummy_fit(X, y, groups, w=None):
    """Explicit dummy-variable OLS: regressors plus one dummy per level (first level of later dims dropped)."""
    cols = []
    for j, g in enumerate(groups):
        levels = np.unique(g)
        D = (g[:, None] == levels[None, :]).astype(float)
        cols.append(D if j == 0 else D[:, 1:])
    Z = np.column_stack([X] + cols)
    w = np.ones(len(y)) if w is None else w
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
    return coef[: X.shape[1]], y - Z @ coef


def test_single_dimension_demeaning_exact():
    spec = DesignSpec(np.zeros(4), np.array([[1.0], [3.0], [5.0], [9.0]]), fe_dimensions=(np.array([0, 0, 1, 1]),))
    out = within_transform(spec)
    np.testing.assert_allclose(out.regressors[:, 0], [-1, 1, -2, 2], atol=1e-15)
    assert out.absorption_iterations == 1 and out.converged


def test_two_way_crossed_matches_dummy_residuals():
    rng = np.random.default_rng(0)
    a, b = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    y, x = rng.normal(size=4), rng.normal(size=4)
    out = within_transform(DesignSpec(y, x[:, None], fe_dimensions=(a, b)))
    _, ry = dummy_fit(np.empty((4, 0)), y, [a, b])
    _, rx = dummy_fit(np.empty((4, 0)), x, [a, b])
    np.testing.assert_allclose(out.response, ry, atol=1e-8)
    np.testing.assert_allclose(out.regressors[:, 0], rx, atol=1e-8)


def test_constant_within_group_column_annihilated():
    g = np.array([0, 0, 1, 1, 2])
    x = np.array([4.0, 4.0, -1.0, -1.0, 7.0])
    out = within_transform(DesignSpec(np.arange(5.0), x[:, None], fe_dimensions=(g,)))
    np.testing.assert_allclose(out.regressors[:, 0], 0.0, atol=1e-14)


def test_saturated_dd_recovers_alphas():
    d, t = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    spec = DesignSpec.from_arrays(np.column_stack([d, t, d * t]), np.array([10.0, 12, 20, 23]))
    fit = fit_ols(spec)
    np.testing.assert_allclose(fit.coefficients, [10, 10, 2, 1], atol=1e-12)


def test_exact_fit_has_zero_residuals_and_ses():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    fit = fit_ols(DesignSpec.from_arrays(X, X[:, 1].copy()))
    np.testing.assert_allclose(fit.coefficients, [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(fit.residuals, 0, atol=1e-12)
    np.testing.assert_allclose(fit.bse, 0, atol=1e-12)


def test_random_50x3_matches_normal_equations():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 3))
    y = X @ [1.0, -2.0, 0.5] + rng.normal(size=50)
    fit = fit_ols(DesignSpec(y, X))
    b = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(fit.coefficients, b, rtol=1e-8)


@pytest.mark.parametrize("se_type", ["HC0", "HC1"])
def test_weighted_sandwich_matches_naive(se_type):
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
    y = X @ [1, 2, 3, 4] + rng.normal(size=80) * (1 + np.abs(X[:, 1]))
    w = rng.uniform(0.5, 2, 80)
    fit = fit_ols(DesignSpec(y, X, weights=w), se_type=se_type)
    b, V, e = naive_fit(X, y, w, hc1=se_type == "HC1")
    np.testing.assert_allclose(fit.coefficients, b, rtol=1e-10)
    np.testing.assert_allclose(fit.robust_vcov, V, rtol=1e-9)
    np.testing.assert_allclose(fit.residuals, e, atol=1e-10)


def test_fe_absorption_matches_dummies_two_dims_weighted():
    rng = np.random.default_rng(4)
    n = 300
    a, b = rng.integers(0, 15, n), rng.integers(0, 8, n)
    X = rng.normal(size=(n, 2))
    y = X @ [0.7, -1.1] + rng.normal(size=15)[a] + rng.normal(size=8)[b] + rng.normal(size=n)
    w = rng.uniform(0.5, 3, n)
    fit = fit_ols(DesignSpec(y, X, weights=w, fe_dimensions=(a, b)), tol=1e-12)
    coef, resid = dummy_fit(X, y, [a, b], w)
    np.testing.assert_allclose(fit.coefficients, coef, rtol=1e-6)
    np.testing.assert_allclose(fit.residuals, resid, atol=1e-6)
    assert fit.fe_dof_exact and fit.fe_dof == 15 + 8 - 1


def test_fwl_partialling_out():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 3))
    y = X @ [1, 2, 3] + rng.normal(size=100)
    full = fit_ols(DesignSpec(y, X))
    P = X[:, :2] @ np.linalg.pinv(X[:, :2])
    part = fit_ols(DesignSpec(y - P @ y, (X[:, 2] - P @ X[:, 2])[:, None]))
    assert part.coefficients[0] == pytest.approx(full.coefficients[2], rel=1e-10)


def test_row_permutation_invariance():
    rng = np.random.default_rng(6)
    n = 120
    X, y, g = rng.normal(size=(n, 2)), rng.normal(size=n), rng.integers(0, 10, n)
    perm = rng.permutation(n)
    f1 = fit_ols(DesignSpec(y, X, fe_dimensions=(g,)), se_type="HC0")
    f2 = fit_ols(DesignSpec(y[perm], X[perm], fe_dimensions=(g[perm],)), se_type="HC0")
    np.testing.assert_allclose(f1.coefficients, f2.coefficients, rtol=1e-10)
    np.testing.assert_allclose(f1.robust_vcov, f2.robust_vcov, rtol=1e-8)


def test_collinear_column_dropped_with_warning():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 2))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.warns(RankDeficientWarning, match="x2"):
        fit = fit_ols(DesignSpec(rng.normal(size=40), X))
    assert fit.dropped == (2,) and fit.rank == 2
    assert np.isnan(fit.coefficients[2]) and np.isfinite(fit.coefficients[:2]).all()


def test_column_absorbed_by_fe_is_dropped():
    g = np.repeat(np.arange(5), 4)
    x = np.arange(5.0)[g]
    with pytest.warns(RankDeficientWarning):
        fit = fit_ols(DesignSpec(np.random.default_rng(0).normal(size=20), x[:, None], fe_dimensions=(g,)))
    assert fit.dropped == (0,)


def test_weights_validated():
    X, y = np.ones((3, 1)), np.ones(3)
    with pytest.raises(DegenerateWeights):
        DesignSpec(y, X, weights=[1.0, 0.0, 1.0])
    with pytest.raises(DegenerateWeights):
        DesignSpec(y, X, weights=[1.0, np.nan, 1.0])
    with pytest.raises(DimensionMismatch):
        DesignSpec(y, np.ones((4, 1)))


def saturated_fit(rng, n_cell=200):
    d = np.repeat([0, 0, 1, 1], n_cell)
    t = np.repeat([0, 1, 0, 1], n_cell)
    mu = np.array([10.0, 12, 20, 23])[2 * d + t]
    y = mu + rng.normal(size=d.size) * (1 + d)
    X = np.column_stack([d, t, d * t])
    return X, y


def test_linear_combination_unit_and_zero():
    X, y = saturated_fit(np.random.default_rng(8))
    fit = fit_ols(DesignSpec.from_arrays(X, y))
    est, se = linear_combination_se(fit, [0, 0, 0, 1])
    assert est == fit.coefficients[3] and se == pytest.approx(fit.bse[3], rel=1e-14)
    assert linear_combination_se(fit, np.zeros(4)) == (0.0, 0.0)
    with pytest.raises(DimensionMismatch):
        linear_combination_se(fit, [1, 0])


def test_linear_combination_se_matches_bootstrap():
    rng = np.random.default_rng(9)
    X, y = saturated_fit(rng)
    fit = fit_ols(DesignSpec.from_arrays(X, y), se_type="HC0")
    c = np.array([0, 1, 0, 1.0])
    est, se = linear_combination_se(fit, c)
    n = y.size
    Z = np.column_stack([np.ones(n), X])
    boot = []
    for _ in range(2000):
        idx = rng.integers(0, n, n)
        b, *_ = np.linalg.lstsq(Z[idx], y[idx], rcond=None)
        boot.append(c @ b)
    assert se == pytest.approx(np.std(boot, ddof=1), rel=0.10)
    # alpha2 + alpha4 is the post-period gap T1 - C1
    assert est == pytest.approx(23 - 12, abs=0.5)


def test_fe_degrees_of_freedom():
    assert fe_degrees_of_freedom([np.array([0, 1, 2, 0])]) == (3, True)
    # two disconnected blocks: {a0,a1}x{b0} and {a2}x{b1}
    a, b = np.array([0, 1, 2]), np.array([0, 0, 1])
    assert fe_degrees_of_freedom([a, b]) == (3 + 2 - 2, True)


def test_encode_groups_first_appearance_independent_of_dtype():
    assert list(encode_groups(np.array(["b", "a", "b"]))) == list(encode_groups(np.array([2, 1, 2])))


def test_robust_ols_estimator_api():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(60, 2))
    y = 3 + X @ [1, -1] + rng.normal(size=60) * 0.1
    est = RobustOLS(se_type="HC0").fit(X, y)
    assert est.intercept_ == pytest.approx(3, abs=0.1)
    np.testing.assert_allclose(est.predict(X), est.intercept_ + X @ est.coef_)
    assert est.score(X, y) > 0.99
    assert clone(est).get_params() == est.get_params()
    g = rng.integers(0, 4, 60)
    fe = RobustOLS().fit(X, y, fixed_effects=g)
    with pytest.raises(ValueError):
        fe.predict(X)


def test_within_transformer_api():
    g = np.array([0, 0, 1, 1])
    out = WithinTransformer().fit(np.array([[1.0], [3.0], [5.0], [9.0]]), fixed_effects=g).transform(
        np.array([[1.0], [3.0], [5.0], [9.0]]))
    np.testing.assert_allclose(out[:, 0], [-1, 1, -2, 2])


def test_non_convergence_warns():
    from ddsignal.exceptions import NotConvergedWarning

    rng = np.random.default_rng(11)
    a, b = rng.integers(0, 30, 200), rng.integers(0, 30, 200)
    with pytest.warns(NotConvergedWarning):
        out = within_transform(DesignSpec(rng.normal(size=200), rng.normal(size=(200, 1)),
                                          fe_dimensions=(a, b)), tol=1e-14, max_iter=2)
    assert not out.converged and out.absorption_iterations == 2


def test_more_columns_than_rows_drops_trailing():
    rng = np.random.default_rng(12)
    with pytest.warns(RankDeficientWarning):
        fit = fit_ols(DesignSpec(rng.normal(size=3), rng.normal(size=(3, 5))))
    assert fit.rank == 3 and fit.dropped == (3, 4)
    np.testing.assert_allclose(fit.residuals, 0, atol=1e-10)

"""Weighted least squares with Eicker-Huber-White covariance and fixed-effect absorption.

Fixed effects are absorbed with the method of alternating projections:
every column is demeaned within each fixed-effect dimension in turn until a
full sweep changes no entry by more than ``tol``. Coefficients are obtained
from a Householder QR factorisation of the (square-root) weighted design.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_design, check_fixed_effects, check_weights
from .exceptions import DimensionMismatch, NotConvergedWarning, RankDeficientWarning

SE_TYPES = ("HC0", "HC1")
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
DEFAULT_RANK_TOL = 1e-7


def encode_groups(keys) -> np.ndarray:
    """Map arbitrary labels to integer codes ``0..G-1``."""
    keys = np.asarray(keys)
    if keys.dtype.kind in "iub":
        _, codes = np.unique(keys, return_inverse=True)
    else:
        _, codes = np.unique(keys.astype(str), return_inverse=True)
    return codes.astype(np.intp).ravel()


def _dummies(codes: np.ndarray) -> scipy.sparse.csr_matrix:
    n = codes.shape[0]
    g = int(codes.max()) + 1 if n else 0
    return scipy.sparse.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, g))


def fe_degrees_of_freedom(fe_codes) -> tuple[int, bool]:
    """Degrees of freedom used by absorbed fixed effects, and whether the count is exact.

    One dimension: its level count. Two dimensions: levels minus the number
    of connected components of the bipartite level graph (exact). Three or
    more: each later dimension is credited with the largest component count
    among earlier ones, which can only overstate the true count.
    """
    fe_codes = [np.asarray(c) for c in fe_codes]
    if not fe_codes:
        return 0, True
    levels = [int(c.max()) + 1 for c in fe_codes]
    if len(fe_codes) == 1:
        return levels[0], True

    def components(a, b):
        ga, gb = int(a.max()) + 1, int(b.max()) + 1
        adj = scipy.sparse.coo_matrix((np.ones(a.shape[0]), (a, b + ga)), shape=(ga + gb, ga + gb))
        return connected_components(adj, directed=False)[0]

    dof = sum(levels)
    for i in range(1, len(fe_codes)):
        dof -= max(components(fe_codes[j], fe_codes[i]) for j in range(i))
    return dof, len(fe_codes) == 2


@dataclass(frozen=True, eq=False)
class DesignSpec:
    """Response, regressors, weights and fixed-effect dimensions for one regression.

    ``column_scale`` holds the weighted norms of the regressors before any
    absorption; rank checks compare against it so that a column wiped out by
    the fixed effects is recognised as collinear.
    """

    response: np.ndarray
    regressors: np.ndarray
    column_names: tuple = ()
    fe_dimensions: tuple = ()
    weights: np.ndarray = None
    intercept: bool = False
    absorbed: bool = False
    absorption_iterations: int = 0
    converged: bool = True
    column_scale: np.ndarray = None

    def __post_init__(self):
        X, y = check_design(self.regressors, self.response)
        n, k = X.shape
        w = check_weights(self.weights, n)
        fe = tuple(check_fixed_effects(f, n) for f in self.fe_dimensions)
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(k))
        if len(names) != k:
            raise DimensionMismatch(f"{len(names)} column names for {k} regressors")
        scale = self.column_scale
        if scale is None:
            scale = np.sqrt((w[:, None] * X * X).sum(axis=0))
        set_ = object.__setattr__
        set_(self, "response", y)
        set_(self, "regressors", X)
        set_(self, "weights", w)
        set_(self, "fe_dimensions", fe)
        set_(self, "column_names", names)
        set_(self, "column_scale", np.asarray(scale, dtype=float))

    @property
    def n_obs(self):
        return self.response.shape[0]

    @classmethod
    def from_arrays(cls, X, y, weights=None, fixed_effects=None, add_intercept=True, column_names=()):
        """Build a design, encoding fixed-effect labels and prepending an intercept if asked."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = list(column_names) or [f"x{j}" for j in range(X.shape[1])]
        fe = []
        if fixed_effects is not None:
            fe_arr = np.asarray(fixed_effects)
            if fe_arr.ndim == 1:
                fe_arr = fe_arr[:, None]
            fe = [encode_groups(fe_arr[:, j]) for j in range(fe_arr.shape[1])]
        if add_intercept and not fe:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["intercept"] + names
        return cls(y, X, tuple(names), tuple(fe), weights, intercept=bool(add_intercept and not fe))


@dataclass(frozen=True, eq=False)
class FitResult:
    coefficients: np.ndarray
    robust_vcov: np.ndarray
    residuals: np.ndarray
    n_obs: int
    rank: int
    dof: int
    absorption_iterations: int
    converged: bool
    column_names: tuple = ()
    dropped: tuple = ()
    se_type: str = "HC1"
    fe_dof: int = 0
    fe_dof_exact: bool = True
    fitted_values: np.ndarray = field(default=None, repr=False)

    @property
    def bse(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_vcov), 0.0, None))

    def index(self, name) -> int:
        return self.column_names.index(name)

    def coef(self, name) -> float:
        return float(self.coefficients[self.index(name)])

    def se(self, name) -> float:
        return float(self.bse[self.index(name)])


def within_transform(spec: DesignSpec, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> DesignSpec:
    """Demean response and regressors within every fixed-effect dimension.

    Group means are weighted. A single dimension is exact after one sweep.
    With several dimensions the sweeps repeat until the largest absolute
    change, measured relative to ``max(1, max|column|)``, falls below ``tol``.
    """
    if not spec.fe_dimensions:
        raise ValueError("within_transform needs at least one fixed-effect dimension")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    w = spec.weights
    M = np.column_stack([spec.response, spec.regressors])
    scale = np.maximum(1.0, np.abs(M).max(axis=0)) if M.size else np.ones(M.shape[1])
    projections = []
    for codes in spec.fe_dimensions:
        D = _dummies(codes)
        wsum = np.asarray(D.T @ w).ravel()
        projections.append((D, wsum))

    def sweep(A):
        for D, wsum in projections:
            means = (D.T @ (w[:, None] * A)) / wsum[:, None]
            A = A - D @ means
        return A

    converged = False
    it = 0
    if len(projections) == 1:
        M = sweep(M)
        it, converged = 1, True
    else:
        for it in range(1, max_iter + 1):
            new = sweep(M)
            change = (np.abs(new - M).max(axis=0) / scale).max() if M.size else 0.0
            M = new
            if change < tol:
                converged = True
                break
    if not converged:
        warnings.warn(f"fixed-effect absorption did not converge in {max_iter} sweeps", NotConvergedWarning,
                      stacklevel=2)
    return replace(
        spec, response=M[:, 0], regressors=M[:, 1:], absorbed=True, absorption_iterations=it,
        converged=converged, column_scale=spec.column_scale,
    )


def _collinear_columns(Xw, scale, rank_tol):
    """Indices whose component orthogonal to earlier columns is negligible."""
    if Xw.shape[1] == 0:
        return []
    r = np.zeros(Xw.shape[1])
    diag = np.abs(np.diag(np.linalg.qr(Xw, mode="r")))
    # with fewer rows than columns the trailing columns have no pivot at all
    r[: diag.size] = diag
    ref = np.where(scale > 0, scale, 1.0)
    return [j for j in range(Xw.shape[1]) if scale[j] == 0 or r[j] <= rank_tol * ref[j]]


def fit_ols(spec: DesignSpec, se_type: str = "HC1", tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
            rank_tol: float = DEFAULT_RANK_TOL) -> FitResult:
    """Weighted least squares with a heteroskedasticity-robust sandwich covariance.

    Fixed effects declared on ``spec`` are absorbed first unless the spec is
    already absorbed. Collinear columns are dropped in column order; their
    coefficients and covariance entries are NaN and a
    :class:`RankDeficientWarning` names the first one.
    """
    se_type = str(se_type).upper()
    if se_type not in SE_TYPES:
        raise ValueError(f"se_type must be one of {SE_TYPES}")
    if spec.fe_dimensions and not spec.absorbed:
        spec = within_transform(spec, tol=tol, max_iter=max_iter)
    y, X, w = spec.response, spec.regressors, spec.weights
    n, k = X.shape
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw

    dropped = _collinear_columns(Xw, spec.column_scale, rank_tol)
    if dropped:
        warnings.warn(
            f"design is rank deficient; dropping column {dropped[0]} ({spec.column_names[dropped[0]]!r})"
            + (f" and {len(dropped) - 1} more" if len(dropped) > 1 else ""),
            RankDeficientWarning, stacklevel=2,
        )
    keep = np.array([j for j in range(k) if j not in set(dropped)], dtype=np.intp)
    Xk = Xw[:, keep]
    rank = keep.size
    if n < rank:
        raise DimensionMismatch(f"{n} observations for {rank} free columns")

    beta = np.full(k, np.nan)
    vcov = np.full((k, k), np.nan)
    fe_dof, fe_exact = fe_degrees_of_freedom(spec.fe_dimensions)
    dof = n - rank - fe_dof
    if rank:
        Q, R = np.linalg.qr(Xk)
        b = scipy.linalg.solve_triangular(R, Q.T @ yw)
        beta[keep] = b
        resid = y - X[:, keep] @ b
        Rinv = scipy.linalg.solve_triangular(R, np.eye(rank))
        bread = Rinv @ Rinv.T
        U = X[:, keep] * (w * resid)[:, None]
        V = bread @ (U.T @ U) @ bread
        if se_type == "HC1":
            V = V * (n / dof if dof > 0 else np.nan)
        V = 0.5 * (V + V.T)
        vcov[np.ix_(keep, keep)] = V
    else:
        resid = y.copy()
    return FitResult(
        coefficients=beta, robust_vcov=vcov, residuals=resid, n_obs=n, rank=rank, dof=dof,
        absorption_iterations=spec.absorption_iterations, converged=spec.converged,
        column_names=spec.column_names, dropped=tuple(dropped), se_type=se_type,
        fe_dof=fe_dof, fe_dof_exact=fe_exact, fitted_values=y - resid,
    )


def linear_combination_se(fit: FitResult, weights) -> tuple[float, float]:
    """Estimate and robust standard error of ``weights @ coefficients``.

    Dropped coefficients contribute nothing when their weight is zero and
    make the result NaN otherwise.
    """
    c = np.asarray(weights, dtype=float).ravel()
    if c.shape[0] != fit.coefficients.shape[0]:
        raise DimensionMismatch(f"{c.shape[0]} weights for {fit.coefficients.shape[0]} coefficients")
    live = c != 0
    b = fit.coefficients[live]
    V = fit.robust_vcov[np.ix_(live, live)]
    if not live.any():
        return 0.0, 0.0
    est = float(c[live] @ b)
    var = float(c[live] @ V @ c[live])
    return est, float(np.sqrt(max(var, 0.0))) if np.isfinite(var) else float("nan")


class WithinTransformer(TransformerMixin, BaseEstimator):
    """Absorb fixed effects from a matrix (scikit-learn transformer).

    ``fit`` records the fixed-effect structure of the rows; ``transform``
    demeans a matrix with the same rows.
    """

    def __init__(self, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None, fixed_effects=None, sample_weight=None):
        X = np.asarray(X, dtype=float)
        if fixed_effects is None:
            raise ValueError("fixed_effects is required")
        fe = np.asarray(fixed_effects)
        if fe.ndim == 1:
            fe = fe[:, None]
        if fe.shape[0] != X.shape[0]:
            raise DimensionMismatch("fixed_effects rows do not match X")
        self.fe_codes_ = tuple(encode_groups(fe[:, j]) for j in range(fe.shape[1]))
        self.sample_weight_ = check_weights(sample_weight, X.shape[0])
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        check_is_fitted(self, "fe_codes_")
        X = np.asarray(X, dtype=float)
        flat = X.ndim == 1
        X2 = X[:, None] if flat else X
        if X2.shape[0] != self.fe_codes_[0].shape[0]:
            raise DimensionMismatch("transform expects the rows seen in fit")
        spec = DesignSpec(X2[:, 0], X2[:, 1:], fe_dimensions=self.fe_codes_, weights=self.sample_weight_)
        out = within_transform(spec, tol=self.tol, max_iter=self.max_iter)
        self.n_iter_, self.converged_ = out.absorption_iterations, out.converged
        res = np.column_stack([out.response, out.regressors])
        return res[:, 0] if flat else res


class RobustOLS(RegressorMixin, BaseEstimator):
    """Least squares with Eicker-Huber-White standard errors and optional absorbed fixed effects."""

    def __init__(self, se_type="HC1", fit_intercept=True, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 rank_tol=DEFAULT_RANK_TOL):
        self.se_type = se_type
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter
        self.rank_tol = rank_tol

    def fit(self, X, y, sample_weight=None, fixed_effects=None):
        X, y = check_design(X, y)
        spec = DesignSpec.from_arrays(X, y, weights=sample_weight, fixed_effects=fixed_effects,
                                      add_intercept=self.fit_intercept)
        res = fit_ols(spec, se_type=self.se_type, tol=self.tol, max_iter=self.max_iter, rank_tol=self.rank_tol)
        self.result_ = res
        self.n_features_in_ = X.shape[1]
        self.absorbed_ = bool(spec.fe_dimensions)
        if spec.intercept:
            self.intercept_ = float(res.coefficients[0])
            self.coef_ = res.coefficients[1:]
            self.bse_ = res.bse[1:]
        else:
            self.intercept_ = 0.0
            self.coef_ = res.coefficients
            self.bse_ = res.bse
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        if self.absorbed_:
            raise ValueError("predictions are unavailable after fixed-effect absorption")
        X = np.asarray(X, dtype=float)
        return self.intercept_ + X @ np.nan_to_num(self.coef_)

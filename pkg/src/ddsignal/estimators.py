"""Level, log and inverse-hyperbolic-sine difference-in-differences estimators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import DDCellMeans, OutcomeTransform, PanelDataset, cell_means
from .exceptions import EmptyCell, MissingColumn, NonPositiveOutcome, ZeroBaseline, ZeroControlGrowth
from .ols import DEFAULT_MAX_ITER, DEFAULT_TOL, DesignSpec, FitResult, encode_groups, fit_ols

DD_TERMS = ("intercept", "treat", "post", "treat_post")


def normal_pvalue(estimate, se, scale=1.0):
    """Two-sided p-value from the normal approximation.

    NaN when both the estimate and its standard error are numerically zero
    relative to ``scale`` (nothing to test); 0 when only the SE vanishes.
    """
    if not (np.isfinite(estimate) and np.isfinite(se)):
        return float("nan")
    tiny = 1e-12 * max(1.0, abs(scale))
    if se <= tiny:
        return float("nan") if abs(estimate) <= tiny else 0.0
    return float(2.0 * norm.sf(abs(estimate) / se))


def stars(p):
    """Significance stars: *** 1%, ** 5%, * 10%."""
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def delta_method(beta4: float, se_beta4: float) -> tuple[float, float]:
    """``exp(beta4) - 1`` and its first-order standard error ``exp(beta4) * se``."""
    if se_beta4 < 0:
        raise ValueError("standard error must be non-negative")
    g = math.exp(beta4)
    return g - 1.0, g * se_beta4


@dataclass(frozen=True)
class GrowthDecomposition:
    g_T: float
    g_C: float
    ratio_minus_one: float
    level_dd: float

    def to_dict(self):
        return {"g_T": self.g_T, "g_C": self.g_C, "ratio_minus_one": self.ratio_minus_one,
                "level_dd": self.level_dd}


def dd_from_cells(cells: DDCellMeans) -> GrowthDecomposition:
    """Level DD and gross growth rates from raw (untransformed) cell means."""
    c0, c1, t0, t1 = cells.as_tuple()
    level_dd = (t1 - t0) - (c1 - c0)
    if t0 == 0 or c0 == 0:
        raise ZeroBaseline("a pre-period cell mean is zero; growth rates are undefined")
    g_t, g_c = t1 / t0, c1 / c0
    if g_c == 0:
        raise ZeroControlGrowth("control-group growth is zero; the growth ratio is undefined")
    return GrowthDecomposition(g_T=g_t, g_C=g_c, ratio_minus_one=g_t / g_c - 1.0, level_dd=level_dd)


@dataclass(frozen=True, eq=False)
class DDFit:
    """One difference-in-differences regression.

    ``coefficients``/``ses`` follow ``DD_TERMS`` (NaN where a term was
    absorbed or dropped). ``cells`` holds untransformed cell means of the
    estimation sample.
    """

    transform: OutcomeTransform
    coefficients: np.ndarray
    ses: np.ndarray
    dd_estimate: float
    dd_se: float
    cells: DDCellMeans | None
    n_obs: int
    exp_minus_one: tuple | None = None
    se_type: str = "HC1"
    fit: FitResult = field(default=None, repr=False)
    controls: tuple = ()
    absorbed: tuple = ()

    @property
    def dd_pvalue(self):
        return normal_pvalue(self.dd_estimate, self.dd_se)

    @property
    def exp_minus_one_pvalue(self):
        if self.exp_minus_one is None:
            return None
        return normal_pvalue(*self.exp_minus_one)

    def to_dict(self):
        out = {
            "transform": self.transform.value,
            "se_type": self.se_type,
            "n_obs": self.n_obs,
            "coefficients": dict(zip(DD_TERMS, map(float, self.coefficients))),
            "ses": dict(zip(DD_TERMS, map(float, self.ses))),
            "dd_estimate": self.dd_estimate,
            "dd_se": self.dd_se,
            "dd_pvalue": self.dd_pvalue,
            "controls": list(self.controls),
            "absorbed": ["*".join(a) if isinstance(a, tuple) else a for a in self.absorbed],
            "dropped_columns": [self.fit.column_names[j] for j in self.fit.dropped] if self.fit else [],
            "cells": self.cells.to_dict() if self.cells else None,
        }
        if self.exp_minus_one is not None:
            out["exp_minus_one"] = {"estimate": self.exp_minus_one[0], "se": self.exp_minus_one[1],
                                    "pvalue": self.exp_minus_one_pvalue}
        if self.fit is not None:
            out["absorption_iterations"] = self.fit.absorption_iterations
            out["converged"] = self.fit.converged
        return out


def _fe_key(data: PanelDataset, spec) -> np.ndarray:
    """Labels for one absorbed dimension; a tuple of names crosses several columns.

    ``"treat"`` and ``"post"`` may appear inside a crossing.
    """
    parts = (spec,) if isinstance(spec, str) else tuple(spec)
    cols = []
    for name in parts:
        if name == "treat":
            cols.append(data.treat.astype(str))
        elif name == "post":
            cols.append(data.post.astype(str))
        else:
            cols.append(data.fe_column(name).astype(str))
    if len(cols) == 1:
        return cols[0]
    return np.array(["\x1f".join(t) for t in zip(*cols)], dtype=object)


def parse_absorb(items) -> tuple:
    """Normalise ``["state*year", "oa"]`` style specs into names or name tuples."""
    out = []
    for item in items or ():
        if isinstance(item, str) and "*" in item:
            out.append(tuple(p.strip() for p in item.split("*")))
        elif isinstance(item, (list, tuple)):
            out.append(tuple(item))
        else:
            out.append(item)
    return tuple(out)


def build_dd_design(data: PanelDataset, transform=OutcomeTransform.LEVEL, controls=(), absorb=(),
                    interact_post=()) -> DesignSpec:
    """Design matrix for outcome on Treat, Post, Treat x Post plus controls.

    The intercept is omitted when fixed effects are absorbed (they span it).
    ``interact_post`` adds ``covariate x Post`` columns.
    """
    transform = OutcomeTransform.coerce(transform)
    y = transform.apply(data.outcome)
    d = data.treat.astype(float)
    p = data.post.astype(float)
    cols = [d, p, d * p]
    names = ["treat", "post", "treat_post"]
    for c in controls:
        cols.append(data.covariate(c))
        names.append(c)
    for c in interact_post:
        cols.append(data.covariate(c) * p)
        names.append(f"{c}:post")
    absorb = parse_absorb(absorb)
    fe = tuple(encode_groups(_fe_key(data, a)) for a in absorb)
    if not fe:
        cols.insert(0, np.ones(len(data)))
        names.insert(0, "intercept")
    X = np.column_stack(cols)
    return DesignSpec(y, X, tuple(names), fe, data.weights, intercept=not fe)


def estimate_dd(data: PanelDataset, transform=OutcomeTransform.LEVEL, controls=(), absorb=(),
                interact_post=(), se_type="HC1", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> DDFit:
    """Fit the DD regression on the (transformed) outcome.

    Log fits also carry ``exp(beta4) - 1`` with a delta-method SE.
    """
    transform = OutcomeTransform.coerce(transform)
    controls, interact_post = tuple(controls), tuple(interact_post)
    if transform is OutcomeTransform.LOG:
        bad = int(np.count_nonzero(~(data.outcome > 0)))
        if bad:
            raise NonPositiveOutcome(bad)
    for c in controls + interact_post:
        if c not in data.covariate_names:
            raise MissingColumn(c, data.covariate_names)
    try:
        cells = cell_means(data, OutcomeTransform.LEVEL)
    except EmptyCell as e:
        warnings.warn(str(e), stacklevel=2)
        cells = None
    spec = build_dd_design(data, transform, controls, absorb, interact_post)
    res = fit_ols(spec, se_type=se_type, tol=tol, max_iter=max_iter)

    coef = np.full(4, np.nan)
    ses = np.full(4, np.nan)
    for i, name in enumerate(DD_TERMS):
        if name in res.column_names:
            j = res.index(name)
            coef[i] = res.coefficients[j]
            ses[i] = res.bse[j]
    dd, dd_se = float(coef[3]), float(ses[3])
    expm1 = None
    if transform is OutcomeTransform.LOG and np.isfinite(dd):
        expm1 = delta_method(dd, dd_se)
    return DDFit(
        transform=transform, coefficients=coef, ses=ses, dd_estimate=dd, dd_se=dd_se, cells=cells,
        n_obs=len(data), exp_minus_one=expm1, se_type=res.se_type, fit=res, controls=controls + tuple(
            f"{c}:post" for c in interact_post), absorbed=parse_absorb(absorb),
    )


def drop_nonpositive(data: PanelDataset) -> tuple[PanelDataset, int]:
    """Common log-feasible sample: rows with strictly positive outcomes."""
    keep = data.outcome > 0
    dropped = int(np.count_nonzero(~keep))
    return (data if dropped == 0 else data.subset(keep)), dropped


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    control_pre: float
    control_post: float
    treat_pre: float
    treat_post: float
    control_pre_sd: float
    control_post_sd: float
    treat_pre_sd: float
    treat_post_sd: float
    p_diff_control: float
    p_diff_treat: float
    dd_coef: float
    dd_se: float
    p_dd: float
    degenerate: bool

    def to_dict(self):
        return dict(self.__dict__)


def _wmean_sd(x, w):
    m = float(np.average(x, weights=w))
    sd = float(np.sqrt(np.average((x - m) ** 2, weights=w))) if x.size > 1 else 0.0
    return m, sd


def balance_table(data: PanelDataset, covariates=None, se_type="HC1") -> list[BalanceRow]:
    """Pre/post means by group with robust-OLS p-values.

    Within-group p-values test the Post coefficient of ``x ~ 1 + Post`` on
    that group; the DD p-value tests Treat x Post in ``x ~ 1 + Treat + Post +
    Treat x Post``. A covariate without variation gets NaN p-values and
    ``degenerate=True``.
    """
    covariates = list(data.covariate_names if covariates is None else covariates)
    empty = data.empty_cells()
    if empty:
        raise EmptyCell(empty)
    d, p, w = data.treat, data.post, data.weights
    rows = []
    for name in covariates:
        x = data.covariate(name)
        scale = float(np.abs(x).max()) if x.size else 1.0
        stats = {}
        for g in (0, 1):
            for t in (0, 1):
                m = (d == g) & (p == t)
                stats[g, t] = _wmean_sd(x[m], w[m])
        pdiff = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for g in (0, 1):
                m = d == g
                pg = p[m].astype(float)
                spec = DesignSpec(x[m], np.column_stack([np.ones(pg.size), pg]), ("intercept", "post"),
                                  weights=w[m])
                r = fit_ols(spec, se_type=se_type)
                pdiff.append(normal_pvalue(r.coefficients[1], r.bse[1], scale))
            spec = DesignSpec(x, np.column_stack([np.ones(x.size), d, p, d * p]).astype(float),
                              DD_TERMS, weights=w)
            r = fit_ols(spec, se_type=se_type)
        dd_coef, dd_se = float(r.coefficients[3]), float(r.bse[3])
        p_dd = normal_pvalue(dd_coef, dd_se, scale)
        degenerate = bool(np.ptp(x) == 0) if x.size else True
        if degenerate:
            pdiff, p_dd = [float("nan")] * 2, float("nan")
        rows.append(BalanceRow(
            covariate=name,
            control_pre=stats[0, 0][0], control_post=stats[0, 1][0],
            treat_pre=stats[1, 0][0], treat_post=stats[1, 1][0],
            control_pre_sd=stats[0, 0][1], control_post_sd=stats[0, 1][1],
            treat_pre_sd=stats[1, 0][1], treat_post_sd=stats[1, 1][1],
            p_diff_control=pdiff[0], p_diff_treat=pdiff[1],
            dd_coef=dd_coef, dd_se=dd_se, p_dd=p_dd, degenerate=degenerate,
        ))
    return rows


class OutcomeTransformer(TransformerMixin, BaseEstimator):
    """Level / log / inverse-hyperbolic-sine outcome transform."""

    def __init__(self, kind="level"):
        self.kind = kind

    def fit(self, y, x=None):
        self.transform_ = OutcomeTransform.coerce(self.kind)
        self.transform_.apply(y)
        return self

    def transform(self, y):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(y)

    def inverse_transform(self, z):
        check_is_fitted(self, "transform_")
        return self.transform_.inverse(z)


class DDEstimator(BaseEstimator):
    """Difference-in-differences regression with a scikit-learn interface.

    ``X`` holds Treat and Post in its first two columns followed by any
    controls; ``fixed_effects`` (one column per dimension) are absorbed.
    """

    def __init__(self, transform="level", se_type="HC1", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        self.transform = transform
        self.se_type = se_type
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None, fixed_effects=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 2:
            raise ValueError("X must have at least two columns: treat, post")
        k = X.shape[1] - 2
        names = tuple(f"x{j}" for j in range(k))
        fe_names = ()
        if fixed_effects is not None:
            fixed_effects = np.asarray(fixed_effects)
            if fixed_effects.ndim == 1:
                fixed_effects = fixed_effects[:, None]
            fe_names = tuple(f"fe{j}" for j in range(fixed_effects.shape[1]))
        data = PanelDataset(outcome=y, treat=X[:, 0], post=X[:, 1], covariates=X[:, 2:], fe_keys=fixed_effects,
                            weights=sample_weight, covariate_names=names, fe_dimension_names=fe_names)
        self.result_ = estimate_dd(data, self.transform, controls=names, absorb=fe_names, se_type=self.se_type,
                                   tol=self.tol, max_iter=self.max_iter)
        self.n_features_in_ = X.shape[1]
        self.coef_ = self.result_.fit.coefficients
        self.dd_ = self.result_.dd_estimate
        self.dd_se_ = self.result_.dd_se
        self.exp_minus_one_ = self.result_.exp_minus_one
        self.absorbed_ = bool(fe_names)
        return self

    def predict(self, X):
        """Fitted values on the transformed scale (unavailable after absorption)."""
        check_is_fitted(self, "result_")
        if self.absorbed_:
            raise ValueError("predictions are unavailable after fixed-effect absorption")
        X = np.asarray(X, dtype=float)
        d, p = X[:, 0], X[:, 1]
        Z = np.column_stack([np.ones(len(X)), d, p, d * p, X[:, 2:]])
        return Z @ np.nan_to_num(self.coef_)

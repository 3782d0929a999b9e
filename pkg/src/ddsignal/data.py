"""Panel data containers, CSV ingestion and per-cell summaries.

A dataset is stored column-wise (one numpy array per field) so that the
estimators and the Monte Carlo engine never have to materialise per-row
objects; :class:`PanelObservation` is available for row-wise access.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import operator
import os
import re
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .exceptions import ConfigError, EmptyCell, MissingColumn, NonPositiveOutcome, ParseFailure

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


class OutcomeTransform(str, enum.Enum):
    """Transformation applied to the outcome before estimation."""

    LEVEL = "level"
    LOG = "log"
    IHS = "ihs"

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        if self is OutcomeTransform.LEVEL:
            return y.copy()
        if self is OutcomeTransform.LOG:
            bad = int(np.count_nonzero(~(y > 0)))
            if bad:
                raise NonPositiveOutcome(bad)
            return np.log(y)
        return np.arcsinh(y)

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        if self is OutcomeTransform.LEVEL:
            return z.copy()
        if self is OutcomeTransform.LOG:
            return np.exp(z)
        return np.sinh(z)

    @classmethod
    def coerce(cls, value) -> "OutcomeTransform":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown outcome transform {value!r}; expected one of level, log, ihs") from None


@dataclass(frozen=True)
class PanelObservation:
    unit_id: Any
    time_id: Any
    outcome: float
    treat: int
    post: int
    covariates: tuple = ()
    fe_keys: tuple = ()
    weight: float = 1.0

    def __post_init__(self):
        if self.treat not in (0, 1) or self.post not in (0, 1):
            raise ValueError("treat and post must be exactly 0 or 1")
        if not math.isfinite(self.outcome):
            raise ValueError("outcome must be finite")
        if not self.weight > 0:
            raise ValueError("weight must be positive")


def _as_2d(a, n, k):
    if a.ndim == 2 and a.shape[0] == n:
        return a
    return a.reshape(n, -1) if n else a.reshape(0, k)


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable column-wise panel.

    ``covariates`` is ``(n, k)`` float, ``fe_keys`` is ``(n, d)`` of string
    labels. ``ingest_report`` is populated by :func:`ingest_csv`.
    """

    outcome: np.ndarray
    treat: np.ndarray
    post: np.ndarray
    covariates: np.ndarray = None
    fe_keys: np.ndarray = None
    weights: np.ndarray = None
    unit_id: np.ndarray = None
    time_id: np.ndarray = None
    covariate_names: tuple = ()
    fe_dimension_names: tuple = ()
    outcome_name: str = "y"
    ingest_report: "IngestReport | None" = None

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float).ravel()
        n = y.shape[0]
        set_ = object.__setattr__
        set_(self, "outcome", _frozen(y))
        for name in ("treat", "post"):
            v = np.asarray(getattr(self, name)).ravel()
            if v.shape[0] != n:
                raise ValueError(f"{name} has {v.shape[0]} rows, outcome has {n}")
            if not np.all((v == 0) | (v == 1)):
                raise ValueError(f"{name} must contain only 0 and 1")
            set_(self, name, _frozen(v, np.int8))
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome must be finite")

        cov = self.covariates
        names = tuple(self.covariate_names)
        cov = np.empty((n, 0)) if cov is None else _as_2d(np.asarray(cov, dtype=float), n, len(names))
        if cov.shape[1] != len(names):
            if names:
                raise ValueError(f"{cov.shape[1]} covariate columns but {len(names)} names")
            names = tuple(f"x{j}" for j in range(cov.shape[1]))
        set_(self, "covariates", _frozen(cov))
        set_(self, "covariate_names", names)

        fe = self.fe_keys
        fe_names = tuple(self.fe_dimension_names)
        fe = np.empty((n, 0), dtype=object) if fe is None else _as_2d(np.asarray(fe).astype(str), n, len(fe_names))
        if fe.shape[1] != len(fe_names):
            if fe_names:
                raise ValueError(f"{fe.shape[1]} fixed-effect columns but {len(fe_names)} names")
            fe_names = tuple(f"fe{j}" for j in range(fe.shape[1]))
        set_(self, "fe_keys", _frozen(fe))
        set_(self, "fe_dimension_names", fe_names)

        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != n:
            raise ValueError("weights length does not match outcome")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        set_(self, "weights", _frozen(w))
        for name in ("unit_id", "time_id"):
            v = getattr(self, name)
            set_(self, name, _frozen(np.arange(n) if v is None else np.asarray(v)))

    def __len__(self):
        return self.outcome.shape[0]

    @property
    def n_obs(self) -> int:
        return len(self)

    @classmethod
    def from_observations(cls, observations: Sequence[PanelObservation], covariate_names=(),
                          fe_dimension_names=(), outcome_name="y"):
        obs = list(observations)
        k, d = len(covariate_names), len(fe_dimension_names)
        for i, o in enumerate(obs):
            if len(o.covariates) != k or len(o.fe_keys) != d:
                raise ValueError(f"observation {i} has inconsistent covariate/fixed-effect arity")
        n = len(obs)
        return cls(
            outcome=[o.outcome for o in obs],
            treat=[o.treat for o in obs],
            post=[o.post for o in obs],
            covariates=np.array([o.covariates for o in obs], dtype=float).reshape(n, k),
            fe_keys=np.array([[str(v) for v in o.fe_keys] for o in obs], dtype=object).reshape(n, d),
            weights=[o.weight for o in obs],
            unit_id=np.array([o.unit_id for o in obs], dtype=object),
            time_id=np.array([o.time_id for o in obs], dtype=object),
            covariate_names=tuple(covariate_names),
            fe_dimension_names=tuple(fe_dimension_names),
            outcome_name=outcome_name,
        )

    @property
    def observations(self) -> Iterator[PanelObservation]:
        for i in range(len(self)):
            yield PanelObservation(
                unit_id=self.unit_id[i], time_id=self.time_id[i], outcome=float(self.outcome[i]),
                treat=int(self.treat[i]), post=int(self.post[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
                fe_keys=tuple(self.fe_keys[i]), weight=float(self.weights[i]),
            )

    def cell_index(self) -> np.ndarray:
        """Cell code per row: 0=C0, 1=C1, 2=T0, 3=T1."""
        return 2 * self.treat.astype(np.intp) + self.post.astype(np.intp)

    def cell_counts(self) -> dict:
        counts = np.bincount(self.cell_index(), minlength=4)
        return {c: int(counts[2 * c[0] + c[1]]) for c in CELLS}

    def empty_cells(self) -> list:
        return [c for c, k in self.cell_counts().items() if k == 0]

    def subset(self, mask) -> "PanelDataset":
        mask = np.asarray(mask)
        return PanelDataset(
            outcome=self.outcome[mask], treat=self.treat[mask], post=self.post[mask],
            covariates=self.covariates[mask], fe_keys=self.fe_keys[mask], weights=self.weights[mask],
            unit_id=self.unit_id[mask], time_id=self.time_id[mask],
            covariate_names=self.covariate_names, fe_dimension_names=self.fe_dimension_names,
            outcome_name=self.outcome_name,
        )

    def covariate(self, name) -> np.ndarray:
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise MissingColumn(name, self.covariate_names) from None

    def fe_column(self, name) -> np.ndarray:
        try:
            return self.fe_keys[:, self.fe_dimension_names.index(name)]
        except ValueError:
            raise MissingColumn(name, self.fe_dimension_names) from None


@dataclass(frozen=True)
class DDCellMeans:
    """The saturated 2x2 summary: weighted cell means and counts."""

    y_c0: float
    y_c1: float
    y_t0: float
    y_t1: float
    n_c0: int = 0
    n_c1: int = 0
    n_t0: int = 0
    n_t1: int = 0
    transform: OutcomeTransform = OutcomeTransform.LEVEL

    @classmethod
    def from_values(cls, c0, c1, t0, t1, transform=OutcomeTransform.LEVEL):
        return cls(float(c0), float(c1), float(t0), float(t1), transform=OutcomeTransform.coerce(transform))

    def as_tuple(self):
        """Means in (C0, C1, T0, T1) order."""
        return (self.y_c0, self.y_c1, self.y_t0, self.y_t1)

    @property
    def counts(self):
        return (self.n_c0, self.n_c1, self.n_t0, self.n_t1)

    @property
    def alphas(self):
        """Saturated additive parameters (intercept, treat, post, treat x post)."""
        a1 = self.y_c0
        a2 = self.y_t0 - self.y_c0
        a3 = self.y_c1 - self.y_c0
        a4 = (self.y_t1 - self.y_t0) - (self.y_c1 - self.y_c0)
        return (a1, a2, a3, a4)

    def to_dict(self):
        return {
            "y_c0": self.y_c0, "y_c1": self.y_c1, "y_t0": self.y_t0, "y_t1": self.y_t1,
            "n_c0": self.n_c0, "n_c1": self.n_c1, "n_t0": self.n_t0, "n_t1": self.n_t1,
            "transform": self.transform.value,
        }


def cell_means(data: PanelDataset, transform=OutcomeTransform.LEVEL) -> DDCellMeans:
    transform = OutcomeTransform.coerce(transform)
    empty = data.empty_cells()
    if empty:
        raise EmptyCell(empty)
    y = transform.apply(data.outcome)
    idx = data.cell_index()
    w = data.weights
    sw = np.bincount(idx, weights=w, minlength=4)
    swy = np.bincount(idx, weights=w * y, minlength=4)
    means = swy / sw
    counts = np.bincount(idx, minlength=4)
    return DDCellMeans(*(float(m) for m in means), *(int(c) for c in counts), transform=transform)


# --------------------------------------------------------------------------
# CSV ingestion

_OPS = {
    ">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le,
    "==": operator.eq, "!=": operator.ne,
}
_FILTER_RE = re.compile(r"^\s*(.+?)\s*(>=|<=|==|!=|>|<)\s*(.+?)\s*$")


@dataclass(frozen=True)
class RowFilter:
    column: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ConfigError(f"unsupported filter operator {self.op!r}")

    @classmethod
    def parse(cls, spec) -> "RowFilter":
        if isinstance(spec, RowFilter):
            return spec
        if isinstance(spec, str):
            m = _FILTER_RE.match(spec)
            if not m:
                raise ConfigError(f"cannot parse filter {spec!r}")
            col, op, lit = m.groups()
            lit = lit.strip("'\"") if lit[:1] in "'\"" else _maybe_number(lit)
            return cls(col, op, lit)
        if isinstance(spec, dict):
            return cls(spec["column"], spec["op"], spec["value"])
        col, op, lit = spec
        return cls(col, op, lit)

    def __call__(self, raw: str, row: int):
        fn = _OPS[self.op]
        if isinstance(self.value, (int, float)) and not isinstance(self.value, bool):
            return fn(_parse_float(raw, row, self.column), self.value)
        return fn(raw, str(self.value))

    def describe(self):
        return f"{self.column} {self.op} {self.value!r}"


def _maybe_number(s):
    try:
        return float(s)
    except ValueError:
        return s


@dataclass(frozen=True)
class ColumnMapping:
    outcome_col: str
    treat_col: str
    post_col: str
    covariate_cols: tuple = ()
    fe_cols: tuple = ()
    filters: tuple = ()
    weight_col: str | None = None
    unit_col: str | None = None
    time_col: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        object.__setattr__(self, "fe_cols", tuple(self.fe_cols))
        object.__setattr__(self, "filters", tuple(RowFilter.parse(f) for f in self.filters))

    @classmethod
    def from_dict(cls, cfg: dict) -> "ColumnMapping":
        unknown = set(cfg) - {"outcome", "treat", "post", "covariates", "fixed_effects",
                              "filters", "weight", "unit", "time"}
        if unknown:
            raise ConfigError(f"unknown mapping key(s): {sorted(unknown)}")
        try:
            return cls(
                outcome_col=cfg["outcome"], treat_col=cfg["treat"], post_col=cfg["post"],
                covariate_cols=cfg.get("covariates", ()), fe_cols=cfg.get("fixed_effects", ()),
                filters=cfg.get("filters", ()), weight_col=cfg.get("weight"),
                unit_col=cfg.get("unit"), time_col=cfg.get("time"),
            )
        except KeyError as e:
            raise ConfigError(f"mapping is missing required key {e.args[0]!r}") from None

    @classmethod
    def from_json(cls, path) -> "ColumnMapping":
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read mapping {path}: {e}") from None
        return cls.from_dict(cfg)

    def to_dict(self):
        return {
            "outcome": self.outcome_col, "treat": self.treat_col, "post": self.post_col,
            "covariates": list(self.covariate_cols), "fixed_effects": list(self.fe_cols),
            "filters": [[f.column, f.op, f.value] for f in self.filters],
            "weight": self.weight_col, "unit": self.unit_col, "time": self.time_col,
        }

    def referenced_columns(self):
        cols = [self.outcome_col, self.treat_col, self.post_col, *self.covariate_cols, *self.fe_cols]
        cols += [f.column for f in self.filters]
        cols += [c for c in (self.weight_col, self.unit_col, self.time_col) if c]
        return list(dict.fromkeys(cols))


@dataclass(frozen=True)
class IngestReport:
    path: str
    rows_read: int
    rows_kept: int
    dropped_by_filter: dict = field(default_factory=dict)
    empty_cells: tuple = ()


def _parse_float(raw, row, column):
    if raw is None or raw.strip() == "":
        raise ParseFailure(row, column, raw, "empty field")
    try:
        v = float(raw)
    except ValueError:
        raise ParseFailure(row, column, raw) from None
    if not math.isfinite(v):
        raise ParseFailure(row, column, raw, "not finite")
    return v


def _parse_binary(raw, row, column):
    v = _parse_float(raw, row, column)
    if v not in (0.0, 1.0):
        raise ParseFailure(row, column, raw, "expected 0 or 1")
    return int(v)


def _parse_label(raw, row, column):
    if raw is None or raw.strip() == "":
        raise ParseFailure(row, column, raw, "empty field")
    return raw


def ingest_csv(path, mapping: ColumnMapping) -> PanelDataset:
    """Read a comma-separated file into a :class:`PanelDataset`.

    Row numbers in errors are 1-based data rows (the header is row 0).
    Filters are evaluated in declaration order; ``dropped_by_filter`` counts
    rows removed by each filter among rows that survived the earlier ones.
    An empty (treat, post) cell is reported with a warning, not raised.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseFailure(0, None, "", "missing header row") from None
        header = [h.strip() for h in header]
        for col in mapping.referenced_columns():
            if col not in header:
                raise MissingColumn(col, header)
        pos = {h: i for i, h in enumerate(header)}

        dropped = {f.describe(): 0 for f in mapping.filters}
        rows_read = 0
        y, d, t, w, units, times = [], [], [], [], [], []
        cov, fe = [], []
        for rownum, rec in enumerate(reader, start=1):
            if not rec:
                continue
            rows_read += 1
            if len(rec) != len(header):
                raise ParseFailure(rownum, None, ",".join(rec), f"expected {len(header)} fields, got {len(rec)}")
            keep = True
            for f in mapping.filters:
                if not f(rec[pos[f.column]], rownum):
                    dropped[f.describe()] += 1
                    keep = False
                    break
            if not keep:
                continue
            y.append(_parse_float(rec[pos[mapping.outcome_col]], rownum, mapping.outcome_col))
            d.append(_parse_binary(rec[pos[mapping.treat_col]], rownum, mapping.treat_col))
            t.append(_parse_binary(rec[pos[mapping.post_col]], rownum, mapping.post_col))
            cov.append([_parse_float(rec[pos[c]], rownum, c) for c in mapping.covariate_cols])
            fe.append([_parse_label(rec[pos[c]], rownum, c) for c in mapping.fe_cols])
            if mapping.weight_col:
                wv = _parse_float(rec[pos[mapping.weight_col]], rownum, mapping.weight_col)
                if wv <= 0:
                    raise ParseFailure(rownum, mapping.weight_col, rec[pos[mapping.weight_col]], "weight must be positive")
                w.append(wv)
            units.append(rec[pos[mapping.unit_col]] if mapping.unit_col else rownum)
            times.append(rec[pos[mapping.time_col]] if mapping.time_col else t[-1])

    n = len(y)
    data = PanelDataset(
        outcome=np.array(y, dtype=float), treat=np.array(d, dtype=np.int8), post=np.array(t, dtype=np.int8),
        covariates=np.array(cov, dtype=float).reshape(n, len(mapping.covariate_cols)),
        fe_keys=np.array(fe, dtype=object).reshape(n, len(mapping.fe_cols)),
        weights=np.array(w, dtype=float) if mapping.weight_col else None,
        unit_id=np.array(units, dtype=object), time_id=np.array(times, dtype=object),
        covariate_names=mapping.covariate_cols, fe_dimension_names=mapping.fe_cols,
        outcome_name=mapping.outcome_col,
    )
    empty = tuple(data.empty_cells())
    if empty:
        warnings.warn(str(EmptyCell(empty)), stacklevel=2)
    report = IngestReport(str(path), rows_read, n, dropped, empty)
    object.__setattr__(data, "ingest_report", report)
    return data

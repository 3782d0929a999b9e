"""Monte Carlo engine for the additive 2x2 DGP and one-dimensional parameter sweeps.

Every run draws ``Y = cell mean + Normal(0, sigma)`` with exact cell sizes
and fits the saturated level and log DD. Run ``i`` is seeded from
``SeedSequence([base_seed, i])`` alone, so any run can be reproduced in
isolation and aggregate output does not depend on how runs are scheduled
across threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import DDCellMeans, PanelDataset, cell_means
from .diagnostics import AXES, crossing_point
from .estimators import dd_from_cells, estimate_dd
from .exceptions import ConfigError, NoCrossing, NonPositiveOutcome

_BOOTSTRAP_STREAM = 0xB0075
STATS = ("alpha4", "beta4", "expb4m1")


@dataclass(frozen=True)
class SimConfig:
    cell_means: tuple
    sigma: float = 0.2
    n_total: int = 40_000
    p_treat: float = 0.5
    p_post: float = 0.5
    runs: int = 10_000
    base_seed: int = 0
    bootstrap_reps: int = 1_000
    name: str = ""

    def __post_init__(self):
        cm = tuple(float(v) for v in self.cell_means)
        if len(cm) != 4 or not all(math.isfinite(v) for v in cm):
            raise ConfigError("cell_means needs four finite values (C0, C1, T0, T1)")
        object.__setattr__(self, "cell_means", cm)
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not (0 < self.p_treat < 1 and 0 < self.p_post < 1):
            raise ConfigError("p_treat and p_post must lie strictly between 0 and 1")
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigError(f"runs must be a positive integer, got {self.runs!r}")
        if int(self.n_total) != self.n_total or self.n_total < 4:
            raise ConfigError("n_total must be an integer of at least 4")
        if int(self.base_seed) != self.base_seed or self.base_seed < 0:
            raise ConfigError("base_seed must be a non-negative integer")
        if int(self.bootstrap_reps) != self.bootstrap_reps or self.bootstrap_reps < 2:
            raise ConfigError("bootstrap_reps must be an integer of at least 2")
        self.cell_sizes()

    def cell_sizes(self) -> tuple:
        """Observations per cell in (C0, C1, T0, T1) order; must be whole numbers."""
        n, pt, pp = self.n_total, self.p_treat, self.p_post
        raw = (n * (1 - pt) * (1 - pp), n * (1 - pt) * pp, n * pt * (1 - pp), n * pt * pp)
        sizes = tuple(int(round(v)) for v in raw)
        if any(abs(v - s) > 1e-6 for v, s in zip(raw, sizes)) or min(sizes) < 1:
            raise ConfigError(f"n_total * proportions gives non-integer or empty cells: {raw}")
        return sizes

    @property
    def cells(self) -> DDCellMeans:
        return DDCellMeans.from_values(*self.cell_means)

    @classmethod
    def from_dict(cls, cfg: dict) -> "SimConfig":
        cfg = dict(cfg)
        cm = cfg.pop("cell_means", None)
        if isinstance(cm, dict):
            try:
                cm = (cm["y_c0"], cm["y_c1"], cm["y_t0"], cm["y_t1"])
            except KeyError as e:
                raise ConfigError(f"cell_means is missing {e.args[0]!r}") from None
        if cm is None:
            raise ConfigError("config needs cell_means")
        known = {f for f in cls.__dataclass_fields__} - {"cell_means"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown simulation config key(s): {sorted(unknown)}")
        try:
            return cls(cell_means=tuple(cm), **cfg)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self):
        d = asdict(self)
        d["cell_means"] = list(self.cell_means)
        return d


def _rng(base_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(run_index)]))


def _draw(config: SimConfig, run_index: int) -> np.ndarray:
    sizes = config.cell_sizes()
    mu = np.repeat(np.asarray(config.cell_means), sizes)
    return mu + config.sigma * _rng(config.base_seed, run_index).standard_normal(mu.shape[0])


def generate_run(config: SimConfig, run_index: int) -> PanelDataset:
    """One simulated sample, rows ordered C0, C1, T0, T1."""
    sizes = config.cell_sizes()
    y = _draw(config, run_index)
    treat = np.repeat([0, 0, 1, 1], sizes)
    post = np.repeat([0, 1, 0, 1], sizes)
    return PanelDataset(outcome=y, treat=treat, post=post, time_id=post)


@dataclass(frozen=True)
class RunResult:
    alpha4_hat: float
    beta4_hat: float
    expb4m1_hat: float
    seed: tuple

    @classmethod
    def from_estimates(cls, alpha4, beta4, seed):
        return cls(float(alpha4), float(beta4), math.exp(beta4) - 1.0, seed)


def _saturated_run(config: SimConfig, run_index: int):
    """Level/log DD and level cell means of one run via the saturated cell-mean identity."""
    y = _draw(config, run_index)
    bad = int(np.count_nonzero(~(y > 0)))
    if bad:
        raise NonPositiveOutcome(bad, f"run {run_index}, seed ({config.base_seed}, {run_index})")
    sizes = np.asarray(config.cell_sizes())
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    m = np.add.reduceat(y, starts) / sizes
    lm = np.add.reduceat(np.log(y), starts) / sizes
    a4 = (m[3] - m[2]) - (m[1] - m[0])
    b4 = (lm[3] - lm[2]) - (lm[1] - lm[0])
    return a4, b4, m


def run_single(config: SimConfig, run_index: int, method: str = "cells") -> RunResult:
    """One run. ``method="ols"`` fits both regressions through the full OLS path."""
    if method == "cells":
        a4, b4, _ = _saturated_run(config, run_index)
    elif method == "ols":
        data = generate_run(config, run_index)
        if not np.all(data.outcome > 0):
            raise NonPositiveOutcome(int(np.count_nonzero(data.outcome <= 0)),
                                     f"run {run_index}, seed ({config.base_seed}, {run_index})")
        a4 = estimate_dd(data, "level").dd_estimate
        b4 = estimate_dd(data, "log").dd_estimate
    else:
        raise ValueError("method must be 'cells' or 'ols'")
    return RunResult.from_estimates(a4, b4, (config.base_seed, run_index))


def bootstrap_se(values: np.ndarray, reps: int, seed: int) -> np.ndarray:
    """Standard deviation of the mean over ``reps`` resamples (with replacement) of the rows.

    ``values`` is ``(runs, m)``; all columns share the same resample indices.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    r = values.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _BOOTSTRAP_STREAM]))
    means = np.empty((reps, values.shape[1]))
    chunk = max(1, min(reps, 2_000_000 // max(r, 1)))
    for start in range(0, reps, chunk):
        stop = min(reps, start + chunk)
        idx = rng.integers(0, r, size=(stop - start, r))
        means[start:stop] = values[idx].mean(axis=1)
    se = means.std(axis=0, ddof=1)
    # constant columns (e.g. a single run) resample to the same mean every time
    se[np.ptp(values, axis=0) == 0] = 0.0
    return se


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    config: SimConfig
    alpha4: np.ndarray = field(repr=False)
    beta4: np.ndarray = field(repr=False)
    expb4m1: np.ndarray = field(repr=False)
    mean: dict = field(default_factory=dict)
    bootstrap_se: dict = field(default_factory=dict)
    mean_cells: tuple = ()

    @property
    def target_ratio_minus_one(self) -> float:
        return dd_from_cells(self.config.cells).ratio_minus_one

    @property
    def target_level_dd(self) -> float:
        return dd_from_cells(self.config.cells).level_dd

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "mean": dict(self.mean),
            "bootstrap_se": dict(self.bootstrap_se),
            "mean_cells": list(self.mean_cells),
            "target_level_dd": self.target_level_dd,
            "target_ratio_minus_one": self.target_ratio_minus_one,
        }


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get("DD_SIGNAL_THREADS", 1)
    try:
        threads = int(threads)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid thread count {threads!r}") from None
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return threads


def run_monte_carlo(config: SimConfig, threads=None, method: str = "cells") -> MonteCarloResult:
    """Fit level and log DD on every run and aggregate with bootstrap SEs.

    Per-run results are stored by run index before any reduction, so the
    output is bit-identical for every thread count.
    """
    threads = resolve_threads(threads)
    if method not in ("cells", "ols"):
        raise ValueError("method must be 'cells' or 'ols'")
    R = int(config.runs)
    a4 = np.empty(R)
    b4 = np.empty(R)
    cells = np.empty((R, 4))

    def work(block):
        for i in block:
            if method == "cells":
                a, b, m = _saturated_run(config, i)
            else:
                rr = run_single(config, i, method)
                a, b = rr.alpha4_hat, rr.beta4_hat
                m = cell_means(generate_run(config, i)).as_tuple()
            a4[i], b4[i], cells[i] = a, b, m

    blocks = [range(s, min(R, s + 64)) for s in range(0, R, 64)]
    if threads == 1 or len(blocks) == 1:
        for blk in blocks:
            work(blk)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, blocks))

    e = np.array([math.exp(b) - 1.0 for b in b4])
    stacked = np.column_stack([a4, b4, e])
    se = bootstrap_se(stacked, config.bootstrap_reps, config.base_seed)
    mean = stacked.mean(axis=0)
    return MonteCarloResult(
        config=config, alpha4=a4, beta4=b4, expb4m1=e,
        mean={k: float(v) for k, v in zip(STATS, mean)},
        bootstrap_se={k: float(v) for k, v in zip(STATS, se)},
        mean_cells=tuple(float(v) for v in cells.mean(axis=0)),
    )


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepConfig:
    """A grid over one axis with the other cell parameters held fixed.

    ``baseline_gap_ratio`` axis needs ``y_c0``, ``delta_c`` and ``delta_t``
    (or ``level_dd``); ``time_effect`` axis needs ``y_c0``, ``y_t0`` and
    ``level_dd``. ``template`` supplies sigma, sample size, runs and seeds;
    every grid point reuses the template seed (common random numbers).
    """

    axis: str
    grid: tuple
    fixed: dict
    template: SimConfig
    name: str = ""

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}")
        g = tuple(float(v) for v in self.grid)
        if len(g) < 2:
            raise ConfigError("grid needs at least two points")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        need = {"baseline_gap_ratio": ("y_c0", "delta_c"), "time_effect": ("y_c0", "y_t0", "level_dd")}[self.axis]
        missing = [k for k in need if k not in self.fixed]
        if self.axis == "baseline_gap_ratio" and "delta_t" not in self.fixed and "level_dd" not in self.fixed:
            missing.append("delta_t")
        if missing:
            raise ConfigError(f"sweep over {self.axis} needs fixed {missing}")
        for v in g:
            self.cells_at(v)

    def cells_at(self, value: float) -> tuple:
        f = self.fixed
        c0 = float(f["y_c0"])
        if self.axis == "baseline_gap_ratio":
            dc = float(f["delta_c"])
            dt = float(f["delta_t"]) if "delta_t" in f else dc + float(f["level_dd"])
            t0 = c0 * (1.0 + value)
            cells = (c0, c0 + dc, t0, t0 + dt)
        else:
            t0, a4 = float(f["y_t0"]), float(f["level_dd"])
            cells = (c0, c0 + value, t0, t0 + value + a4)
        if min(cells) <= 0:
            raise ConfigError(f"grid value {value} implies a non-positive cell mean {cells}")
        return cells

    def config_at(self, value: float) -> SimConfig:
        return replace(self.template, cell_means=self.cells_at(value), name=f"{self.name}@{value:g}")

    def analytic_crossing(self):
        """Grid-axis value where the population log DD is zero, or None."""
        f = dict(self.fixed)
        if self.axis == "baseline_gap_ratio":
            f.setdefault("level_dd", f.get("delta_t", 0.0) - f["delta_c"])
            f.pop("delta_t", None)
        try:
            return crossing_point(f, self.axis)
        except NoCrossing:
            return None

    @classmethod
    def from_dict(cls, cfg: dict) -> "SweepConfig":
        cfg = dict(cfg)
        try:
            axis = cfg.pop("axis")
            grid = cfg.pop("grid")
            fixed = cfg.pop("fixed")
        except KeyError as e:
            raise ConfigError(f"sweep config is missing {e.args[0]!r}") from None
        if isinstance(grid, dict):
            try:
                start, stop, step = float(grid["start"]), float(grid["stop"]), float(grid["step"])
            except KeyError as e:
                raise ConfigError(f"grid is missing {e.args[0]!r}") from None
            if step <= 0:
                raise ConfigError("grid step must be positive")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            grid = [round(start + i * step, 12) for i in range(count)]
        name = cfg.pop("name", "")
        template = SimConfig.from_dict({"cell_means": (1.0, 1.0, 1.0, 1.0), **cfg})
        return cls(axis=axis, grid=tuple(grid), fixed=dict(fixed), template=template, name=name)

    def to_dict(self):
        t = self.template.to_dict()
        t.pop("cell_means")
        t.pop("name")
        return {"name": self.name, "axis": self.axis, "grid": list(self.grid), "fixed": dict(self.fixed), **t}


@dataclass(frozen=True, eq=False)
class SweepResult:
    config: SweepConfig
    points: tuple

    @property
    def log_dd_means(self) -> np.ndarray:
        return np.array([r.mean["beta4"] for r in self.points])

    @property
    def crossings(self) -> list:
        """Interpolated axis values wherever the mean log DD changes sign between adjacent points."""
        x = np.asarray(self.config.grid)
        b = self.log_dd_means
        out = []
        for i in range(len(x) - 1):
            if b[i] == 0:
                out.append(float(x[i]))
            elif b[i] * b[i + 1] < 0:
                out.append(float(x[i] - b[i] * (x[i + 1] - x[i]) / (b[i + 1] - b[i])))
        if b[-1] == 0:
            out.append(float(x[-1]))
        return out

    @property
    def crossing(self):
        c = self.crossings
        return c[0] if c else None

    def rows(self) -> list[dict]:
        return [
            {
                "axis_value": v,
                "level_dd_mean": r.mean["alpha4"],
                "level_dd_se": r.bootstrap_se["alpha4"],
                "log_dd_mean": r.mean["beta4"],
                "log_dd_se": r.bootstrap_se["beta4"],
                "expb4m1_mean": r.mean["expb4m1"],
            }
            for v, r in zip(self.config.grid, self.points)
        ]

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "rows": self.rows(),
            "crossings": self.crossings,
            "analytic_crossing": self.config.analytic_crossing(),
        }


def run_sweep(config: SweepConfig, threads=None, method: str = "cells") -> SweepResult:
    points = tuple(run_monte_carlo(config.config_at(v), threads=threads, method=method) for v in config.grid)
    return SweepResult(config=config, points=points)


# --------------------------------------------------------------------------
# built-in presets

TABLE1 = {
    "table1-col1": (10.0, 12.0, 12.0, 14.4),
    "table1-col2": (10.0, 15.0, 12.0, 18.0),
    "table1-col3": (20.0, 22.0, 24.0, 26.4),
    "table1-col4": (10.0, 12.0, 20.0, 23.0),
    "table1-col5": (5.0, 6.0, 10.0, 11.8),
}
# exact thirds in column 2 so that g_T = 1.3
TABLEC1 = {
    "tablec1-col1": (10.0, 12.0, 5.0, 7.0),
    "tablec1-col2": (10.0, 12.0, 20.0 / 3.0, 20.0 / 3.0 + 2.0),
    "tablec1-col3": (20.0, 24.0, 10.0, 14.0),
    "tablec1-col4": (10.0, 12.0, 20.0, 22.0),
    "tablec1-col5": (20.0, 28.0, 40.0, 48.0),
}
_GAP_GRID = tuple(round(0.1 + 0.05 * i, 10) for i in range(19))
_TIME_GRID = tuple(float(v) for v in range(10, 95, 5))
SWEEP_PRESETS = {
    "fig1-left": ("baseline_gap_ratio", _GAP_GRID, {"y_c0": 50.0, "delta_t": 30.0, "delta_c": 20.0}),
    "fig1-right": ("time_effect", _TIME_GRID, {"y_c0": 50.0, "y_t0": 60.0, "level_dd": 10.0}),
    "fig2-left": ("baseline_gap_ratio", _GAP_GRID, {"y_c0": 50.0, "delta_t": 10.0, "delta_c": 0.0}),
    "fig2-right": ("time_effect", _TIME_GRID, {"y_c0": 50.0, "y_t0": 50.0, "level_dd": 10.0}),
}
TABLE_PRESETS = {**TABLE1, **TABLEC1}


def table_preset(name: str, **overrides) -> SimConfig:
    try:
        cells = TABLE_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown table preset {name!r}; choose from {sorted(TABLE_PRESETS)}") from None
    return SimConfig(cell_means=cells, name=name, **overrides)


def sweep_preset(name: str, **overrides) -> SweepConfig:
    try:
        axis, grid, fixed = SWEEP_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown sweep preset {name!r}; choose from {sorted(SWEEP_PRESETS)}") from None
    template = SimConfig(cell_means=(1.0, 1.0, 1.0, 1.0), **overrides)
    return SweepConfig(axis=axis, grid=grid, fixed=dict(fixed), template=template, name=name)

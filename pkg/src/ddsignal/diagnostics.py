"""Predicting when level and log DD estimates disagree in sign.

With positive cell means write kappa = time_effect * baseline_gap_ratio
(= alpha3 * alpha2 / alpha1). The log DD is zero exactly when
alpha4 == kappa, and the two estimates have opposite signs exactly when
alpha4 lies strictly between 0 and kappa. Written with absolute values this
is ``0 < |alpha4| < |kappa|`` *together with* sign(alpha4) == sign(kappa);
the absolute-value inequality alone also fires when alpha4 and kappa have
opposite signs, where both estimates in fact agree.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .data import DDCellMeans, OutcomeTransform
from .exceptions import MismatchedSamples, NoCrossing

DEFAULT_TOL = 1e-9
_EPS = 1e-300


class Prediction(str, enum.Enum):
    SWITCH = "switch"
    NO_SWITCH = "no_switch"
    BOUNDARY_ZERO_LOG = "boundary_zero_log"
    DEGENERATE = "degenerate"


class Observed(str, enum.Enum):
    CONCORDANT = "concordant"
    DISCORDANT = "discordant"
    LOG_ZERO = "log_zero"


@dataclass(frozen=True)
class SignSwitchReport:
    delta_T: float
    delta_C: float
    baseline_gap_ratio: float
    time_effect: float
    level_dd: float
    threshold: float
    margin: float
    prediction: Prediction
    signed_threshold: float = float("nan")
    observed: Observed | None = None
    reason: str = ""
    y_c0: float = float("nan")
    y_t0: float = float("nan")
    level_estimate: float | None = None
    log_estimate: float | None = None

    def to_dict(self):
        out = dict(self.__dict__)
        out["prediction"] = self.prediction.value
        out["observed"] = self.observed.value if self.observed else None
        return out

    def render(self) -> str:
        """Human-readable verdict with both forms of the condition."""
        a4, thr = self.level_dd, self.threshold
        head = {
            Prediction.SWITCH: f"SWITCH PREDICTED: |α₄|={_g(abs(a4))} < threshold {_g(thr)}",
            Prediction.NO_SWITCH: f"NO SWITCH: |α₄|={_g(abs(a4))} vs threshold {_g(thr)}",
            Prediction.BOUNDARY_ZERO_LOG: f"BOUNDARY: |α₄|={_g(abs(a4))} = threshold {_g(thr)}; log DD is zero",
            Prediction.DEGENERATE: f"DEGENERATE: no sign switch possible ({self.reason})",
        }[self.prediction]
        lines = [
            head,
            f"  margin (threshold - |α₄|) = {_g(self.margin)}",
            "  cell-mean form: 0 < |Δ_T - Δ_C| < |Δ_C (E[Y_T0] - E[Y_C0]) / E[Y_C0]|",
            f"    |{_g(self.delta_T)} - {_g(self.delta_C)}| = {_g(abs(a4))}  vs  "
            f"|{_g(self.delta_C)} * ({_g(self.y_t0)} - {_g(self.y_c0)}) / {_g(self.y_c0)}| = {_g(thr)}",
            "  parameter form: |α₄| < |α₃ α₂ / α₁|",
            f"    |{_g(a4)}| vs |{_g(self.time_effect)} * {_g(self.baseline_gap_ratio)}| = {_g(thr)}",
            f"  sign condition: sign(α₄) = {_sign_str(a4)}, sign(α₃ α₂ / α₁) = {_sign_str(self.signed_threshold)}",
        ]
        if self.observed is not None:
            lines.append(f"  observed: {self.observed.value} (level {_g(self.level_estimate)}, "
                         f"log {_g(self.log_estimate)})")
        return "\n".join(lines)


def _g(x):
    if x is None:
        return "nan"
    return f"{x:.6g}"


def _sign_str(x):
    if not np.isfinite(x) or x == 0:
        return "0"
    return "+" if x > 0 else "-"


def _classify(a4, kappa, tol):
    thr = abs(kappa)
    band = tol * max(thr, _EPS)
    if abs(a4 - kappa) <= band:
        return Prediction.BOUNDARY_ZERO_LOG
    if a4 != 0 and math.copysign(1, a4) == math.copysign(1, kappa) and abs(a4) < thr:
        return Prediction.SWITCH
    return Prediction.NO_SWITCH


def diagnose_from_cells(cells: DDCellMeans, tol: float = DEFAULT_TOL) -> SignSwitchReport:
    """Sign-switch prediction from raw (untransformed) cell means."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if cells.transform is not OutcomeTransform.LEVEL:
        raise ValueError("diagnose_from_cells expects untransformed cell means")
    c0, c1, t0, t1 = cells.as_tuple()
    delta_t, delta_c = t1 - t0, c1 - c0
    a4 = delta_t - delta_c
    common = dict(delta_T=delta_t, delta_C=delta_c, time_effect=delta_c, level_dd=a4, y_c0=c0, y_t0=t0)
    if c0 <= 0 or t0 <= 0:
        return SignSwitchReport(baseline_gap_ratio=float("nan"), threshold=float("nan"), margin=float("nan"),
                                prediction=Prediction.DEGENERATE,
                                reason="non-positive pre-period mean; log DD undefined", **common)
    ratio = (t0 - c0) / c0
    kappa = delta_c * ratio
    thr = abs(kappa)
    margin = thr - abs(a4)
    if delta_c == 0 or ratio == 0:
        reason = "zero aggregate time effect" if delta_c == 0 else "no baseline outcome difference"
        return SignSwitchReport(baseline_gap_ratio=ratio, threshold=thr, margin=margin,
                                prediction=Prediction.DEGENERATE, signed_threshold=kappa, reason=reason, **common)
    return SignSwitchReport(baseline_gap_ratio=ratio, threshold=thr, margin=margin,
                            prediction=_classify(a4, kappa, tol), signed_threshold=kappa, **common)


def observed_relation(level_dd: float, log_dd: float, log_se: float = 0.0, tol: float = DEFAULT_TOL) -> Observed:
    """Compare signs of fitted level and log DD.

    The log estimate counts as zero when ``|log_dd| <= tol * max(log_se, 1)``;
    log DD is a unitless log-ratio, so 1 is its natural absolute scale.
    """
    if abs(log_dd) <= tol * max(log_se if np.isfinite(log_se) else 0.0, 1.0):
        return Observed.LOG_ZERO
    if np.sign(level_dd) == np.sign(log_dd):
        return Observed.CONCORDANT
    return Observed.DISCORDANT


def diagnose_from_fits(level_fit, log_fit, tol: float = DEFAULT_TOL) -> SignSwitchReport:
    """Prediction from the level fit's sample cell means, plus the observed sign relation."""
    if level_fit.n_obs != log_fit.n_obs:
        raise MismatchedSamples(f"level fit has {level_fit.n_obs} rows, log fit has {log_fit.n_obs}")
    if level_fit.transform is not OutcomeTransform.LEVEL or log_fit.transform is not OutcomeTransform.LOG:
        raise ValueError("expected a level fit and a log fit")
    if level_fit.cells is None:
        raise MismatchedSamples("level fit carries no cell means")
    rep = diagnose_from_cells(level_fit.cells, tol)
    obs = observed_relation(level_fit.dd_estimate, log_fit.dd_estimate, log_fit.dd_se, tol)
    return SignSwitchReport(**{**rep.__dict__, "observed": obs, "level_estimate": level_fit.dd_estimate,
                               "log_estimate": log_fit.dd_estimate})


AXES = ("baseline_gap_ratio", "time_effect")


def resolve_fixed(fixed: dict) -> dict:
    """Fill in derived quantities from a partial cell specification.

    Recognised keys: y_c0, y_t0, delta_t, delta_c, level_dd, time_effect,
    baseline_gap_ratio.
    """
    f = {k: float(v) for k, v in fixed.items() if v is not None}
    if "time_effect" not in f and "delta_c" in f:
        f["time_effect"] = f["delta_c"]
    if "delta_c" not in f and "time_effect" in f:
        f["delta_c"] = f["time_effect"]
    if "level_dd" not in f and {"delta_t", "delta_c"} <= f.keys():
        f["level_dd"] = f["delta_t"] - f["delta_c"]
    if "baseline_gap_ratio" not in f and {"y_c0", "y_t0"} <= f.keys():
        if f["y_c0"] == 0:
            raise NoCrossing("y_c0 is zero; baseline gap ratio undefined")
        f["baseline_gap_ratio"] = (f["y_t0"] - f["y_c0"]) / f["y_c0"]
    return f


def crossing_point(fixed: dict, axis: str) -> float:
    """Value of the swept quantity at which the log DD is exactly zero.

    Sweeping the baseline gap ratio the zero is at level_dd / time_effect;
    sweeping the time effect it is at level_dd / baseline_gap_ratio.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    f = resolve_fixed(fixed)
    if "level_dd" not in f:
        raise NoCrossing("level DD is not pinned by the fixed parameters")
    a4 = f["level_dd"]
    other = "time_effect" if axis == "baseline_gap_ratio" else "baseline_gap_ratio"
    if other not in f:
        raise NoCrossing(f"{other} is not pinned by the fixed parameters")
    if a4 == 0:
        return 0.0
    if f[other] == 0:
        raise NoCrossing(f"{other} is zero; the log DD never changes sign")
    return a4 / f[other]

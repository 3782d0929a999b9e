"""Input validation shared by the estimators."""

import numpy as np

from .exceptions import DegenerateWeights, DimensionMismatch


def check_design(X, y):
    """Return ``(X, y)`` as float arrays of shape ``(n, k)`` and ``(n,)``, all finite."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch("regressors must be a 2-d array")
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DimensionMismatch("response must be 1-d")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"regressors have {X.shape[0]} rows, response has {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("regressors and response must be finite")
    return X, y


def check_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n:
        raise DimensionMismatch(f"{w.shape[0]} weights for {n} rows")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DegenerateWeights("weights must be finite and strictly positive")
    return w


def check_fixed_effects(codes, n):
    codes = np.asarray(codes)
    if codes.ndim != 1 or codes.shape[0] != n:
        raise DimensionMismatch(f"fixed-effect dimension must have {n} entries")
    if codes.dtype.kind not in "iu" or (n and codes.min() < 0):
        raise ValueError("fixed-effect dimensions must be non-negative integer codes; use encode_groups")
    return codes.astype(np.intp)

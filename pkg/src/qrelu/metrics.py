"""Evaluation metrics: oracle MSE, robust discrepancy, coverage, crossings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    """Per-quantile-level evaluation summary against the oracle."""

    mse: float
    delta_n2: float
    coverage: float
    crossings: int
    n_test: int


def _aligned(pred, truth, names=("pred", "truth")):
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
    if a.size == 0:
        raise ValueError("empty inputs")
    return a, b


def d2(t):
    """Robust pointwise error min(|t|, t^2): quadratic near zero, absolute in the tails."""
    arr = np.asarray(t, dtype=np.float64)
    out = np.minimum(np.abs(arr), arr * arr)
    return float(out) if out.ndim == 0 else out


def delta_n2(pred, truth) -> float:
    """Mean of d2 over pointwise differences (flattened over components)."""
    a, b = _aligned(pred, truth)
    return float(np.mean(d2(a - b)))


def quantile_mse(pred, truth) -> float:
    """Mean squared pointwise difference; multivariate arrays average over n * p."""
    a, b = _aligned(pred, truth)
    diff = a - b
    return float(np.mean(diff * diff))


def coverage(tau: float, y_test, pred) -> float:
    """Empirical fraction of responses at or below the prediction.

    Calibrated tau-quantile predictions make this approach tau; the level
    is validated here and used by callers as the comparison target.
    """
    if not 0.0 < float(tau) < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    y, p = _aligned(y_test, pred, names=("y_test", "pred"))
    return float(np.mean(y <= p))


def crossing_count(preds, taus) -> int:
    """Number of adjacent-level order violations preds[i, j] > preds[i, j+1]."""
    arr = np.asarray(preds, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"preds must be 2-D (points, levels), got ndim={arr.ndim}")
    n_levels = len(list(taus))
    if arr.shape[1] != n_levels:
        raise ValueError(f"preds has {arr.shape[1]} columns but {n_levels} levels were given")
    if arr.shape[1] < 2:
        return 0
    return int(np.count_nonzero(arr[:, :-1] > arr[:, 1:]))

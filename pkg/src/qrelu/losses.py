"""Training objectives and their gradients with respect to network outputs.

Every loss returns ``(loss, dloss_doutput)`` where the loss is averaged
over the batch, so gradients carry the 1/batch factor and validate against
central finite differences.  All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .nn import ShapeError, as_matrix

ZERO_NORM_TOL = 1e-12


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return tau


class QuantileLevels:
    """Strictly increasing quantile levels, each in (0, 1)."""

    def __init__(self, taus):
        arr = np.asarray(list(taus), dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("taus must be a nonempty 1-D sequence")
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise ValueError(f"every tau must lie in (0, 1), got {arr.tolist()}")
        if np.any(np.diff(arr) <= 0.0):
            raise ValueError(f"taus must be strictly increasing, got {arr.tolist()}")
        self.taus = arr

    @classmethod
    def coerce(cls, obj) -> "QuantileLevels":
        return obj if isinstance(obj, cls) else cls(obj)

    def __len__(self):
        return self.taus.size

    def __iter__(self):
        return iter(self.taus)

    def __getitem__(self, i):
        return float(self.taus[i])

    def __repr__(self):
        return f"QuantileLevels({self.taus.tolist()})"


def pinball(tau: float, residual):
    """Tilted absolute loss max(tau*r, (tau-1)*r); scalar in, scalar out."""
    tau = _check_tau(tau)
    r = np.asarray(residual, dtype=np.float64)
    out = np.maximum(tau * r, (tau - 1.0) * r)
    return float(out) if out.ndim == 0 else out


def pinball_grad(tau: float, y, f):
    """d pinball(tau, y - f) / d f.

    Returns (1 - tau) where y < f and -tau where y > f; ties y == f take
    the (1 - tau) branch.
    """
    tau = _check_tau(tau)
    y_arr = np.asarray(y, dtype=np.float64)
    f_arr = np.asarray(f, dtype=np.float64)
    out = np.where(y_arr > f_arr, -tau, 1.0 - tau)
    return float(out) if out.ndim == 0 else out


def softplus(t):
    """log(1 + e^t), overflow-safe: max(t, 0) + log1p(e^-|t|)."""
    t = np.asarray(t, dtype=np.float64)
    out = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    return float(out) if out.ndim == 0 else out


def logistic(t):
    """Derivative of softplus, computed without overflow."""
    arr = np.asarray(t, dtype=np.float64)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    pos = flat >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    et = np.exp(flat[~pos])
    out[~pos] = et / (1.0 + et)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def composite_predict(h) -> np.ndarray:
    """Monotone quantile reconstruction from raw heads.

    Column 0 is the base level; each later column adds softplus(h[:, j]),
    so rows are strictly increasing and predicted quantiles cannot cross.
    """
    h = as_matrix(h, "h")
    inc = np.empty_like(h)
    inc[:, 0] = h[:, 0]
    if h.shape[1] > 1:
        inc[:, 1:] = softplus(h[:, 1:])
    return np.cumsum(inc, axis=1)


def composite_loss(y, h, taus):
    """Joint pinball loss over all levels of a composite multi-quantile model.

    ``y`` is (batch, 1), ``h`` is (batch, m+1) raw heads, one column per
    level in ``taus``.  Level j is scored with its own pinball slope
    against the reconstructed quantile q_j.
    """
    levels = QuantileLevels.coerce(taus)
    y = as_matrix(y, "y")
    h = as_matrix(h, "h")
    if y.shape[1] != 1:
        raise ShapeError(f"composite loss expects y of shape (batch, 1), got {y.shape}")
    if h.shape[1] != len(levels):
        raise ShapeError(
            f"h has {h.shape[1]} columns but {len(levels)} quantile levels were given"
        )
    if y.shape[0] != h.shape[0]:
        raise ShapeError(f"batch mismatch: y {y.shape[0]} vs h {h.shape[0]}")
    batch = y.shape[0]
    t = levels.taus
    q = composite_predict(h)
    resid = y - q  # (batch, m+1)
    loss = float(np.maximum(t * resid, (t - 1.0) * resid).sum() / batch)

    gq = np.where(y > q, -t, 1.0 - t) / batch  # dloss/dq per cell
    # cumulative structure: q_j depends on h_l for every l <= j
    suffix = np.cumsum(gq[:, ::-1], axis=1)[:, ::-1]
    dh = np.empty_like(h)
    dh[:, 0] = suffix[:, 0]
    if h.shape[1] > 1:
        dh[:, 1:] = logistic(h[:, 1:]) * suffix[:, 1:]
    return loss, dh


def squared_loss(y, f):
    """Mean squared error over the batch; sums over output components."""
    y = as_matrix(y, "y")
    f = as_matrix(f, "f")
    if y.shape != f.shape:
        raise ShapeError(f"shape mismatch: y {y.shape} vs f {f.shape}")
    batch = y.shape[0]
    resid = y - f
    loss = float((resid * resid).sum() / batch)
    return loss, -2.0 * resid / batch


def marginal_loss(tau: float, y, f):
    """Per-component pinball loss summed over outputs, averaged over the batch.

    With a single output column this is exactly the univariate mean
    pinball loss.
    """
    tau = _check_tau(tau)
    y = as_matrix(y, "y")
    f = as_matrix(f, "f")
    if y.shape != f.shape:
        raise ShapeError(f"shape mismatch: y {y.shape} vs f {f.shape}")
    batch = y.shape[0]
    resid = y - f
    loss = float(np.maximum(tau * resid, (tau - 1.0) * resid).sum() / batch)
    grad = np.where(y > f, -tau, 1.0 - tau) / batch
    return loss, grad


def geometric_loss(u, y, f):
    """Directional multivariate quantile loss mean(|r| + r.u), r = y - f.

    ``u`` must lie in the closed Euclidean unit ball; u = 0 gives the
    L1-median objective (mean Euclidean residual norm).  The norm gradient
    at r = 0 uses the zero subgradient.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if np.linalg.norm(u) > 1.0 + 1e-12:
        raise ValueError(f"direction must lie in the unit ball, got norm {np.linalg.norm(u)}")
    y = as_matrix(y, "y")
    f = as_matrix(f, "f")
    if y.shape != f.shape:
        raise ShapeError(f"shape mismatch: y {y.shape} vs f {f.shape}")
    if y.shape[1] != u.size:
        raise ShapeError(f"direction has {u.size} components but outputs have {y.shape[1]}")
    batch = y.shape[0]
    resid = y - f
    norms = np.linalg.norm(resid, axis=1)
    loss = float((norms + resid @ u).sum() / batch)
    safe = np.maximum(norms, ZERO_NORM_TOL)
    unit = np.where(norms[:, None] < ZERO_NORM_TOL, 0.0, resid / safe[:, None])
    grad = -(unit + u) / batch
    return loss, grad


# ---------------------------------------------------------------------------
# Objective factories for the training loop: objective(y, output) -> (loss, grad)


def pinball_objective(tau: float):
    tau = _check_tau(tau)
    return lambda y, f: marginal_loss(tau, y, f)


def composite_objective(taus):
    levels = QuantileLevels.coerce(taus)
    return lambda y, h: composite_loss(y, h, levels)


def squared_objective():
    return squared_loss


def marginal_objective(tau: float):
    tau = _check_tau(tau)
    return lambda y, f: marginal_loss(tau, y, f)


def geometric_objective(u):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    return lambda y, f: geometric_loss(u, y, f)

"""Student-t distribution function and quantiles without external stats deps.

The CDF goes through the regularized incomplete beta function evaluated by
the modified Lentz continued fraction; quantiles invert it by bisection.
"""

from __future__ import annotations

import math

_MAX_CF_ITER = 300
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta parameters must be positive, got a={a} b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # continued fraction converges fast on the side below the mean a/(a+b)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_cdf(df: float, t: float) -> float:
    """P(T <= t) for T Student-t with df degrees of freedom."""
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    half_tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x)
    return half_tail if t < 0.0 else 1.0 - half_tail


def student_t_quantile(df: float, tau: float, tol: float = 1e-12,
                       bracket: float = 1e6, max_iter: int = 400) -> float:
    """Invert the t CDF by bisection to |F(q) - tau| < tol."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    lo, hi = -bracket, bracket
    mid = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = student_t_cdf(df, mid)
        if abs(f - tau) < tol:
            return mid
        if f < tau:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            return mid
    raise ArithmeticError(f"bisection failed to reach tolerance {tol} for df={df} tau={tau}")


def student_t2_quantile(tau: float) -> float:
    """Closed-form quantile of the 2-df Student-t: (2*tau-1) * sqrt(2 / (4*tau*(1-tau)))."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return (2.0 * tau - 1.0) * math.sqrt(2.0 / (4.0 * tau * (1.0 - tau)))

"""Gamma and incomplete-gamma functions.

The lower regularised function uses the power series for ``t < a + 1`` and a
modified-Lentz continued fraction for the upper tail otherwise. The scaled
upper function ``exp(t) * Gamma(a, t)`` is exposed because the exponential-fit
loss multiplies incomplete-gamma differences by ``exp(x * eps)``.
"""

from __future__ import annotations

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def gamma_fn(a: float) -> float:
    if not a > 0:
        raise ValueError(f"gamma_fn needs a > 0, got {a}")
    return math.gamma(a)


def _lower_series(a: float, t: float) -> float:
    # sum_n t^n / (a (a+1) ... (a+n)); returns gamma(a, t) * exp(t) * t^-a
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= t / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total
    raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, t={t})")


def _upper_cf(a: float, t: float) -> float:
    # Lentz evaluation of Gamma(a, t) * exp(t) * t^-a
    b = t + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, t={t})")


def reg_lower_incomplete_gamma(a: float, t: float) -> float:
    """``P(a, t) = gamma(a, t) / Gamma(a)``."""
    if not a > 0:
        raise ValueError(f"incomplete gamma needs a > 0, got {a}")
    if t < 0:
        raise ValueError(f"incomplete gamma needs t >= 0, got {t}")
    if t == 0:
        return 0.0
    if math.isinf(t):
        return 1.0
    log_pref = a * math.log(t) - t - math.lgamma(a)
    if t < a + 1.0:
        return math.exp(log_pref) * _lower_series(a, t)
    return 1.0 - math.exp(log_pref) * _upper_cf(a, t)


def reg_upper_incomplete_gamma(a: float, t: float) -> float:
    """``Q(a, t) = 1 - P(a, t)`` without cancellation in the tail."""
    if not a > 0:
        raise ValueError(f"incomplete gamma needs a > 0, got {a}")
    if t < 0:
        raise ValueError(f"incomplete gamma needs t >= 0, got {t}")
    if t == 0:
        return 1.0
    if t < a + 1.0:
        return 1.0 - reg_lower_incomplete_gamma(a, t)
    return math.exp(a * math.log(t) - t - math.lgamma(a)) * _upper_cf(a, t)


def scaled_upper_gamma(a: float, t: float) -> float:
    """``exp(t) * Gamma(a, t)`` (unregularised), finite for large ``t``."""
    if not a > 0:
        raise ValueError(f"incomplete gamma needs a > 0, got {a}")
    if t < 0:
        raise ValueError(f"incomplete gamma needs t >= 0, got {t}")
    if t < a + 1.0:
        if t == 0:
            return math.gamma(a)
        return math.exp(t) * math.gamma(a) * reg_upper_incomplete_gamma(a, t)
    return math.exp(a * math.log(t)) * _upper_cf(a, t)

"""Least-squares fitting of a shifted power-law kernel by sums of exponentials.

The loss is the squared ``L^2([0, T])`` distance, evaluated in closed form
through incomplete gamma functions. Fits are built incrementally: the
``p - 1`` solution plus one new time scale seeds every start for ``p``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .kernels import ExponentialSum, ShiftedFractional, decay_integral
from .special import gamma_fn, reg_lower_incomplete_gamma, scaled_upper_gamma

RATE_MIN = 1e-6
RATE_MAX = 1e6
WEIGHT_MIN = 1e-12
WEIGHT_MAX = 1e8


def _cross(a: float, x: float, eps: float, T: float) -> float:
    """``int_0^T exp(-x t) (t + eps)^(a - 1) dt`` for ``x > 0``."""
    lo, hi = x * eps, x * (T + eps)
    if lo > a + 1.0:
        # both ends in the tail: exp(x eps) * Gamma(a, .) difference, rescaled
        s_lo = scaled_upper_gamma(a, lo)
        s_hi = scaled_upper_gamma(a, hi)
        return x ** (-a) * (s_lo - math.exp(-x * T) * s_hi)
    diff = reg_lower_incomplete_gamma(a, hi) - reg_lower_incomplete_gamma(a, lo)
    return x ** (-a) * math.exp(lo) * gamma_fn(a) * diff


def _pair_integral(s: np.ndarray, T: float) -> np.ndarray:
    return decay_integral(s, T)


def _pair_integral_ds(s: np.ndarray, T: float) -> np.ndarray:
    e = np.exp(-s * T)
    return (s * T * e + np.expm1(-s * T)) / s ** 2


def _fractional_sq(frac: ShiftedFractional, T: float) -> float:
    q = 2.0 * frac.exponent - 1.0
    return frac.scale ** 2 * ((T + frac.shift) ** q - frac.shift ** q) / q


def expsum_fit_loss(frac: ShiftedFractional, expsum: ExponentialSum | None, T: float) -> float:
    """Closed-form ``int_0^T (G_frac - G_sum)^2 dt``.

    ``expsum=None`` stands for the empty sum (all weights zero).
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    total = _fractional_sq(frac, T)
    if expsum is None:
        return total
    w = np.asarray(expsum.weights)
    x = np.asarray(expsum.rates)
    if np.any(x <= 0):
        raise ValueError("cross term needs strictly positive rates")
    return total + _loss_parts(frac, w, x, T)[0]


def _loss_parts(frac: ShiftedFractional, w: np.ndarray, x: np.ndarray, T: float):
    nu, eps, xi = frac.exponent, frac.shift, frac.scale
    s = np.add.outer(x, x)
    F = _pair_integral(s, T)
    cross = np.array([_cross(nu, xr, eps, T) for xr in x])
    value = float(w @ F @ w) - 2.0 * xi * float(w @ cross)
    return value, F, s, cross


def _objective(theta: np.ndarray, frac: ShiftedFractional, T: float, base: float):
    p = theta.size // 2
    w = np.exp(theta[:p])
    x = np.exp(theta[p:])
    value, F, s, cross = _loss_parts(frac, w, x, T)
    nu, eps, xi = frac.exponent, frac.shift, frac.scale
    dF = _pair_integral_ds(s, T)
    g_w = 2.0 * (F @ w) - 2.0 * xi * cross
    # d/dx int exp(-xt)(t+eps)^(nu-1) = -(C(nu+1) - eps C(nu))
    dcross = -np.array([_cross(nu + 1.0, xr, eps, T) for xr in x]) + eps * cross
    g_x = 2.0 * w * (dF @ w) - 2.0 * xi * w * dcross
    grad = np.concatenate([g_w * w, g_x * x])
    return base + value, grad


@dataclass(frozen=True)
class FitResult:
    kernel: ExponentialSum
    loss: float
    converged: bool
    message: str = ""


def _optimal_new_weight(frac, w, x, rate, T) -> float:
    # 1-D least squares weight for a new exponential given the current ones
    own = float(_pair_integral(np.array(2.0 * rate), T))
    num = frac.scale * _cross(frac.exponent, rate, frac.shift, T)
    if len(w):
        num -= float(np.dot(w, _pair_integral(np.asarray(x) + rate, T)))
    return num / own


def _local_fit(frac, T, w0, x0):
    base = _fractional_sq(frac, T)
    theta0 = np.log(np.concatenate([w0, x0]))
    p = len(w0)
    bounds = [(math.log(WEIGHT_MIN), math.log(WEIGHT_MAX))] * p + \
             [(math.log(RATE_MIN), math.log(RATE_MAX))] * p
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
    res = minimize(_objective, theta0, args=(frac, T, base), jac=True, method="L-BFGS-B",
                   bounds=bounds, options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    w = np.exp(res.x[:p])
    x = np.exp(res.x[p:])
    order = np.argsort(x)
    return w[order], x[order], float(res.fun), _stationary(res, bounds), str(res.message)


def _stationary(res, bounds) -> bool:
    # line-search exits are common at a tight ftol; judge by the projected gradient
    if res.success:
        return True
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    g = np.array(res.jac, dtype=float)
    g[(res.x <= lo + 1e-9) & (g > 0)] = 0.0
    g[(res.x >= hi - 1e-9) & (g < 0)] = 0.0
    return bool(np.max(np.abs(g)) <= 1e-6 * max(1.0, abs(res.fun)))


def fit_exponential_sum(frac: ShiftedFractional, p: int, T: float = 1.0, multistart: int = 16,
                        seed: int = 0) -> tuple[ExponentialSum, float]:
    """Fit ``p`` exponentials to ``frac`` on ``[0, T]``; returns ``(kernel, loss)``."""
    fits = fit_exponential_sums(frac, p, T, multistart, seed)
    return fits[-1].kernel, fits[-1].loss


def fit_exponential_sums(frac: ShiftedFractional, p_max: int, T: float = 1.0,
                         multistart: int = 16, seed: int = 0) -> list[FitResult]:
    """Incremental fits for ``p = 1 .. p_max``.

    Start ``k`` for order ``p`` adds a rate taken from a log-spaced ladder
    (jittered by ``seed``) to the order ``p - 1`` optimum, with its weight set
    to the one-dimensional least-squares value. The best local optimum wins;
    ties go to the smaller total rate.
    """
    if p_max < 1:
        raise ValueError("need at least one exponential")
    rng = np.random.default_rng(seed)
    w_prev = np.zeros(0)
    x_prev = np.zeros(0)
    out: list[FitResult] = []
    for p in range(1, p_max + 1):
        ladder = np.logspace(math.log10(0.1), math.log10(RATE_MAX / 10), max(multistart, 2))
        ladder *= np.exp(rng.uniform(-0.1, 0.1, ladder.size))
        best = None
        for rate in ladder:
            w_new = _optimal_new_weight(frac, w_prev, x_prev, rate, T)
            w0 = np.append(w_prev, max(w_new, 1e-3 * frac.scale))
            x0 = np.append(x_prev, rate)
            w, x, loss, ok, msg = _local_fit(frac, T, w0, x0)
            key = (loss, float(x.sum()))
            if best is None or key < best[0]:
                best = (key, w, x, loss, ok, msg)
        _, w, x, loss, ok, msg = best
        if not ok:
            warnings.warn(f"exponential fit p={p} did not report convergence: {msg}", RuntimeWarning)
        out.append(FitResult(ExponentialSum(tuple(w), tuple(x)), loss, ok, msg))
        w_prev, x_prev = w, x
    return out


def write_fit_table(fits: list[FitResult], path: str | Path) -> None:
    """CSV with one row per exponential: ``p, index, weight, rate, loss``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["p", "index", "weight", "rate_per_time", "loss_l2_squared"])
        for p, fit in enumerate(fits, start=1):
            for i, (w, x) in enumerate(zip(fit.kernel.weights, fit.kernel.rates), start=1):
                wr.writerow([p, i, f"{w:.12e}", f"{x:.12e}", f"{fit.loss:.12e}"])

"""Nonlinear impact functions and their monotonicity diagnostics.

``PiecewisePower(x0, c)`` is linear on ``[-x0, x0]`` and follows a concave
power branch of exponent ``c`` outside, glued so that value and slope are
continuous at the knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np


@dataclass(frozen=True)
class Identity:
    """Linear impact ``h(x) = x``."""

    @property
    def sup_derivative(self) -> float:
        return 1.0

    @property
    def lipschitz_derivative(self) -> float:
        return 0.0

    @property
    def growth_exponent(self) -> float:
        return 1.0


@dataclass(frozen=True)
class PiecewisePower:
    """``h_{x0,c}``: identity inside ``[-x0, x0]``, power-``c`` branch outside."""

    x0: float
    c: float

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise ValueError(f"threshold x0 must be > 0, got {self.x0}")
        if not 0 < self.c <= 1:
            raise ValueError(f"concavity c must lie in (0, 1], got {self.c}")

    @property
    def sup_derivative(self) -> float:
        return 1.0

    @property
    def lipschitz_derivative(self) -> float:
        """``sup |h''|``, attained just outside the knots: ``(1 - c) / (c x0)``."""
        return (1.0 - self.c) / (self.c * self.x0)

    @property
    def growth_exponent(self) -> float:
        return self.c

    @property
    def growth_constant(self) -> float:
        """``K`` with ``|h(x)| <= K (1 + |x|^c)`` for all ``x``."""
        c, x0 = self.c, self.x0
        return max(x0, c ** (-c) * x0 ** (1.0 - c))

    def _inner(self, a: np.ndarray) -> np.ndarray:
        c, x0 = self.c, self.x0
        return a * x0 ** (1.0 / c - 1.0) / c - (1.0 / c - 1.0) * x0 ** (1.0 / c)


ImpactParams = Union[Identity, PiecewisePower]


def h(p: ImpactParams, x):
    x = np.asarray(x, dtype=float)
    if isinstance(p, Identity) or p.c == 1.0:
        return x.copy() if x.ndim else x
    a = np.abs(x)
    out = np.array(x, dtype=float, copy=True)
    outer = a > p.x0
    out[outer] = np.sign(x[outer]) * p._inner(a[outer]) ** p.c
    return out if out.ndim else out[()]


def h_prime(p: ImpactParams, x):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    if isinstance(p, Identity) or p.c == 1.0:
        return out if out.ndim else out[()]
    a = np.abs(x)
    outer = a > p.x0
    out[outer] = p.x0 ** (1.0 / p.c - 1.0) * p._inner(a[outer]) ** (p.c - 1.0)
    return out if out.ndim else out[()]


def _reject_knots(p: ImpactParams, x: np.ndarray) -> None:
    if isinstance(p, PiecewisePower) and np.any(np.abs(x) == p.x0):
        raise ValueError("second derivative is undefined at the knots x = +-x0")


def h_second(p: ImpactParams, x):
    x = np.asarray(x, dtype=float)
    _reject_knots(p, x)
    out = np.zeros_like(x)
    if isinstance(p, Identity) or p.c == 1.0:
        return out if out.ndim else out[()]
    c, x0 = p.c, p.x0
    a = np.abs(x)
    outer = a > x0
    out[outer] = ((c - 1.0) / c * x0 ** (2.0 * (1.0 / c - 1.0))
                  * p._inner(a[outer]) ** (c - 2.0) * np.sign(x[outer]))
    return out if out.ndim else out[()]


def arrow_pratt_ratio(p: ImpactParams, x):
    """Relative risk aversion ``-x h''(x) / h'(x)``."""
    x = np.asarray(x, dtype=float)
    _reject_knots(p, x)
    out = np.zeros_like(x)
    if isinstance(p, PiecewisePower):
        a = np.abs(x)
        outer = a > p.x0
        out[outer] = (1.0 - p.c) * a[outer] / (a[outer] - (1.0 - p.c) * p.x0)
    return out if out.ndim else out[()]


def arrow_pratt_sup(p: ImpactParams) -> float:
    """Supremum of the ratio, approached at the knots."""
    return 0.0 if isinstance(p, Identity) else (1.0 - p.c) / p.c


@dataclass
class MonotonicityConditionReport:
    passed: bool
    h_nondecreasing: bool
    xh_prime_nondecreasing: bool
    violations: list = field(default_factory=list)


def check_exponential_monotonicity_conditions(p: ImpactParams, samples: int = 10_000,
                                              range_: float = 10.0, seed: int = 0,
                                              rtol: float = 1e-12) -> MonotonicityConditionReport:
    """Check that ``h`` and ``x h'(x)`` are nondecreasing on sorted random points.

    These are the shape conditions under which the single-exponential kernel
    with ``g = 0`` yields a monotone operator.
    """
    if samples < 2:
        raise ValueError("need at least two sample points")
    x = np.sort(np.random.default_rng(seed).uniform(-range_, range_, samples))
    if isinstance(p, PiecewisePower):
        # make sure the sharpest part of the branch is probed
        x = np.sort(np.concatenate([x, p.x0 * np.linspace(-3, 3, 601)]))
    violations = []
    ok = {}
    for name, f in (("h", h(p, x)), ("x*h'", x * h_prime(p, x))):
        df = np.diff(f)
        slack = rtol * np.maximum(np.abs(f[1:]), np.abs(f[:-1]))
        bad = np.nonzero(df < -slack)[0]
        ok[name] = bad.size == 0
        violations.extend((name, float(x[i]), float(x[i + 1])) for i in bad[:50])
    return MonotonicityConditionReport(all(ok.values()), ok["h"], ok["x*h'"], violations)


@dataclass
class OperatorMonotonicityReport:
    min_value: float
    negatives: list
    pairs: int

    @property
    def passed(self) -> bool:
        return not self.negatives


def sample_monotonicity_of_A(apply_A: Callable[[np.ndarray], np.ndarray], shape: tuple[int, int],
                             delta: float, pairs: int = 100, seed: int = 0, scale: float = 1.0,
                             tol: float = 1e-10) -> OperatorMonotonicityReport:
    """Sample ``<u - v, A(u) - A(v)>`` over random path pairs.

    ``apply_A`` maps an ``(M, N)`` array to an ``(M, N)`` array. Paths have
    independent normal grid values times ``scale``. The inner product is
    ``delta / M * sum``.
    """
    rng = np.random.default_rng(seed)
    M = shape[0]
    values = []
    negatives = []
    for k in range(pairs):
        u = scale * rng.standard_normal(shape)
        v = scale * rng.standard_normal(shape)
        val = float(delta / M * np.sum((u - v) * (apply_A(u) - apply_A(v))))
        values.append(val)
        if val < -tol:
            negatives.append((k, val))
    return OperatorMonotonicityReport(min(values), negatives, pairs)


def impact_to_config(p: ImpactParams) -> dict:
    if isinstance(p, Identity):
        return {"type": "identity"}
    return {"type": "piecewise_power", "x0": p.x0, "c": p.c}


def impact_from_config(cfg: dict) -> ImpactParams:
    kind = cfg.get("type")
    if kind == "identity":
        return Identity()
    if kind == "piecewise_power":
        return PiecewisePower(cfg["x0"], cfg["c"])
    raise ValueError(f"unknown impact type {kind!r}")

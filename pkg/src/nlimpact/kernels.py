"""Propagator kernels and their Nystrom discretisation.

All supported kernels are of convolution type, ``G(t, s) = G(t - s)`` for
``t > s``. The Volterra matrix uses the left-rectangle rule below the
diagonal. The diagonal is either zero (``diagonal="none"``, the plain
strictly lower-triangular rule) or half a cell of kernel mass
(``diagonal="half"``, the default). With the half-cell diagonal the symmetric
part ``K + K^T`` equals ``delta * [G(|t_i - t_j|)]``, so positive-definite
kernels give positive semi-definite matrices. The scheme relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid_paths import TimeGrid


@dataclass(frozen=True)
class ExponentialSum:
    """``G(tau) = sum_i weights[i] * exp(-rates[i] * tau)``."""

    weights: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        r = tuple(float(x) for x in np.atleast_1d(self.rates))
        if len(w) != len(r) or len(w) < 1:
            raise ValueError("weights and rates must be non-empty and of equal length")
        if any(x <= 0 for x in w):
            raise ValueError(f"exponential weights must be > 0, got {w}")
        if any(x < 0 for x in r):
            raise ValueError(f"exponential rates must be >= 0, got {r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)

    @property
    def p(self) -> int:
        return len(self.weights)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        w = np.asarray(self.weights)
        r = np.asarray(self.rates)
        return np.sum(w * np.exp(-np.multiply.outer(tau, r)), axis=-1)

    def at_zero(self) -> float:
        return float(sum(self.weights))


@dataclass(frozen=True)
class ShiftedFractional:
    """``G(tau) = scale * (tau + shift) ** (exponent - 1)``, singular at 0 when ``shift == 0``."""

    scale: float
    exponent: float
    shift: float = 0.0

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"fractional scale must be > 0, got {self.scale}")
        if not 0.5 < self.exponent < 1.0:
            raise ValueError(f"fractional exponent must lie in (1/2, 1), got {self.exponent}")
        if self.shift < 0:
            raise ValueError(f"fractional shift must be >= 0, got {self.shift}")

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.scale * (tau + self.shift) ** (self.exponent - 1.0)

    def at_zero(self) -> float:
        return np.inf if self.shift == 0 else float(self.scale * self.shift ** (self.exponent - 1.0))


@dataclass(frozen=True)
class Constant:
    """Permanent impact, ``G = level``."""

    level: float

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError(f"constant kernel level must be >= 0, got {self.level}")

    def __call__(self, tau):
        return np.full(np.shape(tau), float(self.level))

    def at_zero(self) -> float:
        return float(self.level)


KernelSpec = Union[ExponentialSum, ShiftedFractional, Constant]


def kernel_eval(k: KernelSpec, t: float, s: float) -> float:
    """``G(t, s)`` for ``t > s``."""
    if t <= s:
        if isinstance(k, ShiftedFractional) and k.shift == 0:
            raise ValueError("singular fractional kernel cannot be evaluated at t <= s")
        raise ValueError(f"Volterra kernels are only evaluated for t > s, got t={t}, s={s}")
    return float(k(t - s))


def _sq_integral(k: KernelSpec, T: float) -> float:
    # int_0^T G(tau)^2 dtau
    if isinstance(k, Constant):
        return k.level ** 2 * T
    if isinstance(k, ShiftedFractional):
        q = 2.0 * k.exponent - 1.0
        return k.scale ** 2 * ((T + k.shift) ** q - k.shift ** q) / q
    w = np.asarray(k.weights)
    return float(w @ decay_integral(np.add.outer(k.rates, k.rates), T) @ w)


def decay_integral(s, T: float) -> np.ndarray:
    """``int_0^T exp(-s t) dt`` for ``s >= 0``, stable as ``s T -> 0``."""
    s = np.asarray(s, dtype=float)
    x = s * T
    small = x < 1e-8
    safe = np.where(small, 1.0, s)
    return np.where(small, T * (1.0 - 0.5 * x), -np.expm1(-np.where(small, 1.0, x)) / safe)


def admissibility_constant(k: KernelSpec, T: float) -> float:
    """``C_G = sup_t int_0^t G(t, s)^2 ds``; attained at ``t = T`` for these kernels."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    return _sq_integral(k, T)


def adjoint_admissibility_constant(k: KernelSpec, T: float) -> float:
    """``sup_t int_t^T G(s, t)^2 ds``; attained at ``t = 0`` for convolution kernels."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    return _sq_integral(k, T)


def half_cell_mass(k: KernelSpec, delta: float) -> float:
    """Diagonal weight of the half-cell rule.

    ``delta * G(0+) / 2`` when the kernel is finite at zero, otherwise the exact
    mass ``int_0^{delta/2} G``.
    """
    g0 = k.at_zero()
    if np.isfinite(g0):
        return 0.5 * delta * g0
    # only the unshifted fractional kernel is singular
    return float(k.scale * (0.5 * delta) ** k.exponent / k.exponent)


@dataclass(frozen=True)
class VolterraMatrix:
    """Quadrature matrix of a Volterra operator on ``grid``."""

    grid: TimeGrid
    entries: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.grid.N, self.grid.N):
            raise ValueError("matrix shape does not match grid")
        if np.any(np.triu(e, 1)):
            raise ValueError("Volterra matrix must be lower triangular")
        if not np.all(np.isfinite(e)):
            raise ValueError("Volterra matrix has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Forward action ``(G u)_i`` applied to each row of ``u``."""
        return u @ self.entries.T

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        """Pathwise adjoint ``sum_{j >= i} K[j, i] w_j`` (no conditioning)."""
        return w @ self.entries

    @property
    def symmetrized(self) -> np.ndarray:
        return self.entries + self.entries.T


def nystrom(k: KernelSpec, grid: TimeGrid, diagonal: str = "half") -> VolterraMatrix:
    """Left-rectangle Nystrom matrix, ``K[i, j] = delta * G(t_i - t_j)`` for ``j < i``."""
    if diagonal not in ("half", "none"):
        raise ValueError(f"diagonal must be 'half' or 'none', got {diagonal!r}")
    t = grid.points
    d = grid.delta
    lag = np.subtract.outer(t, t)
    K = np.zeros((grid.N, grid.N))
    below = np.tril(np.ones((grid.N, grid.N), dtype=bool), -1)
    K[below] = d * k(lag[below])
    if diagonal == "half":
        np.fill_diagonal(K, half_cell_mass(k, d))
    return VolterraMatrix(grid, K)


def penalty_matrix(grid: TimeGrid, phi: float, varrho: float, diagonal: str = "half") -> VolterraMatrix:
    """Matrix of ``H(t, s) = (phi (T - t) + varrho) 1_{t > s}``.

    With the half-cell diagonal ``<u, (H + H^T) u>`` is exactly
    ``varrho X_N^2 + phi delta sum_{k=1}^{N-1} X_k^2`` for ``X_k = delta sum_{j<k} u_j``.
    """
    if phi < 0 or varrho < 0:
        raise ValueError("penalties must be nonnegative")
    d = grid.delta
    rowval = d * (phi * grid.time_to_maturity + varrho)
    H = np.tril(np.ones((grid.N, grid.N)), -1) * rowval[:, None]
    if diagonal == "half":
        np.fill_diagonal(H, 0.5 * rowval)
    elif diagonal != "none":
        raise ValueError(f"diagonal must be 'half' or 'none', got {diagonal!r}")
    return VolterraMatrix(grid, H)


def kernel_to_config(k: KernelSpec) -> dict:
    if isinstance(k, ExponentialSum):
        return {"type": "exponential_sum", "weights": list(k.weights), "rates": list(k.rates)}
    if isinstance(k, ShiftedFractional):
        return {"type": "shifted_fractional", "scale": k.scale, "exponent": k.exponent,
                "shift": k.shift}
    return {"type": "constant", "level": k.level}


def kernel_from_config(cfg: dict) -> KernelSpec:
    kind = cfg.get("type")
    if kind == "exponential_sum":
        return ExponentialSum(tuple(cfg["weights"]), tuple(cfg["rates"]))
    if kind == "exponential":
        return ExponentialSum((cfg["scale"],), (cfg["rate"],))
    if kind == "shifted_fractional":
        return ShiftedFractional(cfg["scale"], cfg["exponent"], cfg.get("shift", 0.0))
    if kind == "constant":
        return Constant(cfg["level"])
    raise ValueError(f"unknown kernel type {kind!r}")

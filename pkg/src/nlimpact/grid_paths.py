"""Time grids, path ensembles and the Ornstein-Uhlenbeck drift signal.

Every process in the package lives on a uniform grid ``t_0 = 0 < ... < t_{N-1} = T``
and is stored as an ``M x N`` array, one row per sample path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Recorded in run manifests so ensembles can be regenerated bit for bit.
RNG_ALGORITHM = "numpy.Philox4x64-10/SeedSequence(seed, spawn_key=(pair,))"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretisation of ``[0, T]`` with ``N`` points."""

    T: float
    N: int

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"grid needs at least 2 points, got N={self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def delta(self) -> float:
        return self.T / (self.N - 1)

    @property
    def points(self) -> np.ndarray:
        t = np.arange(self.N) * self.delta
        t[-1] = self.T
        return t

    @property
    def time_to_maturity(self) -> np.ndarray:
        return self.T - self.points


@dataclass(frozen=True)
class PathEnsemble:
    """``M x N`` matrix of a process sampled on ``grid`` (row ``m`` is path ``m``)."""

    grid: TimeGrid
    values: np.ndarray
    label: str = ""
    antithetic: bool = False

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.N:
            raise ValueError(f"values must have shape (M, {self.grid.N}), got {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("ensemble needs at least one path")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"ensemble '{self.label}' has non-finite entries")
        if self.antithetic and v.shape[0] % 2:
            raise ValueError("antithetic ensembles need an even path count")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N

    def replace(self, values: np.ndarray, label: str | None = None) -> PathEnsemble:
        return PathEnsemble(self.grid, values, self.label if label is None else label,
                            self.antithetic)

    @classmethod
    def constant(cls, grid: TimeGrid, M: int, value: float = 0.0, label: str = "") -> PathEnsemble:
        return cls(grid, np.full((M, grid.N), float(value)), label)


@dataclass(frozen=True)
class OUSignalParams:
    """Drift signal ``dI = (theta - kappa I) dt + xi dW`` started at ``i0``."""

    theta: float
    kappa: float
    xi: float
    i0: float

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError(f"mean-reversion speed kappa must be > 0, got {self.kappa}")
        if self.xi < 0:
            raise ValueError(f"volatility xi must be >= 0, got {self.xi}")

    @property
    def level(self) -> float:
        return self.theta / self.kappa

    @property
    def deterministic(self) -> bool:
        return self.xi == 0.0

    def mean_path(self, t: np.ndarray) -> np.ndarray:
        return self.level + (self.i0 - self.level) * np.exp(-self.kappa * np.asarray(t))


def _pair_normals(seed: int, pair: int, n_steps: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(pair,))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n_steps)


def gaussian_increments(seed: int, M: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    """Standard normals of shape ``(M, n_steps)``.

    Each row (or each antithetic pair ``2k, 2k+1``) draws from its own Philox
    stream keyed on ``(seed, k)``, so the output does not depend on how rows
    are scheduled.
    """
    if M < 1:
        raise ValueError("path count M must be >= 1")
    if antithetic and M % 2:
        raise ValueError(f"antithetic sampling needs an even M, got {M}")
    z = np.empty((M, n_steps))
    if antithetic:
        for k in range(M // 2):
            zk = _pair_normals(seed, k, n_steps)
            z[2 * k] = zk
            z[2 * k + 1] = -zk
    else:
        for m in range(M):
            z[m] = _pair_normals(seed, m, n_steps)
    return z


def simulate_ou(params: OUSignalParams, grid: TimeGrid, M: int, seed: int = 0,
                antithetic: bool = False) -> PathEnsemble:
    """Sample the drift signal with the exact Gaussian transition."""
    z = gaussian_increments(seed, M, grid.N - 1, antithetic)
    dt = np.diff(grid.points)
    k = params.kappa
    decay = np.exp(-k * dt)
    sd = params.xi * np.sqrt(-np.expm1(-2.0 * k * dt) / (2.0 * k))
    out = np.empty((M, grid.N))
    out[:, 0] = params.i0
    mu = params.level
    for i in range(grid.N - 1):
        out[:, i + 1] = mu + (out[:, i] - mu) * decay[i] + sd[i] * z[:, i]
    return PathEnsemble(grid, out, "drift", antithetic)


def alpha_from_drift(drift: PathEnsemble, params: OUSignalParams) -> PathEnsemble:
    """Closed-form ``alpha_t = E_t[int_t^T I_r dr]`` for the OU drift."""
    tau = drift.grid.time_to_maturity
    k = params.kappa
    lvl = params.level
    alpha = (drift.values - lvl) * (-np.expm1(-k * tau) / k) + lvl * tau
    alpha[:, -1] = 0.0
    return drift.replace(alpha, "alpha")


def effective_alpha(alpha: PathEnsemble, X0: float, phi: float = 0.0,
                    varrho: float = 0.0) -> PathEnsemble:
    """Signal net of the inventory penalties: ``alpha - X0 (phi (T - t) + varrho)``."""
    if phi < 0 or varrho < 0:
        raise ValueError("penalties phi and varrho must be nonnegative")
    shift = X0 * (phi * alpha.grid.time_to_maturity + varrho)
    return alpha.replace(alpha.values - shift, "alpha_tilde")


def left_integral(values: np.ndarray, delta: float) -> np.ndarray:
    """``delta * sum_{j<i} f_j`` along the last axis (zero at ``t_0``)."""
    out = np.zeros_like(values, dtype=float)
    out[..., 1:] = delta * np.cumsum(values[..., :-1], axis=-1)
    return out


def inventory_from_rate(u: PathEnsemble, X0: float) -> PathEnsemble:
    """Inventory ``X0 + int_0^t u`` on the grid, left-rectangle rule."""
    return u.replace(X0 + left_integral(u.values, u.grid.delta), "inventory")


def terminal_inventory(u: PathEnsemble, X0: float) -> np.ndarray:
    """Position left after every grid rate has been executed, one value per path.

    This is the quantity charged by the terminal penalty: ``X0 + delta * sum_i u_i``
    including the last grid point.
    """
    return X0 + u.grid.delta * u.values.sum(axis=1)


@dataclass(frozen=True)
class SignalBundle:
    """Drift and alpha ensembles simulated together."""

    params: OUSignalParams
    drift: PathEnsemble
    alpha: PathEnsemble
    seed: int = 0
    meta: dict = field(default_factory=dict)


def make_signal(params: OUSignalParams, grid: TimeGrid, M: int, seed: int = 0,
                antithetic: bool = True) -> SignalBundle:
    """Simulate the drift and derive its alpha; deterministic signals use one path."""
    if params.deterministic:
        M, antithetic = 1, False
    drift = simulate_ou(params, grid, M, seed, antithetic)
    return SignalBundle(params, drift, alpha_from_drift(drift, params), seed,
                        {"rng": RNG_ALGORITHM, "M": M, "antithetic": antithetic})

"""Least-squares Monte Carlo estimates of conditional expectations.

At anchor ``t_i`` the state variables of every path are expanded into a
tensor polynomial basis of total degree ``<= d`` and the targets are regressed
on it with a ridge penalty. The Gram factorisation at each anchor is cached
and shared by every target regressed at that anchor.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.polynomial import chebyshev, hermite_e, laguerre, legendre
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .grid_paths import PathEnsemble, left_integral
from .kernels import KernelSpec, nystrom

_VANDER = {
    "laguerre": laguerre.lagvander,
    "legendre": legendre.legvander,
    "chebyshev": chebyshev.chebvander,
    "hermite": hermite_e.hermevander,
}


@dataclass(frozen=True)
class RegressionConfig:
    """State variables and polynomial basis for one family of regressions.

    ``features`` holds constructor strings:

    ``"alpha"``
        the stored ensemble itself
    ``"int:alpha"``
        running integral ``int_0^t alpha_s ds``
    ``"exp:alpha:5"``
        exponentially weighted ``int_0^t exp(-5 (t - s)) alpha_s ds``
    ``"kernel:alpha"``
        ``int_0^t G(t, s) alpha_s ds`` for the problem kernel
    """

    features: tuple[str, ...] = ("alpha", "int:alpha")
    family: str = "laguerre"
    degree: int = 2
    ridge: float = 1e-6
    standardize: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(self.features))
        if self.family not in _VANDER:
            raise ValueError(f"unknown polynomial family {self.family!r}; "
                             f"choose from {sorted(_VANDER)}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a nonnegative integer, got {self.degree}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        for f in self.features:
            _parse_feature(f)

    @property
    def n_basis(self) -> int:
        return math.comb(len(self.features) + self.degree, self.degree)

    def to_config(self) -> dict:
        return {"features": list(self.features), "family": self.family, "degree": self.degree,
                "ridge": self.ridge, "standardize": self.standardize}

    @classmethod
    def from_config(cls, cfg: Mapping) -> RegressionConfig:
        return cls(tuple(cfg.get("features", ("alpha", "int:alpha"))), cfg.get("family", "laguerre"),
                   int(cfg.get("degree", 2)), float(cfg.get("ridge", 1e-6)),
                   bool(cfg.get("standardize", True)))


def _parse_feature(spec: str) -> tuple[str, str, float | None]:
    parts = spec.split(":")
    if len(parts) == 1:
        return "value", parts[0], None
    if parts[0] == "int" and len(parts) == 2:
        return "int", parts[1], None
    if parts[0] == "kernel" and len(parts) == 2:
        return "kernel", parts[1], None
    if parts[0] == "exp" and len(parts) == 3:
        kappa = float(parts[2])
        if kappa < 0:
            raise ValueError(f"exp-weight rate must be >= 0 in {spec!r}")
        return "exp", parts[1], kappa
    raise ValueError(f"cannot parse feature constructor {spec!r}")


def exp_weighted_integral(values: np.ndarray, t: np.ndarray, kappa: float) -> np.ndarray:
    """``delta * sum_{j<i} exp(-kappa (t_i - t_j)) f_j`` by the one-step recursion."""
    d = t[1] - t[0]
    out = np.zeros_like(values, dtype=float)
    decay = math.exp(-kappa * d)
    for i in range(1, values.shape[-1]):
        out[..., i] = decay * (out[..., i - 1] + d * values[..., i - 1])
    return out


def feature_matrix(config: RegressionConfig, ensembles: Mapping[str, PathEnsemble],
                   kernel: KernelSpec | None = None) -> np.ndarray:
    """State variables of every path at every grid time, shape ``(M, N, P)``."""
    cols = []
    for spec in config.features:
        kind, name, kappa = _parse_feature(spec)
        if name not in ensembles:
            raise KeyError(f"feature {spec!r} needs ensemble {name!r}; have {sorted(ensembles)}")
        ens = ensembles[name]
        v = ens.values
        if kind == "value":
            cols.append(v)
        elif kind == "int":
            cols.append(left_integral(v, ens.grid.delta))
        elif kind == "exp":
            cols.append(exp_weighted_integral(v, ens.grid.points, kappa))
        else:
            if kernel is None:
                raise ValueError(f"feature {spec!r} needs a kernel")
            cols.append(nystrom(kernel, ens.grid, diagonal="none").apply(v))
    if not cols:
        M = next(iter(ensembles.values())).M if ensembles else 1
        N = next(iter(ensembles.values())).N if ensembles else 0
        return np.zeros((M, N, 0))
    return np.stack(cols, axis=-1)


def multi_indices(P: int, d: int) -> list[tuple[int, ...]]:
    """All ``P``-tuples of total degree ``<= d``, graded then lexicographic."""
    out = []
    for total in range(d + 1):
        for idx in itertools.product(range(total + 1), repeat=P):
            if sum(idx) == total:
                out.append(idx)
    out.sort(key=lambda m: (sum(m), tuple(-k for k in m)))
    return out


def basis_expand(features: np.ndarray, family: str = "laguerre", degree: int = 2) -> np.ndarray:
    """Tensor polynomial basis of total degree ``<= degree``; shape ``(M, C(P+d, d))``."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.ndim != 2:
        raise ValueError("features must be an (M, P) matrix")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    vander = _VANDER[family]
    M, P = X.shape
    V = [vander(X[:, p], degree) for p in range(P)]
    idx = multi_indices(P, degree)
    B = np.ones((M, len(idx)))
    for c, m in enumerate(idx):
        for p, k in enumerate(m):
            if k:
                B[:, c] *= V[p][:, k]
    return B


def standardize_slice(X: np.ndarray) -> np.ndarray:
    """Centre and scale each column across paths; constant columns become zero."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    tiny = sd <= 1e-13 * (1.0 + np.abs(mu))
    Z = (X - mu) / np.where(tiny, 1.0, sd)
    Z[:, tiny] = 0.0
    return Z


class Projector:
    """Conditional expectations ``E_{t_i}[.]`` on a fixed set of state variables.

    Parameters
    ----------
    features : ndarray, shape (M, N, P)
        State variables of each path on the grid.
    config : RegressionConfig
    deterministic : bool
        When true every conditional expectation is the value itself.
    """

    def __init__(self, features: np.ndarray | None, config: RegressionConfig | None,
                 deterministic: bool = False):
        self.deterministic = deterministic
        self.config = config
        self.features = features
        self._cache: dict[int, tuple] = {}
        if not deterministic:
            if features is None or config is None:
                raise ValueError("stochastic projector needs features and a regression config")
            if not np.all(np.isfinite(features)):
                raise ValueError("non-finite regression features")
            M = features.shape[0]
            if M <= config.n_basis:
                warnings.warn(f"only {M} paths for {config.n_basis} basis functions", RuntimeWarning)

    @classmethod
    def identity(cls) -> Projector:
        return cls(None, None, deterministic=True)

    def _factor(self, i: int):
        hit = self._cache.get(i)
        if hit is not None:
            return hit
        X = self.features[:, i, :]
        if self.config.standardize:
            X = standardize_slice(X)
        B = basis_expand(X, self.config.family, self.config.degree)
        M = B.shape[0]
        gram = B.T @ B / M
        pen = np.full(B.shape[1], self.config.ridge)
        pen[0] = 0.0  # the constant column is not shrunk
        gram[np.diag_indices_from(gram)] += pen
        try:
            fac = cho_factor(gram, lower=True, check_finite=True)
            # cho_factor accepts semidefinite input that solves to garbage; guard
            if np.min(np.abs(np.diag(fac[0]))) < 1e-12 * math.sqrt(np.max(np.diag(gram))):
                raise LinAlgError("near-singular Gram matrix")
        except LinAlgError as exc:
            raise LinAlgError(f"singular regression Gram matrix at anchor {i}; "
                              "use a positive ridge penalty") from exc
        self._cache[i] = (B, fac)
        return self._cache[i]

    def coefficients(self, i: int, y: np.ndarray) -> np.ndarray:
        B, fac = self._factor(i)
        return cho_solve(fac, B.T @ y / B.shape[0])

    def project(self, i: int, y: np.ndarray) -> np.ndarray:
        """Estimate of ``E_{t_i}[y]`` per path; ``y`` is ``(M,)`` or ``(M, r)``."""
        y = np.asarray(y, dtype=float)
        if self.deterministic:
            return y.copy()
        if i == 0:
            return np.broadcast_to(y.mean(axis=0), y.shape).copy()
        B, _ = self._factor(i)
        return B @ self.coefficients(i, y)


@dataclass
class CondExpTable:
    """``rows[i][:, j - i]`` estimates ``E_{t_i}[Y_{t_j}]`` for ``j >= i``."""

    rows: list = field(default_factory=list)

    def estimate(self, i: int, j: int) -> np.ndarray:
        if j < i:
            raise IndexError("only j >= i is stored")
        return self.rows[i][:, j - i]


def condexp_estimate(targets: PathEnsemble, anchor: int, projector: Projector) -> np.ndarray:
    """Row block ``E_{t_i}[Y_{t_j}]``, ``j >= i``; the ``j = i`` column is ``Y_{t_i}``."""
    N = targets.N
    if not 0 <= anchor < N:
        raise IndexError(f"anchor {anchor} outside grid of {N} points")
    Y = targets.values[:, anchor:]
    block = projector.project(anchor, Y) if Y.shape[1] > 1 else Y.copy()
    block[:, 0] = Y[:, 0]
    return block


def condexp_table(targets: PathEnsemble, projector: Projector) -> CondExpTable:
    return CondExpTable([condexp_estimate(targets, i, projector) for i in range(targets.N)])

"""Discrete nonlinear Fredholm equation for the optimal trading rate.

The optimality condition on the grid reads, for every anchor ``t_i``,

    gamma u_i + h(Z_i) + sum_{j>=i} K[j,i] E_i[h'(Z_j) u_j]
        + (H u)_i + sum_{j>=i} H[j,i] E_i[u_j] = alpha_i - X0 (phi (T - t_i) + varrho)

with ``Z = g + K u``. The iteration freezes the nonlinear remainder at the
previous iterate and solves the linear equation exactly with a forward sweep.
At anchor ``i`` the conditioned future of the rate solves a path-independent
symmetric system. Only the first component is kept, so one row of a
pre-factorised inverse per anchor is enough.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import impact as imp
from .condexp import Projector, RegressionConfig, _parse_feature, feature_matrix
from .grid_paths import PathEnsemble, TimeGrid, effective_alpha, inventory_from_rate, terminal_inventory
from .kernels import (KernelSpec, VolterraMatrix, adjoint_admissibility_constant,
                      admissibility_constant, nystrom, penalty_matrix)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemSpec:
    """Problem constants, kernel, impact function and input signals."""

    gamma: float
    kernel: KernelSpec
    impact: imp.ImpactParams
    alpha: PathEnsemble
    phi: float = 0.0
    varrho: float = 0.0
    X0: float = 0.0
    g: PathEnsemble | None = None
    diagonal: str = "half"

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"slippage gamma must be > 0, got {self.gamma}")
        if self.phi < 0 or self.varrho < 0:
            raise ValueError("penalties phi and varrho must be nonnegative")
        if self.g is not None and self.g.values.shape != self.alpha.values.shape:
            raise ValueError("g and alpha ensembles must have the same shape")
        object.__setattr__(self, "_K", nystrom(self.kernel, self.grid, self.diagonal))
        object.__setattr__(self, "_H", penalty_matrix(self.grid, self.phi, self.varrho, self.diagonal))

    @property
    def grid(self) -> TimeGrid:
        return self.alpha.grid

    @property
    def M(self) -> int:
        return self.alpha.M

    @property
    def K(self) -> VolterraMatrix:
        return self._K

    @property
    def H(self) -> VolterraMatrix:
        return self._H

    @property
    def g_values(self) -> np.ndarray:
        return np.zeros_like(self.alpha.values) if self.g is None else self.g.values

    @property
    def alpha_tilde(self) -> np.ndarray:
        return effective_alpha(self.alpha, self.X0, self.phi, self.varrho).values

    @property
    def has_penalty(self) -> bool:
        return self.phi > 0 or self.varrho > 0


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, PathEnsemble) else np.atleast_2d(np.asarray(u, dtype=float))


def conditional_adjoint(K, w: np.ndarray, projector: Projector) -> np.ndarray:
    """``sum_{j>=i} K[j,i] E_i[w_j]`` for every anchor ``i``.

    The diagonal term is known at ``t_i``. The strictly-future part is
    projected as one pathwise target per anchor.
    """
    E = K.entries if isinstance(K, VolterraMatrix) else np.asarray(K, dtype=float)
    diag = np.diag(E) * w
    future = w @ np.tril(E, -1)
    if projector.deterministic:
        return diag + future
    out = diag.copy()
    for i in range(w.shape[1] - 1):
        out[:, i] += projector.project(i, future[:, i])
    return out


def distortion(spec: ProblemSpec, u) -> np.ndarray:
    """``Z = g + G u`` on every path."""
    return spec.g_values + spec.K.apply(_values(u))


def impact_cost_process(spec: ProblemSpec, u) -> np.ndarray:
    """``I = gamma/2 u + h(Z)``."""
    uv = _values(u)
    return 0.5 * spec.gamma * uv + imp.h(spec.impact, distortion(spec, uv))


def apply_A(spec: ProblemSpec, u, projector: Projector) -> np.ndarray:
    """``A(u) = h(Z) + G*(h'(Z) u)``."""
    uv = _values(u)
    Z = distortion(spec, uv)
    return imp.h(spec.impact, Z) + conditional_adjoint(spec.K, imp.h_prime(spec.impact, Z) * uv,
                                                       projector)


def apply_A_tilde(spec: ProblemSpec, u, projector: Projector) -> np.ndarray:
    """Nonlinear remainder ``A(u) - G u - G* u``."""
    uv = _values(u)
    Z = distortion(spec, uv)
    w = (imp.h_prime(spec.impact, Z) - 1.0) * uv
    return imp.h(spec.impact, Z) - spec.K.apply(uv) + conditional_adjoint(spec.K, w, projector)


def pathwise_source(spec: ProblemSpec, u) -> np.ndarray:
    """Anticipating version of the scheme source ``Y``.

    Its conditional expectation at ``t_i`` of entry ``j >= i`` coincides with
    that of the true source by the tower property. This lets every regression
    run on pathwise quantities.
    """
    uv = _values(u)
    Z = distortion(spec, uv)
    w = (imp.h_prime(spec.impact, Z) - 1.0) * uv
    return spec.alpha_tilde - imp.h(spec.impact, Z) + spec.K.apply(uv) - spec.K.apply_transpose(w)


class LinearFredholmSolver:
    """Forward-sweep solver of ``gamma u + K u + K* u = Y`` with ``K = G + H``.

    ``K*`` involves conditional expectations. For anchor ``i`` let
    ``S_i = gamma I + (K + K^T)[i:, i:]`` and ``w_i = S_i^{-1} e_0``. Then

        u_i = E_i[ w_i . Y[i:] ] - w_i . K[i:, :i] u[:i].

    The ``w_i`` come from one reverse Cholesky factorisation
    ``S = R R^T`` (``R`` upper triangular); trailing blocks of ``R`` factor
    the trailing blocks of ``S``.
    """

    def __init__(self, Ktot: np.ndarray, gamma: float):
        self.Ktot = np.asarray(Ktot, dtype=float)
        self.gamma = float(gamma)
        N = self.Ktot.shape[0]
        S = self.gamma * np.eye(N) + self.Ktot + self.Ktot.T
        self.system = S
        L = cholesky(S[::-1, ::-1], lower=True)
        R = L[::-1, ::-1]
        W = np.zeros((N, N))
        for i in range(N):
            e = np.zeros(N - i)
            e[0] = 1.0 / R[i, i]
            W[i, i:] = solve_triangular(R[i:, i:].T, e, lower=True)
        self.weights = W
        C = np.zeros((N, N))
        for i in range(1, N):
            C[i, :i] = W[i, i:] @ self.Ktot[i:, :i]
        self.carry = C
        self.min_eig_hint = float(np.min(np.diag(R)) ** 2)

    @classmethod
    def for_problem(cls, spec: ProblemSpec) -> LinearFredholmSolver:
        return cls(spec.K.entries + spec.H.entries, spec.gamma)

    def solve(self, Y: np.ndarray, projector: Projector) -> np.ndarray:
        """Solve for pathwise source ``Y`` (shape ``(M, N)``)."""
        Y = np.atleast_2d(Y)
        targets = Y @ self.weights.T
        if projector.deterministic:
            return self._sweep(targets)
        cond = np.empty_like(targets)
        for i in range(Y.shape[1]):
            cond[:, i] = projector.project(i, targets[:, i])
        return self._sweep(cond)

    def solve_from_table(self, table) -> np.ndarray:
        """Same solve from a full table of estimates ``E_i[Y_j]``."""
        N = self.weights.shape[0]
        cond = np.stack([table.rows[i] @ self.weights[i, i:] for i in range(N)], axis=1)
        return self._sweep(cond)

    def _sweep(self, cond: np.ndarray) -> np.ndarray:
        u = np.zeros_like(cond)
        for i in range(cond.shape[1]):
            u[:, i] = cond[:, i] - u[:, :i] @ self.carry[i, :i]
        return u

    def residual(self, u: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Deterministic residual ``(gamma + K + K^T) u - Y``."""
        return np.atleast_2d(u) @ self.system.T - Y


def picard_linear_solve(Ktot: np.ndarray, gamma: float, Y: np.ndarray, projector: Projector,
                        tol: float = 1e-13, max_iter: int = 10_000,
                        damping: float = 1.0) -> np.ndarray:
    """Fixed-point oracle ``u <- (Y - K u - K* u) / gamma`` for the same equation.

    Converges when ``2 sqrt(T C_K) < gamma``; used to cross-check the sweep.
    """
    Ktot = np.asarray(Ktot, dtype=float)
    u = np.zeros_like(Y)
    for _ in range(max_iter):
        new = (Y - u @ Ktot.T - conditional_adjoint(Ktot, u, projector)) / gamma
        new = damping * new + (1.0 - damping) * u
        if np.max(np.abs(new - u)) <= tol * max(1.0, np.max(np.abs(new))):
            return new
        u = new
    raise RuntimeError("Picard iteration did not converge")


def pnl(spec: ProblemSpec, u) -> float:
    """``delta / M * sum_m sum_i (alpha - I^u) u``."""
    uv = _values(u)
    per_path = spec.grid.delta * np.sum((spec.alpha.values - impact_cost_process(spec, uv)) * uv, axis=1)
    return float(np.mean(per_path))


def pnl_per_path(spec: ProblemSpec, u) -> np.ndarray:
    uv = _values(u)
    return spec.grid.delta * np.sum((spec.alpha.values - impact_cost_process(spec, uv)) * uv, axis=1)


def foc_residual(spec: ProblemSpec, u, projector: Projector) -> np.ndarray:
    """Left minus right side of the optimality condition, per path and time."""
    uv = _values(u)
    Z = distortion(spec, uv)
    r = spec.gamma * uv + imp.h(spec.impact, Z)
    r += conditional_adjoint(spec.K, imp.h_prime(spec.impact, Z) * uv, projector)
    if spec.has_penalty:
        r += spec.H.apply(uv) + conditional_adjoint(spec.H, uv, projector)
    return r - spec.alpha_tilde


def residual_error(spec: ProblemSpec, u, projector: Projector) -> tuple[float, np.ndarray]:
    """``(E^{N,M}, E^N per path)``; ``E^N`` sums squared residuals, ``E^{N,M} = delta * mean``."""
    r = foc_residual(spec, u, projector)
    per_path = np.sum(r ** 2, axis=1)
    return float(spec.grid.delta * per_path.mean()), per_path


def l2_norm(x: np.ndarray, delta: float) -> float:
    """Discrete ``sqrt(E int x^2 dt)``."""
    return math.sqrt(delta * float(np.mean(np.sum(np.atleast_2d(x) ** 2, axis=1))))


@dataclass
class ContractionDiagnostics:
    C_G: float
    M_gamma: float
    L: float
    sup_h_prime: float
    C_tilde: float
    ratio: float

    @property
    def contracting(self) -> bool:
        return self.ratio < 1.0

    def to_dict(self) -> dict:
        return {"C_G": self.C_G, "M_gamma_estimate": self.M_gamma, "L_h_prime": self.L,
                "sup_h_prime": self.sup_h_prime, "C_tilde": self.C_tilde,
                "C_tilde_over_gamma": self.ratio, "contracting": self.contracting}


def contraction_diagnostics(spec: ProblemSpec, u_hat) -> ContractionDiagnostics:
    """Constants of the geometric convergence bound for the scheme.

    ``M_gamma`` (an essential supremum) is estimated by the largest per-path
    ``int u^2 dt`` in the sample.
    """
    uv = _values(u_hat)
    T = spec.grid.T
    C_G = admissibility_constant(spec.kernel, T)
    M_gamma = float(np.max(spec.grid.delta * np.sum(uv ** 2, axis=1)))
    L = spec.impact.lipschitz_derivative
    hp = spec.impact.sup_derivative
    C_tilde = 2.0 * math.sqrt(T * C_G) * (1.0 + hp + 0.5 * L * math.sqrt(C_G * M_gamma))
    return ContractionDiagnostics(C_G, M_gamma, L, hp, C_tilde, C_tilde / spec.gamma)


def penalty_admissibility_constant(T: float, phi: float, varrho: float) -> float:
    """``sup_t t (phi (T - t) + varrho)^2``."""
    cands = [T * varrho ** 2]
    if phi > 0:
        t_star = (phi * T + varrho) / (3.0 * phi)
        if 0 <= t_star <= T:
            cands.append(t_star * (phi * (T - t_star) + varrho) ** 2)
    return max(cands)


def apriori_bound(spec: ProblemSpec, projector: Projector | None = None) -> np.ndarray | None:
    """Per-path upper bound on ``||u_hat||_{L^2}``, or ``None`` when ``gamma`` is too small."""
    T = spec.grid.T
    d = spec.grid.delta
    sqT = math.sqrt(T)
    C_G = admissibility_constant(spec.kernel, T)
    C_Gs = adjoint_admissibility_constant(spec.kernel, T)
    C_H = penalty_admissibility_constant(T, spec.phi, spec.varrho)
    hp = spec.impact.sup_derivative
    c_hg = math.sqrt(C_H) + hp * math.sqrt(C_G)
    gap = spec.gamma - 2.0 * sqT * c_hg
    if gap <= 0:
        return None
    second = math.sqrt(C_H) + 0.5 * hp * (math.sqrt(C_G) + math.sqrt(T * C_Gs) * c_hg / gap)
    if not spec.gamma > 2.0 * sqT * max(c_hg, second):
        return None
    c_gamma = spec.gamma - sqT * (2.0 * math.sqrt(C_H)
                                  + hp * (math.sqrt(C_G) + math.sqrt(T * C_Gs) * c_hg / gap))
    at = spec.alpha_tilde
    hg = imp.h(spec.impact, spec.g_values)
    norm_at = np.sqrt(d * np.sum(at ** 2, axis=1))
    norm_hg = np.sqrt(d * np.sum(hg ** 2, axis=1))
    if projector is None:
        projector = Projector.identity()

    def integrated_cond(sq_norm):
        if projector.deterministic:
            return np.sqrt(T * sq_norm)
        cond = np.stack([projector.project(i, sq_norm) for i in range(spec.grid.N)], axis=1)
        return np.sqrt(d * np.sum(np.maximum(cond, 0.0), axis=1))

    extra = hp * math.sqrt(C_Gs) / gap * (integrated_cond(norm_at ** 2) + integrated_cond(norm_hg ** 2))
    return (norm_at + norm_hg + extra) / c_gamma


@dataclass
class SchemeReport:
    """Per-iteration metrics and the final trajectories of a scheme run."""

    residual: list = field(default_factory=list)
    pnl: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    u: np.ndarray | None = None
    inventory: np.ndarray | None = None
    distortion: np.ndarray | None = None
    impact_cost: np.ndarray | None = None
    residual_per_path: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    iterates: list = field(default_factory=list)
    iterations: int = 0
    stopped_early: bool = False
    aborted: str = ""
    elapsed: float = 0.0

    def metrics_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": list(map(float, self.residual)),
                "pnl": list(map(float, self.pnl)), "step_norm": list(map(float, self.step_norm)),
                "diagnostics": self.diagnostics, "stopped_early": self.stopped_early,
                "aborted": self.aborted, "elapsed_seconds": self.elapsed}


def _uses_rate(config: RegressionConfig | None) -> bool:
    return config is not None and any(_parse_feature(f)[1] == "u" for f in config.features)


def warmup_config(config: RegressionConfig) -> RegressionConfig:
    """Same basis with every ``u`` state variable replaced by ``alpha``."""
    feats = []
    for f in config.features:
        parts = f.split(":")
        feats.append(":".join("alpha" if (k == (1 if len(parts) > 1 else 0) and x == "u") else x
                              for k, x in enumerate(parts)))
    return RegressionConfig(tuple(feats), config.family, config.degree, config.ridge,
                            config.standardize)


class _ProjectorFactory:
    """Builds projectors, reusing them when the state variables ignore the iterate."""

    def __init__(self, spec: ProblemSpec, config: RegressionConfig | None, deterministic: bool,
                 extra: dict | None = None):
        self.spec = spec
        self.config = config
        self.deterministic = deterministic
        self.extra = extra or {}
        self._static = None

    def __call__(self, u: np.ndarray) -> Projector:
        if self.deterministic:
            return Projector.identity()
        if not _uses_rate(self.config):
            if self._static is None:
                self._static = Projector(feature_matrix(self.config, self._ensembles(None),
                                                        self.spec.kernel), self.config)
            return self._static
        if not np.any(u):
            # the zero starting iterate carries no path information; regress on
            # the signal instead until the iterate does
            cfg = warmup_config(self.config)
            return Projector(feature_matrix(cfg, self._ensembles(None), self.spec.kernel), cfg)
        return Projector(feature_matrix(self.config, self._ensembles(u), self.spec.kernel), self.config)

    def _ensembles(self, u):
        ens = {"alpha": self.spec.alpha, **self.extra}
        if self.spec.g is not None:
            ens["g"] = self.spec.g
        if u is not None:
            ens["u"] = self.spec.alpha.replace(u, "u")
        return ens


def iterate_scheme(spec: ProblemSpec, regression: RegressionConfig | None = None,
                   iterations: int = 30, metric_regression: RegressionConfig | None = None,
                   deterministic: bool | None = None, tol: float | None = None,
                   keep_iterates: bool = False, extra_ensembles: dict | None = None,
                   record_metrics: bool = True) -> SchemeReport:
    """Run the linearised iteration from ``u = 0``.

    Parameters
    ----------
    regression : RegressionConfig
        State variables used inside the linear solves. Features may refer to
        ``"u"`` (the previous iterate), ``"alpha"``, ``"g"`` and any entry of
        ``extra_ensembles``.
    metric_regression : RegressionConfig
        Independent basis for the residual metric; defaults to ``regression``.
    deterministic : bool
        Skip all regressions. Defaults to ``spec.M == 1``.
    tol : float
        Optional early stop on the relative step ``||u^n - u^{n-1}|| / ||u^n||``.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if deterministic is None:
        deterministic = spec.M == 1
    if not deterministic and regression is None:
        raise ValueError("stochastic runs need a regression config")
    t0 = time.perf_counter()
    solver = LinearFredholmSolver.for_problem(spec)
    solve_proj = _ProjectorFactory(spec, regression, deterministic, extra_ensembles)
    metric_proj = _ProjectorFactory(spec, metric_regression or regression, deterministic,
                                    extra_ensembles)
    d = spec.grid.delta
    rep = SchemeReport()
    u = np.zeros_like(spec.alpha.values)
    measured_at = 0
    for n in range(1, iterations + 1):
        Y = pathwise_source(spec, u)
        new = solver.solve(Y, solve_proj(u))
        step = l2_norm(new - u, d)
        u = new
        rep.iterations = n
        rep.step_norm.append(step)
        if keep_iterates:
            rep.iterates.append(u.copy())
        if record_metrics or n == iterations:
            err, per_path = residual_error(spec, u, metric_proj(u))
            rep.residual.append(err)
            rep.pnl.append(pnl(spec, u))
            rep.residual_per_path = per_path
            measured_at = n
            if not math.isfinite(err):
                rep.aborted = f"non-finite residual at iteration {n}"
                log.error(rep.aborted)
                break
        if tol is not None and step <= tol * max(l2_norm(u, d), 1e-300):
            rep.stopped_early = True
            break
    if measured_at != rep.iterations:
        err, per_path = residual_error(spec, u, metric_proj(u))
        rep.residual.append(err)
        rep.pnl.append(pnl(spec, u))
        rep.residual_per_path = per_path
    rep.u = u
    uens = spec.alpha.replace(u, "u")
    rep.inventory = inventory_from_rate(uens, spec.X0).values
    rep.distortion = distortion(spec, u)
    rep.impact_cost = impact_cost_process(spec, u)
    diag = contraction_diagnostics(spec, u).to_dict()
    diag["terminal_inventory_mean"] = float(np.mean(terminal_inventory(uens, spec.X0)))
    diag["deterministic"] = bool(deterministic)
    rep.diagnostics = diag
    rep.elapsed = time.perf_counter() - t0
    return rep

"""Always-on property checks behind the ``validate`` subcommand.

Each check returns ``(passed, detail)``. The suite is deterministic (fixed
seeds) and sized to finish well within two minutes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import impact as imp
from .condexp import Projector, RegressionConfig, basis_expand, feature_matrix
from .fredholm import LinearFredholmSolver, ProblemSpec, apply_A, picard_linear_solve
from .grid_paths import PathEnsemble, TimeGrid, left_integral
from .kernels import ExponentialSum, ShiftedFractional, nystrom, penalty_matrix


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "seconds": self.seconds}


def check_adjoint_identity(seed: int = 0):
    grid = TimeGrid(1.0, 60)
    k = ExponentialSum((1.0, 2.0), (1.0, 10.0))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((4, grid.N))
    alpha = PathEnsemble(grid, np.zeros_like(u))
    spec = ProblemSpec(1.0, k, imp.Identity(), alpha)
    got = apply_A(spec, u, Projector.identity())
    want = u @ spec.K.symmetrized.T
    err = float(np.max(np.abs(got - want)))
    return err <= 1e-12, f"max |A(u) - (K + K^T) u| = {err:.2e}"


def check_penalty_identity(seed: int = 0, trials: int = 100):
    grid = TimeGrid(2.0, 50)
    phi, varrho = 0.7, 3.0
    H = penalty_matrix(grid, phi, varrho).entries
    rng = np.random.default_rng(seed)
    worst_rel, worst_min = 0.0, math.inf
    d = grid.delta
    for _ in range(trials):
        u = rng.standard_normal(grid.N) * rng.uniform(0.1, 10)
        quad = d * float(u @ (H + H.T) @ u)
        X = d * np.concatenate([[0.0], np.cumsum(u)])
        direct = varrho * X[-1] ** 2 + phi * d * float(np.sum(X[1:-1] ** 2))
        worst_rel = max(worst_rel, abs(quad - direct) / max(abs(direct), 1e-300))
        worst_min = min(worst_min, quad)
    ok = worst_rel <= 1e-10 and worst_min >= -1e-12
    return ok, f"max relative gap {worst_rel:.2e}, min quadratic form {worst_min:.3e}"


def check_h_knots_and_derivatives(seed: int = 0):
    worst_jump, worst_fd, worst_fd2 = 0.0, 0.0, 0.0
    for x0, c in [(0.5, 0.8), (0.01, 0.5), (0.1, 0.6), (1.0, 0.95)]:
        p = imp.PiecewisePower(x0, c)
        for s in (-1.0, 1.0):
            k = s * x0
            e = 1e-9 * x0
            worst_jump = max(worst_jump, abs(imp.h(p, k + e) - imp.h(p, k - e)) / x0,
                             abs(imp.h_prime(p, k + e) - imp.h_prime(p, k - e)))
        x = np.random.default_rng(seed).uniform(-20 * x0, 20 * x0, 400)
        x = x[np.abs(np.abs(x) - x0) > 1e-3 * x0]
        step = 1e-6 * np.maximum(np.abs(x), x0)
        fd = (imp.h(p, x + step) - imp.h(p, x - step)) / (2 * step)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - imp.h_prime(p, x)))))
        fd2 = (imp.h_prime(p, x + step) - imp.h_prime(p, x - step)) / (2 * step)
        scale = np.maximum(1.0, np.abs(imp.h_second(p, x)))
        worst_fd2 = max(worst_fd2, float(np.max(np.abs(fd2 - imp.h_second(p, x)) / scale)))
    ok = worst_jump <= 1e-6 and worst_fd <= 1e-6 and worst_fd2 <= 1e-4
    return ok, (f"knot jump {worst_jump:.1e}, h' finite-difference gap {worst_fd:.1e}, "
                f"h'' gap {worst_fd2:.1e}")


def check_oddness(seed: int = 0):
    x = np.random.default_rng(seed).uniform(-50, 50, 1000)
    worst = 0.0
    for c in (0.5, 0.7, 1.0):
        p = imp.PiecewisePower(0.3, c)
        worst = max(worst, float(np.max(np.abs(imp.h(p, -x) + imp.h(p, x)))),
                    float(np.max(np.abs(imp.h_prime(p, -x) - imp.h_prime(p, x)))))
    return worst <= 1e-12, f"max oddness defect {worst:.1e}"


def check_arrow_pratt(seed: int = 0):
    worst = 0.0
    for c in (0.5, 0.6, 0.8, 0.95):
        p = imp.PiecewisePower(0.2, c)
        at_knot = float(imp.arrow_pratt_ratio(p, 0.2 * (1 + 1e-10)))
        beyond = imp.arrow_pratt_ratio(p, np.linspace(0.2 * 1.001, 100, 500))
        target = imp.arrow_pratt_sup(p)
        worst = max(worst, abs(at_knot - target), max(0.0, float(np.max(beyond)) - target))
    return worst <= 1e-8, f"max gap to (1 - c) / c: {worst:.1e}"


def _refinement_rate(k, exact: Callable[[np.ndarray], np.ndarray], diagonal: str) -> float:
    errs, steps = [], []
    for N in (51, 101, 201, 401):
        grid = TimeGrid(1.0, N)
        approx = nystrom(k, grid, diagonal).apply(np.ones((1, N)))[0]
        errs.append(float(np.max(np.abs(approx - exact(grid.points)))))
        steps.append(grid.delta)
    return float(np.polyfit(np.log(steps), np.log(errs), 1)[0])


def check_nystrom_rates(seed: int = 0):
    rates = {}
    e = ExponentialSum((1.0,), (2.0,))
    rates["exponential"] = _refinement_rate(e, lambda t: (1 - np.exp(-2 * t)) / 2, "half")
    f = ShiftedFractional(1.0, 0.6, 0.1)
    rates["shifted_fractional"] = _refinement_rate(
        f, lambda t: ((t + 0.1) ** 0.6 - 0.1 ** 0.6) / 0.6, "half")
    s = ShiftedFractional(1.0, 0.6, 0.0)
    rates["fractional"] = _refinement_rate(s, lambda t: t ** 0.6 / 0.6, "half")
    # first order for smooth kernels; the singular kernel loses at most the singularity order
    ok = rates["exponential"] >= 0.9 and rates["shifted_fractional"] >= 0.9 and rates["fractional"] >= 0.5
    return ok, ", ".join(f"{k} {v:.2f}" for k, v in rates.items())


def check_picard_vs_sweep(seed: int = 0):
    grid = TimeGrid(1.0, 80)
    K = nystrom(ExponentialSum((1.0,), (1.0,)), grid).entries
    H = penalty_matrix(grid, 0.5, 0.5).entries
    Ktot = K + H
    gamma = 6.0
    Y = np.random.default_rng(seed).standard_normal((3, grid.N))
    sweep = LinearFredholmSolver(Ktot, gamma).solve(Y, Projector.identity())
    picard = picard_linear_solve(Ktot, gamma, Y, Projector.identity(), tol=1e-15)
    err = float(np.max(np.abs(sweep - picard)))
    return err <= 1e-8, f"max |sweep - picard| = {err:.1e}"


def check_lsmc_constant(seed: int = 0):
    grid = TimeGrid(1.0, 20)
    rng = np.random.default_rng(seed)
    ens = PathEnsemble(grid, rng.standard_normal((500, grid.N)).cumsum(axis=1))
    cfg = RegressionConfig(("alpha", "int:alpha"), "laguerre", 3, 1e-6)
    proj = Projector(feature_matrix(cfg, {"alpha": ens}), cfg)
    worst = max(float(np.max(np.abs(proj.project(i, np.full(500, 3.25)) - 3.25)))
                for i in range(grid.N))
    return worst <= 1e-10, f"max deviation on constant target {worst:.1e}"


def check_basis_count(seed: int = 0):
    bad = []
    X = np.random.default_rng(seed).uniform(size=(30, 5))
    for P in range(1, 6):
        for d in range(0, 6):
            n = basis_expand(X[:, :P], "laguerre", d).shape[1]
            if n != math.comb(P + d, d):
                bad.append((P, d, n))
    return not bad, "all C(P + d, d)" if not bad else f"mismatches {bad}"


def check_monotonicity_sampler(seed: int = 0, pairs: int = 100):
    grid = TimeGrid(1.0, 40)
    worst = math.inf
    fails = []
    for c in (0.5, 0.8, 1.0):
        p = imp.PiecewisePower(0.5, c)
        cond = imp.check_exponential_monotonicity_conditions(p, samples=2000, seed=seed)
        spec = ProblemSpec(1.0, ExponentialSum((1.0,), (1.0,)), p,
                           PathEnsemble(grid, np.zeros((8, grid.N))))
        rep = imp.sample_monotonicity_of_A(lambda u: apply_A(spec, u, Projector.identity()),
                                           (8, grid.N), grid.delta, pairs, seed, scale=2.0)
        worst = min(worst, rep.min_value)
        if not (rep.passed and cond.passed):
            fails.append(c)
    return not fails, f"min sampled <u - v, A(u) - A(v)> = {worst:.3e}" + (
        f"; failures for c in {fails}" if fails else "")


CHECKS: list[tuple[str, Callable]] = [
    ("adjoint identity", check_adjoint_identity),
    ("penalty quadratic form identity", check_penalty_identity),
    ("h knot continuity and derivatives", check_h_knots_and_derivatives),
    ("h oddness", check_oddness),
    ("Arrow-Pratt supremum", check_arrow_pratt),
    ("Nystrom refinement rates", check_nystrom_rates),
    ("Picard vs forward sweep", check_picard_vs_sweep),
    ("LSMC constant target", check_lsmc_constant),
    ("basis count", check_basis_count),
    ("monotonicity sampler", check_monotonicity_sampler),
]


def run_validation(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out

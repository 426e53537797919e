import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlimpact import impact as imp
from nlimpact.condexp import Projector, RegressionConfig, feature_matrix
from nlimpact.fredholm import (LinearFredholmSolver, ProblemSpec, apply_A, apply_A_tilde, apriori_bound,
                               conditional_adjoint, contraction_diagnostics, distortion, foc_residual,
                               impact_cost_process, iterate_scheme, l2_norm, pathwise_source,
                               penalty_admissibility_constant, picard_linear_solve, pnl, residual_error,
                               warmup_config)
from nlimpact.grid_paths import OUSignalParams, PathEnsemble, TimeGrid, make_signal
from nlimpact.kernels import Constant, ExponentialSum, ShiftedFractional, nystrom, penalty_matrix

ID = Projector.identity()


def _spec(N=4, M=2, gamma=1.0, kernel=None, impact=None, seed=0, **kw):
    g = TimeGrid(1.0, N)
    alpha = PathEnsemble(g, np.random.default_rng(seed).standard_normal((M, N)))
    return ProblemSpec(gamma, kernel or ExponentialSum((1.0,), (1.0,)),
                       impact or imp.PiecewisePower(0.5, 0.8), alpha, **kw)


def _deterministic_signal(N=200):
    g = TimeGrid(1.0, N)
    return make_signal(OUSignalParams(-40.0, 1.0, 0.0, 20.0), g, M=1)


class TestProblemSpec:
    def test_rejects_bad_constants(self):
        with pytest.raises(ValueError):
            _spec(gamma=0.0)
        with pytest.raises(ValueError):
            _spec(phi=-1.0)

    def test_rejects_mismatched_g(self):
        s = _spec()
        with pytest.raises(ValueError):
            ProblemSpec(1.0, s.kernel, s.impact, s.alpha, g=PathEnsemble(TimeGrid(1.0, 5), np.zeros((2, 5))))

    def test_alpha_tilde(self):
        s = _spec(X0=2.0, phi=0.5, varrho=3.0)
        tau = s.grid.time_to_maturity
        assert np.allclose(s.alpha_tilde, s.alpha.values - 2.0 * (0.5 * tau + 3.0))
        assert s.has_penalty and not _spec().has_penalty


class TestOperators:
    def test_distortion_constant_kernel(self):
        s = _spec(N=5, M=1, kernel=Constant(1.0))
        Z = distortion(s, np.ones((1, 5)))[0]
        d = s.grid.delta
        assert np.allclose(Z, d * np.arange(5) + d / 2)
        s0 = _spec(N=5, M=1, kernel=Constant(1.0), diagonal="none")
        assert np.allclose(distortion(s0, np.ones((1, 5)))[0], d * np.arange(5))

    def test_distortion_adds_g(self):
        s = _spec(N=4, M=2)
        g = PathEnsemble(s.grid, np.full((2, 4), 0.3))
        sg = ProblemSpec(1.0, s.kernel, s.impact, s.alpha, g=g)
        assert np.allclose(distortion(sg, np.zeros((2, 4))), 0.3)

    def test_impact_cost(self):
        s = _spec(gamma=2.0, kernel=Constant(0.0))
        u = np.full((2, 4), 0.7)
        assert np.allclose(impact_cost_process(s, u), 0.7)

    def test_apply_A_double_loop(self):
        s = _spec(N=4, M=3, seed=1)
        u = np.random.default_rng(2).standard_normal((3, 4))
        K = s.K.entries
        p = s.impact
        want = np.zeros_like(u)
        for m in range(3):
            Z = [sum(K[i, j] * u[m, j] for j in range(i + 1)) for i in range(4)]
            for i in range(4):
                want[m, i] = imp.h(p, Z[i]) + sum(K[j, i] * imp.h_prime(p, Z[j]) * u[m, j]
                                                  for j in range(i, 4))
        assert np.allclose(apply_A(s, u, ID), want, atol=1e-13)

    def test_A_tilde_vanishes_for_identity_impact(self, stochastic_signal):
        s = ProblemSpec(1.0, ShiftedFractional(1.0, 0.6, 0.01), imp.Identity(), stochastic_signal.alpha)
        u = np.random.default_rng(0).standard_normal(stochastic_signal.alpha.values.shape)
        cfg = RegressionConfig(("alpha",), "laguerre", 2)
        P = Projector(feature_matrix(cfg, {"alpha": stochastic_signal.alpha}), cfg)
        assert np.max(np.abs(apply_A_tilde(s, u, P))) <= 1e-12
        assert np.max(np.abs(apply_A_tilde(s, u, ID))) <= 1e-12

    def test_conditional_adjoint_identity_is_transpose(self):
        s = _spec(N=6, M=2)
        w = np.random.default_rng(4).standard_normal((2, 6))
        assert np.allclose(conditional_adjoint(s.K, w, ID), w @ s.K.entries)
        assert np.allclose(conditional_adjoint(s.K.entries, w, ID), w @ s.K.entries)

    def test_pathwise_source_at_zero(self):
        s = _spec(X0=1.0, varrho=2.0)
        assert np.allclose(pathwise_source(s, np.zeros((2, 4))), s.alpha_tilde)


class TestLinearSolver:
    @given(st.integers(2, 30), st.floats(0.05, 5.0), st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_sweep_solves_system(self, N, gamma, seed):
        g = TimeGrid(1.0, N)
        Ktot = nystrom(ExponentialSum((1.0, 2.0), (0.5, 8.0)), g).entries
        Ktot = Ktot + penalty_matrix(g, 0.3, 1.0).entries
        Y = np.random.default_rng(seed).standard_normal((2, N))
        sol = LinearFredholmSolver(Ktot, gamma)
        u = sol.solve(Y, ID)
        assert np.max(np.abs(sol.residual(u, Y))) <= 1e-9 * max(1.0, np.abs(Y).max())

    def test_zero_kernel(self):
        Y = np.random.default_rng(0).standard_normal((3, 7))
        assert np.allclose(LinearFredholmSolver(np.zeros((7, 7)), 2.0).solve(Y, ID), Y / 2.0)

    def test_single_step(self):
        u = LinearFredholmSolver(np.array([[0.25]]), 1.5).solve(np.array([[4.0]]), ID)
        assert u[0, 0] == pytest.approx(4.0 / 2.0)

    def test_agrees_with_picard(self):
        g = TimeGrid(1.0, 50)
        K = nystrom(ShiftedFractional(1.0, 0.6, 0.1), g).entries
        Y = np.random.default_rng(9).standard_normal((2, 50))
        a = LinearFredholmSolver(K, 10.0).solve(Y, ID)
        b = picard_linear_solve(K, 10.0, Y, ID, tol=1e-15)
        assert np.max(np.abs(a - b)) <= 1e-10

    def test_table_route_matches(self, stochastic_signal):
        from nlimpact.condexp import condexp_table
        alpha = stochastic_signal.alpha
        # with a negligible ridge the basis reproduces alpha^2, as the table assumes on its diagonal
        cfg = RegressionConfig(("alpha", "int:alpha"), "laguerre", 2, ridge=1e-13)
        P = Projector(feature_matrix(cfg, {"alpha": alpha}), cfg)
        sol = LinearFredholmSolver(nystrom(ExponentialSum((1.0,), (1.0,)), alpha.grid).entries, 1.0)
        Y = alpha.values ** 2
        a = sol.solve(Y, P)
        b = sol.solve_from_table(condexp_table(alpha.replace(Y), P))
        assert np.max(np.abs(a - b)) <= 1e-9 * np.abs(a).max()

    def test_adapted_solution(self, stochastic_signal):
        # u_i only depends on what the basis sees up to t_i
        alpha = stochastic_signal.alpha
        cfg = RegressionConfig(("alpha", "int:alpha"), "laguerre", 2)
        F = feature_matrix(cfg, {"alpha": alpha})
        sol = LinearFredholmSolver(nystrom(ExponentialSum((1.0,), (1.0,)), alpha.grid).entries, 1.0)
        Y = alpha.values.copy()
        u = sol.solve(Y, Projector(F, cfg))
        i = 10
        perm = np.random.default_rng(0).permutation(alpha.M)
        F2, Y2 = F.copy(), Y.copy()
        F2[:, i + 1:] = F2[perm, i + 1:]
        u2 = sol.solve(Y2, Projector(F2, cfg))
        assert np.allclose(u[:, :i + 1], u2[:, :i + 1], atol=1e-12)
        assert not np.allclose(u[:, i + 1:], u2[:, i + 1:])


class TestMetrics:
    def test_pnl_three_points(self):
        s = _spec(N=3, M=2, gamma=0.5, seed=3)
        u = np.array([[1.0, -2.0, 0.5], [0.0, 1.0, 3.0]])
        K = s.K.entries
        d = s.grid.delta
        total = 0.0
        for m in range(2):
            for i in range(3):
                Z = sum(K[i, j] * u[m, j] for j in range(i + 1))
                I = 0.25 * u[m, i] + imp.h(s.impact, Z)
                total += d * (s.alpha.values[m, i] - I) * u[m, i]
        assert pnl(s, u) == pytest.approx(total / 2, rel=1e-13)

    def test_residual_at_zero(self):
        s = _spec(N=5, M=3, X0=0.5, varrho=1.0)
        E, per = residual_error(s, np.zeros((3, 5)), ID)
        assert E == pytest.approx(s.grid.delta / 3 * np.sum(s.alpha_tilde ** 2))
        assert np.allclose(per, np.sum(s.alpha_tilde ** 2, axis=1))

    def test_foc_vanishes_at_linear_solution(self):
        s = _spec(N=30, M=2, impact=imp.Identity(), phi=0.4, varrho=2.0, X0=1.0)
        u = LinearFredholmSolver.for_problem(s).solve(s.alpha_tilde, ID)
        assert np.max(np.abs(foc_residual(s, u, ID))) <= 1e-10

    def test_l2_norm(self):
        assert l2_norm(np.ones((3, 4)), 0.25) == pytest.approx(1.0)


class TestDiagnostics:
    def test_identity_impact(self):
        s = _spec(impact=imp.Identity())
        d = contraction_diagnostics(s, np.ones((2, 4)))
        assert d.L == 0.0 and d.sup_h_prime == 1.0
        assert d.C_tilde == pytest.approx(4 * math.sqrt(d.C_G))
        assert d.M_gamma == pytest.approx(4 * s.grid.delta)

    def test_zero_kernel_contracts(self):
        d = contraction_diagnostics(_spec(kernel=Constant(0.0)), np.ones((2, 4)))
        assert d.C_tilde == 0.0 and d.contracting
        assert set(d.to_dict()) == {"C_G", "M_gamma_estimate", "L_h_prime", "sup_h_prime", "C_tilde",
                                    "C_tilde_over_gamma", "contracting"}

    def test_penalty_constant(self):
        assert penalty_admissibility_constant(1.0, 0.0, 2.0) == pytest.approx(4.0)
        T, phi, rho = 2.0, 3.0, 0.5
        t = np.linspace(0, T, 200_001)
        assert penalty_admissibility_constant(T, phi, rho) == pytest.approx(
            np.max(t * (phi * (T - t) + rho) ** 2), rel=1e-8)

    def test_apriori_zero_kernel(self):
        s = _spec(N=10, M=3, gamma=2.0, kernel=Constant(0.0))
        b = apriori_bound(s)
        want = np.sqrt(s.grid.delta * np.sum(s.alpha_tilde ** 2, axis=1)) / 2.0
        assert np.allclose(b, want)

    def test_apriori_small_gamma(self):
        assert apriori_bound(_spec(gamma=0.1)) is None

    def test_apriori_dominates_solution(self):
        sig = _deterministic_signal(200)
        s = ProblemSpec(5.0, ExponentialSum((1.0,), (1.0,)), imp.PiecewisePower(0.5, 0.8), sig.alpha)
        b = apriori_bound(s)
        assert b is not None
        rep = iterate_scheme(s, iterations=40)
        assert l2_norm(rep.u, s.grid.delta) <= b[0]


class TestScheme:
    def test_identity_impact_one_step(self):
        sig = _deterministic_signal(100)
        s = ProblemSpec(1.0, ExponentialSum((1.0,), (1.0,)), imp.Identity(), sig.alpha)
        rep = iterate_scheme(s, iterations=1)
        assert rep.residual[-1] <= 1e-20

    @pytest.mark.parametrize("kernel", [ExponentialSum((1.0,), (1.0,)),
                                        ExponentialSum((2.074, 3.394), (0.8281, 21.14)),
                                        ShiftedFractional(1.0, 0.6, 0.0)])
    def test_deterministic_convergence(self, kernel):
        sig = _deterministic_signal(200)
        s = ProblemSpec(1.0, kernel, imp.PiecewisePower(0.5, 0.8), sig.alpha)
        rep = iterate_scheme(s, iterations=60)
        r = np.array(rep.residual)
        assert r[-1] < 1e-12
        head = r[r > 1e-25]
        assert np.all(np.diff(head) < 0)

    def test_geometric_decay_when_contracting(self):
        sig = _deterministic_signal(100)
        s = ProblemSpec(8.0, ExponentialSum((1.0,), (1.0,)), imp.PiecewisePower(0.5, 0.8), sig.alpha)
        rep = iterate_scheme(s, iterations=12)
        assert rep.diagnostics["contracting"]
        steps = np.array(rep.step_norm)
        ratio = rep.diagnostics["C_tilde_over_gamma"]
        # step norms shrink at least as fast as the contraction constant
        assert np.all(steps[1:] <= ratio * steps[:-1] + 1e-14)

    def test_early_stop(self):
        sig = _deterministic_signal(60)
        s = ProblemSpec(1.0, ExponentialSum((1.0,), (1.0,)), imp.PiecewisePower(0.5, 0.8), sig.alpha)
        rep = iterate_scheme(s, iterations=100, tol=1e-8, record_metrics=False)
        assert rep.stopped_early and rep.iterations < 100
        assert len(rep.residual) == 1

    def test_metrics_dict(self):
        sig = _deterministic_signal(30)
        s = ProblemSpec(1.0, ExponentialSum((1.0,), (1.0,)), imp.PiecewisePower(0.5, 0.8), sig.alpha)
        m = iterate_scheme(s, iterations=3).metrics_dict()
        assert {"iterations", "residual", "pnl", "step_norm", "diagnostics", "stopped_early", "aborted",
                "elapsed_seconds"} <= set(m)

    def test_rejects(self):
        s = _spec(M=5)
        with pytest.raises(ValueError):
            iterate_scheme(s, iterations=0)
        with pytest.raises(ValueError):
            iterate_scheme(s, regression=None, deterministic=False)

    def test_warmup_config(self):
        c = RegressionConfig(("u", "int:u", "exp:u:1", "alpha", "kernel:u"), "hermite", 2)
        w = warmup_config(c)
        assert w.features == ("alpha", "int:alpha", "exp:alpha:1", "alpha", "kernel:alpha")
        assert (w.family, w.degree) == ("hermite", 2)

    def test_stochastic_smoke(self, stochastic_signal):
        s = ProblemSpec(1.0, ExponentialSum((1.0,), (1.0,)), imp.PiecewisePower(0.5, 0.8),
                        stochastic_signal.alpha)
        reg = RegressionConfig(("u", "int:u", "exp:u:1"), "laguerre", 2)
        metric = RegressionConfig(("alpha", "int:alpha", "exp:alpha:1"), "laguerre", 3)
        rep = iterate_scheme(s, reg, iterations=8, metric_regression=metric)
        assert all(math.isfinite(x) for x in rep.residual)
        start = residual_error(s, np.zeros_like(rep.u), ID)[0]
        assert rep.residual[-1] < 1e-3 * start
        # the rate varies across paths once the warmup basis feeds path information in
        assert np.std(rep.u[:, 5]) > 1e-3
        assert rep.inventory.shape == rep.u.shape
        assert not rep.diagnostics["deterministic"]

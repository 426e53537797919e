import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlimpact.grid_paths import (OUSignalParams, PathEnsemble, TimeGrid, alpha_from_drift,
                                 effective_alpha, gaussian_increments, inventory_from_rate,
                                 left_integral, make_signal, simulate_ou, terminal_inventory)


class TestTimeGrid:
    def test_endpoints_exact(self):
        g = TimeGrid(0.7, 33)
        assert g.points[0] == 0.0 and g.points[-1] == 0.7

    @given(st.floats(1e-3, 1e3), st.integers(2, 2000))
    def test_uniform_and_increasing(self, T, N):
        g = TimeGrid(T, N)
        d = np.diff(g.points)
        assert np.all(d > 0)
        assert np.max(np.abs(d - g.delta)) <= 1e-12 * T
        assert g.delta == pytest.approx(T / (N - 1))

    @pytest.mark.parametrize("T,N", [(0.0, 10), (-1.0, 10), (1.0, 1)])
    def test_rejects_bad_grid(self, T, N):
        with pytest.raises(ValueError):
            TimeGrid(T, N)


class TestPathEnsemble:
    def test_rejects_nonfinite(self):
        g = TimeGrid(1.0, 3)
        with pytest.raises(ValueError):
            PathEnsemble(g, np.array([[0.0, np.nan, 1.0]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            PathEnsemble(TimeGrid(1.0, 3), np.zeros((2, 4)))

    def test_antithetic_needs_even_rows(self):
        with pytest.raises(ValueError):
            PathEnsemble(TimeGrid(1.0, 3), np.zeros((3, 3)), antithetic=True)


class TestSimulateOU:
    def test_deterministic_reference_path(self):
        g = TimeGrid(1.0, 200)
        p = OUSignalParams(-40.0, 1.0, 0.0, 20.0)
        ens = simulate_ou(p, g, M=3, seed=9)
        want = -40.0 + 60.0 * np.exp(-g.points)
        assert np.max(np.abs(ens.values - want) / np.abs(want).max()) <= 1e-12

    def test_zero_ensemble(self):
        ens = simulate_ou(OUSignalParams(0.0, 1.0, 0.0, 0.0), TimeGrid(1.0, 20), M=4)
        assert np.all(ens.values == 0.0)

    @pytest.mark.parametrize("theta,kappa,i0", [(-40, 1, 20), (3, 0.2, -1), (40, 5, 10)])
    def test_exact_transition_without_noise(self, theta, kappa, i0):
        g = TimeGrid(2.0, 57)
        p = OUSignalParams(theta, kappa, 0.0, i0)
        ens = simulate_ou(p, g, M=1)
        assert np.allclose(ens.values[0], p.mean_path(g.points), rtol=1e-12, atol=1e-12 * abs(p.level))

    def test_reject_bad_counts(self):
        p = OUSignalParams(0.0, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            simulate_ou(p, TimeGrid(1.0, 5), M=0)
        with pytest.raises(ValueError):
            simulate_ou(p, TimeGrid(1.0, 5), M=3, antithetic=True)

    def test_reject_nonpositive_kappa(self):
        with pytest.raises(ValueError):
            OUSignalParams(0.0, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            OUSignalParams(0.0, 1.0, -1.0, 0.0)

    def test_antithetic_increments_cancel(self):
        z = gaussian_increments(11, 10, 50, antithetic=True)
        assert np.all(z.sum(axis=0) == 0.0)
        assert np.all(z[0] == -z[1])

    def test_same_seed_bitwise(self):
        p = OUSignalParams(-4.0, 1.0, 0.5, 2.0)
        g = TimeGrid(1.0, 50)
        a = simulate_ou(p, g, 6, seed=5, antithetic=True).values
        b = simulate_ou(p, g, 6, seed=5, antithetic=True).values
        assert a.tobytes() == b.tobytes()
        c = simulate_ou(p, g, 6, seed=6, antithetic=True).values
        assert not np.array_equal(a, c)

    def test_rows_do_not_depend_on_ensemble_size(self):
        # per-row streams: the first pairs agree whatever M is
        p = OUSignalParams(-4.0, 1.0, 0.5, 2.0)
        g = TimeGrid(1.0, 30)
        small = simulate_ou(p, g, 4, seed=1, antithetic=True).values
        big = simulate_ou(p, g, 40, seed=1, antithetic=True).values
        assert np.array_equal(small, big[:4])

    def test_mean_matches_plain_monte_carlo_oracle(self):
        # brute-force oracle: Euler scheme with many fine substeps and a separate generator
        p = OUSignalParams(-4.0, 1.0, 0.5, 2.0)
        g = TimeGrid(1.0, 11)
        ens = simulate_ou(p, g, 2000, seed=2, antithetic=True)
        rng = np.random.default_rng(123)
        n_oracle, sub = 100_000, 20
        x = np.full(n_oracle, p.i0)
        dt = g.delta / sub
        oracle = [x.mean()]
        for _ in range(g.N - 1):
            for _ in range(sub):
                x = x + (p.theta - p.kappa * x) * dt + p.xi * math.sqrt(dt) * rng.standard_normal(n_oracle)
            oracle.append(x.mean())
        oracle = np.array(oracle)
        se = p.xi * math.sqrt(1.0 / (2 * p.kappa)) / math.sqrt(n_oracle)
        # antithetic pairs cancel the noise in a linear functional exactly
        assert np.max(np.abs(ens.values.mean(axis=0) - oracle)) <= 4 * se + 2e-3
        assert np.allclose(ens.values.mean(axis=0), p.mean_path(g.points), atol=1e-12)


class TestAlpha:
    def test_terminal_zero(self):
        sig = make_signal(OUSignalParams(3.0, 2.0, 1.0, -1.0), TimeGrid(1.5, 17), M=8)
        assert np.all(sig.alpha.values[:, -1] == 0.0)

    def test_closed_form_value_theta_zero(self):
        g = TimeGrid(1.0, 5)
        p = OUSignalParams(0.0, 1.0, 0.0, 20.0)
        a = alpha_from_drift(simulate_ou(p, g, 1), p)
        assert a.values[0, 0] == pytest.approx(20 * (1 - math.exp(-1)), rel=1e-12)
        assert a.values[0, 0] == pytest.approx(12.6424, abs=1e-4)

    def test_closed_form_value_negative_theta(self):
        g = TimeGrid(1.0, 5)
        p = OUSignalParams(-40.0, 1.0, 0.0, 0.0)
        a = alpha_from_drift(simulate_ou(p, g, 1), p)
        assert a.values[0, 0] == pytest.approx(40 * (1 - math.exp(-1)) - 40, rel=1e-12)
        assert a.values[0, 0] == pytest.approx(-14.7152, abs=1e-4)

    def test_matches_quadrature_of_mean_path(self):
        # alpha_t = int_t^T E_t[I_r] dr: quadrature oracle on the conditional mean
        from scipy.integrate import quad
        p = OUSignalParams(5.0, 3.0, 0.0, -2.0)
        g = TimeGrid(2.0, 9)
        a = alpha_from_drift(simulate_ou(p, g, 1), p).values[0]
        for i, t in enumerate(g.points[:-1]):
            want = quad(lambda r: p.mean_path(r), t, g.T)[0]
            assert a[i] == pytest.approx(want, rel=1e-10, abs=1e-12)

    @given(st.floats(5.0, 200.0), st.floats(-50, 50))
    @settings(max_examples=40)
    def test_fast_reversion_bound(self, kappa, i0):
        p = OUSignalParams(0.0, kappa, 0.0, i0)
        g = TimeGrid(1.0, 21)
        d = simulate_ou(p, g, 1)
        a = alpha_from_drift(d, p)
        assert np.all(np.abs(a.values) <= np.abs(d.values) / kappa + 1e-12)


class TestEffectiveAlphaAndInventory:
    def test_effective_alpha_cases(self):
        g = TimeGrid(1.0, 11)
        alpha = PathEnsemble(g, np.random.default_rng(0).standard_normal((2, 11)))
        assert np.array_equal(effective_alpha(alpha, 3.0).values, alpha.values)
        assert np.array_equal(effective_alpha(alpha, 0.0, 2.0, 5.0).values, alpha.values)
        zero = PathEnsemble.constant(g, 1)
        assert np.all(effective_alpha(zero, 1.0, 0.0, 500.0).values == -500.0)
        with pytest.raises(ValueError):
            effective_alpha(alpha, 1.0, -1.0)

    def test_inventory_cases(self):
        g = TimeGrid(1.0, 101)
        assert np.all(inventory_from_rate(PathEnsemble.constant(g, 2), 4.0).values == 4.0)
        X = inventory_from_rate(PathEnsemble.constant(g, 1, 1.0), 0.0).values[0]
        assert np.allclose(X, g.points, atol=1e-14)
        assert X[0] == 0.0

    def test_riemann_rate_first_order(self):
        errs = []
        for N in (50, 100, 200):
            g = TimeGrid(1.0, N)
            u = PathEnsemble(g, g.points[None, :].copy())
            errs.append(abs(inventory_from_rate(u, 0.0).values[0, -1] - 0.5))
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[2] == pytest.approx((199 / 49), rel=0.05)

    def test_terminal_inventory_counts_last_rate(self):
        g = TimeGrid(1.0, 5)
        u = PathEnsemble.constant(g, 1, 1.0)
        assert terminal_inventory(u, 0.0)[0] == pytest.approx(5 * g.delta)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=40))
    def test_left_integral_linear(self, vals):
        v = np.array(vals)
        d = 0.1
        assert np.allclose(left_integral(2 * v, d), 2 * left_integral(v, d))
        assert left_integral(v, d)[0] == 0.0

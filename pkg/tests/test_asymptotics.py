import warnings

import numpy as np
import pytest

from oracles import d_statistic_oracle, lower_hull_slopes
from tidalstream.asymptotics import (LimitParams, TruncationWarning, chernoff_pivot_constant,
                                     gcm_values, lookup_quantile, quantile_se, quantile_table,
                                     read_quantile_table, sample_chernoff, sample_D,
                                     sample_split_limit, simulate_path, slogcm0_path,
                                     slogcm_path, write_quantile_table)
from tidalstream.errors import BadGrid, NonPositiveArg, NonPositiveCurvature
from tidalstream.kernels import d_statistic

FAST = dict(L=4.0, dt=0.01)


def params(**kw):
    base = dict(a=1.0, b=1.0, beta=1.0, gamma=0.5, lambda_g=1.0, lambda_g_prime=2.0,
                h_g=1.0, H_tau_minus_H_gamma=1.0)
    base.update(kw)
    return LimitParams(**base)


class TestPaths:
    def test_zero_at_origin(self):
        p = simulate_path(1.3, 0.7, seed=4)
        assert p.values[p.izero] == 0.0 and p.grid[p.izero] == 0.0

    def test_increment_variance(self):
        p = simulate_path(2.0, 1.0, L=50.0, dt=0.01, seed=1)
        inc = np.diff(p.values - p.d * p.grid ** 2)
        assert np.var(inc) / (4.0 * 0.01) == pytest.approx(1.0, abs=0.03)

    def test_tiny_noise_argmin_at_zero(self):
        p = simulate_path(1e-9, 1.0, seed=2, **FAST)
        assert p.grid[np.argmin(p.values)] == 0.0
        s = sample_chernoff(20, seed=2, c=1e-9, **FAST)
        np.testing.assert_array_equal(s.values, 0.0)

    def test_slogcm_matches_hull(self):
        p = simulate_path(1.0, 1.0, seed=3, L=1.0, dt=0.01)
        t, s = slogcm_path(p)
        assert np.all(np.diff(s) >= -1e-12)
        np.testing.assert_allclose(s, lower_hull_slopes(p.grid, p.values), atol=1e-9)

    def test_slogcm_of_convex_input_is_derivative(self):
        p = simulate_path(1e-12, 1.0, seed=0, L=2.0, dt=0.01)
        t, s = slogcm_path(p)
        np.testing.assert_allclose(s, 2 * t - 0.01, atol=1e-8)

    def test_slogcm_interval(self):
        p = simulate_path(seed=5, **FAST)
        t, s = slogcm_path(p, (-1.0, 1.0))
        assert t[0] == pytest.approx(-0.99) and t[-1] == pytest.approx(1.0)
        assert np.all(np.diff(s) >= -1e-12)

    def test_slogcm0_signs(self):
        p = simulate_path(seed=6, **FAST)
        t, s = slogcm0_path(p)
        assert np.all(s[t <= 0] <= 0) and np.all(s[t > 0] >= 0)
        assert np.all(np.diff(s) >= -1e-12)

    def test_gcm_below_path(self):
        p = simulate_path(seed=7, **FAST)
        g = gcm_values(p)
        assert np.all(g <= p.values + 1e-9)
        assert g[0] == p.values[0] and g[-1] == pytest.approx(p.values[-1])

    def test_bad_grid(self):
        with pytest.raises(BadGrid):
            simulate_path(L=1.0, dt=0.3)
        with pytest.raises(BadGrid):
            simulate_path(L=-1.0)
        with pytest.raises(BadGrid):
            sample_D(c=0.0)


class TestD:
    def test_matches_oracle_and_nonnegative(self):
        for k in range(5):
            p = simulate_path(seed=k, L=2.0, dt=0.02)
            val, _ = d_statistic(p.values, p.dt, p.izero, 10)
            assert val >= 0
            assert val == pytest.approx(d_statistic_oracle(p.values, p.dt), rel=1e-9,
                                        abs=1e-12)

    def test_quadratic_scaling_of_kernel(self):
        p = simulate_path(seed=9, **FAST)
        a, _ = d_statistic(p.values, p.dt, p.izero, 50)
        b, _ = d_statistic(3.0 * p.values, p.dt, p.izero, 50)
        assert b == pytest.approx(9.0 * a, rel=1e-10)

    def test_reproducible_and_job_independent(self):
        a = sample_D(n_reps=40, seed=12, **FAST)
        b = sample_D(n_reps=40, seed=12, n_jobs=2, **FAST)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, sample_D(n_reps=40, seed=13, **FAST).values)

    def test_truncation_warning(self):
        with pytest.warns(TruncationWarning):
            s = sample_D(c=5.0, d=0.01, n_reps=20, seed=0, L=1.0, dt=0.01)
        assert s.n_flagged > 0


class TestChernoff:
    def test_symmetric_and_scale(self):
        s = sample_chernoff(4000, seed=1, **FAST)
        assert abs(np.mean(s.values)) < 0.04
        assert np.std(s.values) == pytest.approx(0.52, abs=0.03)

    def test_pivot_constant(self):
        assert chernoff_pivot_constant(2.0, 1.0, 1.0) == pytest.approx(2.0)
        a = chernoff_pivot_constant(0.3, 2.0, 0.4)
        assert chernoff_pivot_constant(2.4, 2.0, 0.4) == pytest.approx(2 * a)
        for bad in ((0.0, 1, 1), (1, -1, 1), (1, 1, 0)):
            with pytest.raises(NonPositiveArg):
                chernoff_pivot_constant(*bad)


class TestSplitLimit:
    def test_forms_share_paths(self):
        p = params()
        j = sample_split_limit(p, 30, seed=4, form="joint", **FAST)
        s = sample_split_limit(p, 30, seed=4, form="simplified", **FAST)
        assert j.t1 is not None and s.t1 is None
        V = p.V
        np.testing.assert_allclose(j.t1, -V[0, 1] * j.t2 / V[0, 0])
        np.testing.assert_array_equal(j.t2, sample_split_limit(p, 30, seed=4, form="joint",
                                                               n_jobs=2, **FAST).t2)
        assert np.corrcoef(j.t2, s.t2)[0, 1] > 0.5

    def test_V_layout(self):
        V = params(lambda_g=1.5, lambda_g_prime=2.0, h_g=0.5, H_tau_minus_H_gamma=0.8).V
        np.testing.assert_allclose(V, [[1.6, -1.5], [-1.5, 6.0]])

    def test_t1_closed_form_minimizes_quadratic(self):
        V = params(lambda_g=1.5, h_g=0.5, H_tau_minus_H_gamma=0.8).V
        t2 = 0.7
        t1 = np.linspace(-3, 3, 600001)
        q = 0.5 * (V[0, 0] * t1 ** 2 + 2 * V[0, 1] * t1 * t2 + V[1, 1] * t2 ** 2)
        assert t1[np.argmin(q)] == pytest.approx(-V[0, 1] * t2 / V[0, 0], abs=1e-5)

    def test_spread_shrinks_with_curvature(self):
        sds = [np.std(sample_split_limit(params(lambda_g_prime=lp), 300, seed=8,
                                         L=4.0, dt=0.005).t2)
               for lp in (2.0, 8.0, 32.0)]
        assert sds[0] > sds[1] > sds[2]

    def test_nonpositive_curvature(self):
        p = params(lambda_g=4.0, lambda_g_prime=1.0)
        assert p.c_simplified <= 0
        with pytest.raises(NonPositiveCurvature):
            sample_split_limit(p, 5, form="simplified", **FAST)
        with pytest.raises(NonPositiveCurvature):
            sample_split_limit(params(lambda_g=4.0, lambda_g_prime=0.5), 5, form="joint", **FAST)
        with pytest.raises(NonPositiveArg):
            params(a=0.0)

    def test_from_model(self):
        p = LimitParams.from_model(1.0, 0.5, 1.0, 3.0, 1.0, 1.0, C=4.0, fcos2_integral=0.25)
        assert p.a == 1.0 and p.b == 1.5


class TestQuantileTable:
    def test_round_trip_and_lookup(self, tmp_path):
        s = sample_D(n_reps=200, seed=0, **FAST)
        rows = quantile_table(s, (0.9, 0.95))
        path = tmp_path / "q.csv"
        write_quantile_table(rows, path)
        back = read_quantile_table(path)
        assert back == rows
        assert lookup_quantile(back, 0.95) == rows[1]["quantile"]
        with pytest.raises(KeyError):
            lookup_quantile(back, 0.5)

    def test_quantile_se_shrinks(self):
        g = np.random.default_rng(0)
        a = quantile_se(g.normal(size=1000), 0.9)
        b = quantile_se(g.normal(size=100000), 0.9)
        assert b < a / 5
        # normal theory: sqrt(p(1-p)/n)/phi(q)
        assert b == pytest.approx(np.sqrt(0.09 / 100000) / 0.1755, rel=0.2)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_quantile_table(path)


def test_no_warnings_on_default_grid():
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        sample_D(n_reps=50, seed=1)

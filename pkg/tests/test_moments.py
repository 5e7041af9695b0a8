import math

import numpy as np
import pytest

import rwre
from rwre import RangeError, RegimeError


class TestDegenerateFixedPoints:
    def test_mu_fixed_point(self, deg_tables):
        # homogeneous recursion settles on (1 + rho) / (1 - rho) = 3
        for k in (50, 100, 600):
            assert deg_tables.mu_at(k) == pytest.approx(3.0, abs=1e-12)

    def test_m2_and_var_fixed_points(self, deg_tables):
        assert deg_tables.m2_at(100) == pytest.approx(33.0, abs=1e-10)
        assert deg_tables.var_at(100) == pytest.approx(24.0, abs=1e-10)

    def test_m3_fixed_point_matches_pmf_oracle(self, deg_env, deg_tables):
        # independent oracle: third moment summed from the exact crossing law
        fp = rwre.first_passage_cdf(deg_env, 1, tail_tol=1e-14)
        t = fp.values().astype(float)
        oracle = float(np.dot(t**3, fp.probs))
        assert deg_tables.m3_at(100) == pytest.approx(oracle, rel=1e-9)
        assert deg_tables.m3_at(100) == pytest.approx(867.0, rel=1e-12)


class TestPointwiseInvariants:
    def test_lower_bounds(self, beta_env, beta_tables):
        rho = beta_env.rho_slice(0, beta_tables.last_site)
        mu = beta_tables.mu[1:]   # sites 0..last (first_site is -1)
        m2 = beta_tables.m2[1:]
        m3 = beta_tables.m3[1:]
        var = beta_tables.var[1:]
        assert (mu >= 1.0 + rho - 1e-12).all()
        assert (m2 >= mu**2 - 1e-9).all()                    # Jensen
        assert (m2 >= (1 + rho) * (1 + 2 * rho) - 1e-12).all()
        assert (m3 >= mu * m2 * (1 - 1e-12)).all()           # association
        assert (var >= rho * (1 + rho) - 1e-12).all()

    def test_prefix_sums_nondecreasing(self, beta_tables):
        assert (np.diff(beta_tables.prefix_mean) > 0).all()
        assert (np.diff(beta_tables.prefix_var) > 0).all()
        assert beta_tables.mean_T(0) == 0.0
        assert beta_tables.var_T(0) == 0.0

    def test_range_errors(self, beta_env, beta_tables):
        with pytest.raises(RangeError):
            beta_tables.mu_at(beta_tables.last_site + 1)
        with pytest.raises(RangeError):
            beta_tables.mean_T(beta_tables.last_site + 2)
        with pytest.raises(RangeError):
            rwre.moment_tables(beta_env, last_site=beta_env.right_index + 5)


class TestTwoRouteVariance:
    def test_agreement(self, deg_tables, beta_tables):
        assert deg_tables.two_route_var_residual() <= 1e-10
        assert beta_tables.two_route_var_residual() <= 1e-10

    def test_fault_injection_hook(self, beta_tables, monkeypatch):
        monkeypatch.setenv(rwre.moments.FAULT_ENV_VAR, "1")
        assert beta_tables.two_route_var_residual() > 1e-3


class TestSeriesOracle:
    def test_third_moment_series_matches_recursion(self, beta_env, beta_tables):
        for site in (0, 7, 63, 200):
            series = rwre.third_moment_series(beta_env, site, beta_env.left_index)
            assert series == pytest.approx(beta_tables.m3_at(site), rel=1e-11)


class TestTruncation:
    def test_depth_policy(self, deg_law, beta51):
        assert rwre.truncation_control(deg_law, 1e-12) == 64
        assert rwre.truncation_control(deg_law, 1.0) == 64
        assert rwre.truncation_control(beta51, 1e-12) == 64
        # slow decay forces a deeper reflection
        slow = rwre.Beta(2.05, 1.0)
        assert rwre.truncation_control(slow, 1e-12) >= 128

    def test_regime_gate(self):
        with pytest.raises(RegimeError):
            rwre.truncation_control(rwre.Degenerate(0.4))

    def test_monotone_in_reflection_depth(self, beta51):
        env = rwre.sample_environment(beta51, -256, 64, seed=11)
        shallow = rwre.moment_tables(env, last_site=64, trunc_left=-32)
        deep = rwre.moment_tables(env, last_site=64, trunc_left=-256)
        assert (deep.mu >= shallow.mu - 1e-15).all()
        assert (deep.m2 >= shallow.m2 - 1e-12).all()
        assert (deep.m3 >= shallow.m3 - 1e-9).all()

    def test_doubling_stability_below_bound(self, beta51):
        env = rwre.sample_environment(beta51, -128, 64, seed=12)
        base = rwre.moment_tables(env, last_site=64, trunc_left=-64)
        doubled = rwre.moment_tables(env, last_site=64, trunc_left=-128)
        worst = max(
            np.max(np.abs(base.mu - doubled.mu)),
            np.max(np.abs(base.m2 - doubled.m2)),
            np.max(np.abs(base.m3 - doubled.m3)),
            np.max(np.abs(base.var - doubled.var)),
        )
        assert worst < base.trunc_error_bound
        assert worst < 1e-12


class TestLawConstants:
    def test_degenerate_values(self, deg_law):
        c = rwre.law_constants(deg_law)
        assert c.speed == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert c.inv_speed == pytest.approx(3.0, rel=1e-12)
        assert c.mu0_sq_mean == pytest.approx(9.0, rel=1e-12)
        assert c.sigma2 == pytest.approx(24.0, rel=1e-12)
        assert c.mu0_variance == pytest.approx(0.0, abs=1e-10)

    def test_beta_values(self, beta51):
        c = rwre.law_constants(beta51)
        assert c.speed == pytest.approx(0.6, rel=1e-12)
        assert c.sigma2 == pytest.approx(40.0 / 9.0, rel=1e-12)
        assert c.mu0_sq_mean == pytest.approx(11.0 / 3.0, rel=1e-12)

    def test_second_moment_dominates_square(self, beta51, deg_law):
        for law in (beta51, rwre.UniformInterval(0.55, 0.95)):
            c = rwre.law_constants(law)
            assert c.mu0_sq_mean > c.inv_speed**2
        cd = rwre.law_constants(deg_law)
        assert cd.mu0_sq_mean == pytest.approx(cd.inv_speed**2, rel=1e-12)

    def test_regime_error_below_two(self):
        with pytest.raises(RegimeError):
            rwre.law_constants(rwre.Beta(2.5, 1.0))  # kappa = 1.5


class TestEnsembleMoments:
    def test_beta_ensemble_matches_law(self, beta51):
        mu0, m20, v0 = rwre.ensemble_site_moments(beta51, 20_000, seed=303)
        c = rwre.law_constants(beta51)
        for sample, target in ((mu0, c.inv_speed), (m20, c.mu0_sq_mean),
                               (v0, c.sigma2)):
            se = sample.std(ddof=1) / math.sqrt(sample.size)
            assert abs(sample.mean() - target) <= 4 * se


class TestPrefixAndCentering:
    def test_degenerate_linear_growth(self, deg_tables):
        assert deg_tables.mean_T(400) == pytest.approx(3 * 400, abs=1e-9)
        assert deg_tables.var_T(400) == pytest.approx(24 * 400, abs=1e-8)

    def test_mean_prefix_clt_band(self, beta51):
        # |E_w[T_n]/n - 5/3| <= 10 sqrt(Var(mu_0)/n) across seeds
        n = 10_000
        c = rwre.law_constants(beta51)
        band = 10 * math.sqrt(c.mu0_variance / n)
        for seed in range(20):
            env = rwre.certified_window(beta51, seed=seed, right=n)
            tab = rwre.moment_tables(env, last_site=n)
            assert abs(tab.mean_T(n) / n - c.inv_speed) <= band

    def test_centering_degenerate_vanishes(self, deg_tables):
        for n in (30, 300, 1500):
            assert abs(rwre.centering_Zn(deg_tables, n, 1.0 / 3.0)) < 1e-10

    def test_centering_zero_target(self, deg_tables):
        assert rwre.centering_Zn(deg_tables, 2, 1.0 / 3.0) == 0.0

    def test_centering_reevaluation_oracle(self, beta_env, beta_tables):
        n = 2048
        v = rwre.law_constants(rwre.Beta(5, 1)).speed
        m = math.floor(n * v)
        expected = v * (beta_tables.mean_T(m) - m / v)
        assert rwre.centering_Zn(beta_tables, n, v) == pytest.approx(
            expected, abs=1e-12)


class TestExports:
    def test_table_csv(self, deg_tables, tmp_path):
        path = tmp_path / "table.csv"
        deg_tables.to_csv(path)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "k,mu,m2,m3,var"
        first = rows[1].split(",")
        assert int(first[0]) == deg_tables.first_site
        assert float(first[1]) == deg_tables.mu[0]

    def test_prefix_csv(self, deg_tables, tmp_path):
        path = tmp_path / "prefix.csv"
        deg_tables.prefix_to_csv(path, speed=1.0 / 3.0)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "n,mean_Tn,var_Tn,Zn"
        assert len(rows) == deg_tables.n_max + 2

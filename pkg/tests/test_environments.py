import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import digamma

import rwre
from rwre import ParameterError, RangeError, RegimeError


TWO_POINT = rwre.TwoPoint(a=0.75, b=0.4, q=0.9)


class TestSampling:
    def test_degenerate_window(self, deg_law):
        env = rwre.sample_environment(deg_law, -2, 2, seed=5)
        assert np.allclose(env.values, 2.0 / 3.0)
        assert np.allclose(env.rho, 0.5)
        assert env.left_index == -2 and env.right_index == 2
        assert len(env) == 5

    def test_determinism(self, beta51):
        a = rwre.sample_environment(beta51, -10, 30, seed=99)
        b = rwre.sample_environment(beta51, -10, 30, seed=99)
        assert np.array_equal(a.values, b.values)

    def test_window_extension_consistency(self, beta51):
        small = rwre.sample_environment(beta51, -10, 10, seed=4)
        big = rwre.sample_environment(beta51, -20, 20, seed=4)
        assert np.array_equal(small.values, big.omega_slice(-10, 10))

    def test_two_point_fraction_lln(self):
        env = rwre.sample_environment(TWO_POINT, 0, 10**6 - 1, seed=31)
        frac = float(np.mean(env.values == 0.75))
        se = math.sqrt(0.9 * 0.1 / 10**6)
        assert abs(frac - 0.9) <= 4 * se

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            rwre.Degenerate(1.0)
        with pytest.raises(ParameterError):
            rwre.TwoPoint(a=0.5, b=0.5, q=1.5)
        with pytest.raises(ParameterError):
            rwre.UniformInterval(0.7, 0.6)
        with pytest.raises(ParameterError):
            rwre.Beta(-1.0, 2.0)
        with pytest.raises(ParameterError):
            rwre.sample_environment(rwre.Degenerate(0.5), 5, 2, seed=0)

    def test_site_access_bounds(self, deg_env):
        with pytest.raises(RangeError):
            deg_env.omega(deg_env.right_index + 1)


class TestMoments:
    def test_degenerate_r1(self, deg_law):
        assert deg_law.moment_rho(1.0) == pytest.approx(0.5, rel=1e-14)

    def test_zeroth_moment_is_one(self, deg_law, beta51):
        for law in (deg_law, beta51, TWO_POINT, rwre.UniformInterval(0.55, 0.95)):
            assert law.moment_rho(0.0) == pytest.approx(1.0, abs=1e-12)

    def test_beta_gamma_identity(self, beta51):
        assert beta51.moment_rho(1.0) == pytest.approx(0.25, rel=1e-12)
        assert beta51.moment_rho(2.0) == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_beta_divergent_moment(self, beta51):
        assert math.isinf(beta51.moment_rho(5.0))
        assert math.isinf(beta51.moment_rho(7.3))

    def test_quadrature_matches_closed_form(self, beta51):
        for p in (0.5, 1.0, 2.0, 3.5):
            quad = beta51.moment_rho_quadrature(p)
            assert quad == pytest.approx(beta51.moment_rho(p), rel=1e-8)
        uni = rwre.UniformInterval(0.55, 0.95)
        assert uni.moment_rho_quadrature(1.0) == pytest.approx(
            uni.moment_rho(1.0), rel=1e-8)

    def test_log_rho_mean(self, deg_law, beta51):
        assert deg_law.log_rho_mean() == pytest.approx(math.log(0.5), rel=1e-14)
        expected = 0.9 * math.log(1.0 / 3.0) + 0.1 * math.log(1.5)
        assert TWO_POINT.log_rho_mean() == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(-0.948, abs=5e-4)
        assert beta51.log_rho_mean() == pytest.approx(
            float(digamma(1) - digamma(5)), rel=1e-12)
        assert beta51.log_rho_mean() == pytest.approx(-25.0 / 12.0, rel=1e-12)
        uni = rwre.UniformInterval(0.55, 0.95)
        assert uni.log_rho_mean() == pytest.approx(
            uni.log_rho_mean_quadrature(), rel=1e-9)


class TestKappa:
    def test_beta_exact_roots(self):
        assert rwre.solve_kappa(rwre.Beta(5, 1), tol=1e-8) == pytest.approx(4.0, abs=1e-6)
        assert rwre.solve_kappa(rwre.Beta(6, 1), tol=1e-8) == pytest.approx(5.0, abs=1e-6)

    def test_bounded_rho_gives_infinity(self, deg_law):
        assert math.isinf(rwre.solve_kappa(deg_law))

    def test_two_point_bracket(self):
        kappa = rwre.solve_kappa(TWO_POINT, tol=1e-9)
        assert 5.6 < kappa < 5.7
        # bisection oracle: the moment curve crosses 1 exactly at kappa
        assert TWO_POINT.moment_rho(kappa) == pytest.approx(1.0, abs=1e-8)

    def test_regime_error_for_left_transient(self):
        with pytest.raises(RegimeError):
            rwre.solve_kappa(rwre.Degenerate(0.4))

    def test_moment_curve_sides_of_kappa(self):
        law = rwre.Beta(5, 1)
        for p in (0.5, 1.5, 2.5, 3.5, 3.9):
            assert law.moment_rho(p) < 1.0
        for p in (4.1, 4.5, 4.9):
            assert law.moment_rho(p) > 1.0

    @given(p=st.floats(0.1, 3.0), q=st.floats(0.1, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_moment_curve_convexity(self, p, q):
        # log-convexity of the moment curve: r_{(p+q)/2} <= sqrt(r_p r_q)
        law = rwre.Beta(5, 1)
        mid = law.moment_rho((p + q) / 2.0)
        assert mid <= math.sqrt(law.moment_rho(p) * law.moment_rho(q)) * (1 + 1e-12)


class TestRegimeTags:
    def test_fast_regime(self):
        assert rwre.classify_regime(6.0) == [
            "BETn_fast", "BETnds_fast", "BEXn_as", "BEXn_ip_fast"]

    def test_slow_regime(self):
        assert rwre.classify_regime(2.2) == [
            "BETn_slow", "BETnds_slow", "BEXn_as", "BEXn_ip_slow"]

    def test_boundary_excluded(self):
        assert rwre.classify_regime(2.0) == ["none"]

    def test_thresholds(self):
        assert "BETn_slow" in rwre.classify_regime(3.0)
        assert "BETnds_slow" in rwre.classify_regime(4.0)
        assert "BEXn_ip_fast" in rwre.classify_regime(2.4)
        assert "BEXn_ip_slow" in rwre.classify_regime(2.39)

    def test_report_consistent_and_serializable(self, beta51):
        report = rwre.regime_report(beta51, tol=1e-8)
        payload = report.to_json_dict()
        assert payload["r1"] == pytest.approx(0.25, rel=1e-12)
        assert payload["tags"] == ["BETn_fast", "BETnds_slow", "BEXn_as",
                                   "BEXn_ip_fast"]
        inf_report = rwre.regime_report(rwre.Degenerate(2 / 3))
        assert inf_report.to_json_dict()["kappa"] == "inf"


class TestConfigParsing:
    def test_from_config(self):
        dist = rwre.distribution_from_config({"law": "beta", "alpha": 5.0, "beta": 1.0})
        assert isinstance(dist, rwre.Beta)
        assert dist.alpha == 5.0

    def test_from_shorthand(self):
        dist = rwre.distribution_from_shorthand("two_point:0.75,0.4,0.9")
        assert dist == TWO_POINT
        assert rwre.distribution_from_shorthand("degenerate:0.5").p == 0.5

    def test_bad_config(self):
        with pytest.raises(ParameterError):
            rwre.distribution_from_config({"law": "cauchy"})
        with pytest.raises(ParameterError):
            rwre.distribution_from_config({"law": "beta", "alpha": 5.0})
        with pytest.raises(ParameterError):
            rwre.distribution_from_shorthand("beta:5")

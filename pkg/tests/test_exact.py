import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import binom

import rwre
from rwre import HorizonError, NumericError, ParameterError, RangeError
from rwre.exact import _check_nonnegative

from conftest import brute_force_position_max


class TestFirstPassage:
    def test_single_step_paths(self, beta_env):
        fp = rwre.first_passage_cdf(beta_env, 1, tail_tol=1e-12)
        w0 = beta_env.omega(0)
        wm1 = beta_env.omega(-1)
        assert fp.probs[0] == pytest.approx(w0, abs=1e-15)
        assert fp.probs[1] == pytest.approx((1 - w0) * wm1 * w0, abs=1e-14)

    def test_degenerate_values(self, deg_env):
        fp = rwre.first_passage_cdf(deg_env, 1, tail_tol=1e-12)
        assert fp.probs[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert fp.probs[1] == pytest.approx(4.0 / 27.0, abs=1e-15)

    def test_conservation_and_parity(self, beta_env):
        fp = rwre.first_passage_cdf(beta_env, 40, tail_tol=1e-10)
        assert fp.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert fp.support_offset == 40 and fp.step == 2
        assert fp.tail_mass <= 1e-10

    def test_explicit_horizon_and_errors(self, beta_env):
        fp = rwre.first_passage_cdf(beta_env, 10, t_max=10)
        assert fp.probs.size == 1
        with pytest.raises(RangeError):
            rwre.first_passage_cdf(beta_env, 10, t_max=5)
        with pytest.raises(ParameterError):
            rwre.first_passage_cdf(beta_env, 0)
        with pytest.raises(HorizonError):
            rwre.first_passage_cdf(beta_env, 10, tail_tol=1e-300, max_doublings=1)

    def test_stochastic_monotonicity(self, beta_env):
        t = np.arange(20, 400)
        fa = rwre.first_passage_cdf(beta_env, 20, tail_tol=1e-12)
        fb = rwre.first_passage_cdf(beta_env, 21, tail_tol=1e-12)
        cdf_a = np.array([fa.cdf_at(x) for x in t])
        cdf_b = np.array([fb.cdf_at(x) for x in t])
        assert (cdf_b <= cdf_a + 1e-14).all()

    def test_moments_match_tables(self, beta_env, beta_tables):
        k = 50
        fp = rwre.first_passage_cdf(beta_env, k, tail_tol=1e-12, tables=beta_tables)
        t_max = fp.values()[-1]
        mean_gap = abs(fp.mean_truncated() - beta_tables.mean_T(k))
        assert mean_gap <= t_max * fp.tail_mass + 1e-8
        var_gap = abs(fp.var_truncated() - beta_tables.var_T(k))
        assert var_gap <= t_max**2 * fp.tail_mass + 1e-6

    def test_survival_matches_cdf_route(self, beta_env):
        fp = rwre.first_passage_cdf(beta_env, 30, tail_tol=1e-12)
        for n in (30, 60, 100, 200):
            direct = rwre.first_passage_survival(beta_env, 30, n)
            assert direct == pytest.approx(fp.survival_at(n), abs=1e-13)


class TestPositionLaw:
    def test_two_step_paths(self, beta_env):
        pos = rwre.position_pmf(beta_env, 2)
        w0, w1, wm1 = (beta_env.omega(x) for x in (0, 1, -1))
        assert pos.probs[-1] == pytest.approx(w0 * w1, abs=1e-15)
        assert pos.probs[0] == pytest.approx((1 - w0) * (1 - wm1), abs=1e-15)

    def test_degenerate_is_shifted_binomial(self, deg_env):
        n = 500
        pos = rwre.position_pmf(deg_env, n)
        exact = binom.pmf(np.arange(n + 1), n, 2.0 / 3.0)
        assert np.abs(pos.probs - exact).max() < 1e-12

    def test_conservation_large_n(self, beta_env):
        pos = rwre.position_pmf(beta_env, 1000)
        assert pos.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert pos.boundary_contamination < 1e-12
        vals = pos.values()
        assert vals[0] == -1000 and vals[-1] == 1000
        assert np.all(pos.probs[vals < beta_env.left_index] == 0.0)

    def test_time_zero(self, beta_env):
        pos = rwre.position_pmf(beta_env, 0)
        assert pos.probs.tolist() == [1.0]


class TestRunningMax:
    def test_definition_identity(self, beta_env):
        n = 64
        rm = rwre.running_max_cdf(beta_env, n, k_max=40)
        below_1 = rm.cdf()[0]  # P(max <= 0) = P(max < 1)
        assert below_1 == pytest.approx(
            rwre.first_passage_survival(beta_env, 1, n), abs=1e-14)

    def test_single_step(self, beta_env):
        rm = rwre.running_max_cdf(beta_env, 1, k_max=3)
        assert rm.probs[0] == pytest.approx(1 - beta_env.omega(0), abs=1e-15)

    def test_cross_module_identity(self, beta_env):
        n, k_max = 100, 50
        rm = rwre.running_max_cdf(beta_env, n, k_max=k_max)
        cdf = rm.cdf()
        for k in (1, 5, 20, 50):
            fp = rwre.first_passage_cdf(beta_env, k, t_max=n + 2)
            assert abs(cdf[k - 1] - (1.0 - fp.cdf_at(n))) <= 1e-14

    def test_brute_force_oracle_degenerate(self, deg_env):
        n = 100
        _, max_pmf = brute_force_position_max(deg_env, n)
        rm = rwre.running_max_cdf(deg_env, n, k_max=n)
        assert np.abs(rm.probs - max_pmf[:n]).max() < 1e-12
        assert rm.tail_mass == pytest.approx(max_pmf[n], abs=1e-12)

    def test_brute_force_oracle_beta(self, beta_env):
        n = 40
        pos_pmf, max_pmf = brute_force_position_max(beta_env, n)
        rm = rwre.running_max_cdf(beta_env, n, k_max=n)
        assert np.abs(rm.probs - max_pmf[:n]).max() < 1e-12
        pos = rwre.position_pmf(beta_env, n)
        dense = np.zeros(n - beta_env.left_index + 1)
        vals = pos.values()
        keep = vals >= beta_env.left_index
        dense[vals[keep] - beta_env.left_index] = pos.probs[keep]
        assert np.abs(dense - pos_pmf).max() < 1e-12


class TestRuin:
    def test_degenerate_classical_formula(self, deg_law):
        env = rwre.sample_environment(deg_law, -20, 20, seed=1)
        value = rwre.ruin_probability(env, -20, 20)
        rho = 0.5
        expected = (rho**20 * (1 - rho**20)) / (1 - rho**40)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(9.54e-7, rel=1e-2)

    def test_monotone_in_depth(self, beta51):
        env = rwre.sample_environment(beta51, -64, 20, seed=3)
        vals = [rwre.ruin_probability(env, left, 20) for left in (-8, -16, -32, -64)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_deep_boundary_underflows_to_zero(self, deg_law):
        env = rwre.sample_environment(deg_law, -1200, 5, seed=2)
        assert rwre.ruin_probability(env, -1200, 5) == 0.0

    def test_precondition(self, beta_env):
        with pytest.raises(ParameterError):
            rwre.ruin_probability(beta_env, 5, 10)


class TestKolmogorovT:
    def test_distance_in_unit_interval(self, beta_env, beta_tables):
        rep = rwre.kolmogorov_distance_T(beta_env, beta_tables, 200, "quenched")
        assert 0.0 <= rep.distance <= 1.0
        assert rep.normalization == "quenched_scaling"

    def test_degenerate_scalings_coincide(self, deg_env, deg_tables):
        q = rwre.kolmogorov_distance_T(deg_env, deg_tables, 400, "quenched")
        d = rwre.kolmogorov_distance_T(deg_env, deg_tables, 400, "deterministic",
                                       sigma2=24.0)
        assert q.distance == pytest.approx(d.distance, abs=1e-9)

    def test_decreasing_along_dyadic_grid(self, beta_env, beta_tables):
        dists = [rwre.kolmogorov_distance_T(beta_env, beta_tables, n, "quenched").distance
                 for n in (128, 512, 2048)]
        assert dists[0] > dists[1] > dists[2]

    def test_needs_sigma_for_deterministic(self, beta_env, beta_tables):
        with pytest.raises(ParameterError):
            rwre.kolmogorov_distance_T(beta_env, beta_tables, 100, "deterministic")


class TestKolmogorovX:
    def test_time_zero_half(self, deg_env, deg_tables, deg_law):
        consts = rwre.law_constants(deg_law)
        rep = rwre.kolmogorov_distance_X(deg_env, deg_tables, 0, consts)
        assert rep.distance == 0.5

    def test_degenerate_binomial_oracle(self, deg_env, deg_tables, deg_law):
        consts = rwre.law_constants(deg_law)
        for n in (100, 400):
            rep = rwre.kolmogorov_distance_X(deg_env, deg_tables, n, consts)
            # independent oracle: binomial CDF against the normal curve
            xs = 2 * np.arange(n + 1) - n
            cdf = binom.cdf(np.arange(n + 1), n, 2.0 / 3.0)
            zn = rwre.centering_Zn(deg_tables, n, consts.speed)
            z = (xs - n * consts.speed + zn) / consts.position_scale(n)
            phi = ndtr(z)
            oracle = max(np.abs(cdf - phi).max(),
                         np.abs(np.concatenate([[0], cdf[:-1]]) - phi).max())
            assert rep.distance == pytest.approx(oracle, abs=1e-12)
            assert rep.distance <= 0.8 / math.sqrt(n * (2 / 3) * (1 / 3))


class TestAbsThirdMoment:
    def test_degenerate_closed_value(self, deg_env, deg_tables):
        # E|tau - 3|^3 = E[(tau-3)^3] + 2*(3-1)^3*P(tau=1) = 624 + 32/3
        value = rwre.abs_third_central_moment(deg_env, deg_tables, 100)
        assert value == pytest.approx(624 + 32.0 / 3.0, rel=1e-12)

    def test_small_pmf_paths(self, deg_env):
        pmf = rwre.crossing_time_small_pmf(deg_env, 50, 3)
        assert pmf[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert pmf[1] == 0.0
        assert pmf[2] == pytest.approx(4.0 / 27.0, abs=1e-15)

    def test_matches_pmf_summation_oracle(self, beta_env, beta_tables):
        for site in (0, 3, 17, 200):
            value = rwre.abs_third_central_moment(beta_env, beta_tables, site)
            # oracle: full pmf of the crossing time from `site`, long horizon
            mu = beta_tables.mu_at(site)
            pmf = rwre.crossing_time_small_pmf(beta_env, site, 4000)
            t = np.arange(1, 4001)
            oracle = float(np.dot(np.abs(t - mu) ** 3, pmf))
            assert value == pytest.approx(oracle, rel=1e-8)


class TestGuards:
    def test_negative_probability_guard(self):
        arr = np.array([0.5, -5e-16, 0.5])
        _check_nonnegative(arr, "test")          # clamped quietly
        assert arr[1] == 0.0
        with pytest.raises(NumericError):
            _check_nonnegative(np.array([0.1, -1e-12]), "test")

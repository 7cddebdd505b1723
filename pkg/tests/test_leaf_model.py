import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from metaboost.leaf_model import (
    NormalGammaParams,
    SufficientStats,
    log_marginal_likelihood,
    posterior,
    predictive_log_density,
    predictive_mean,
    predictive_scale,
    update_stats,
)

import oracles

finite = st.floats(-50, 50, allow_nan=False)


class TestStats:
    def test_update_from_empty(self):
        assert update_stats(SufficientStats(), 2.0) == SufficientStats(1, 2.0, 4.0)

    def test_update_again(self):
        assert update_stats(SufficientStats(1, 2.0, 4.0), 2.0) == SufficientStats(2, 4.0, 8.0)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            update_stats(SufficientStats(), bad)

    def test_empty_stats_must_have_zero_sums(self):
        with pytest.raises(ValueError):
            SufficientStats(0, 1.0, 0.0)

    @given(st.lists(finite, min_size=1, max_size=30))
    def test_cauchy_schwarz(self, ys):
        s = SufficientStats()
        for y in ys:
            s = update_stats(s, y)
        assert s.sum_y_sq * s.n >= s.sum_y ** 2 - 1e-9 * max(1.0, s.sum_y ** 2)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(kappa=0), dict(beta=-1), dict(alpha=0.5), dict(alpha=0.2),
                                    dict(m=math.nan)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NormalGammaParams(**kw)

    def test_default_is_experiment_prior(self):
        assert NormalGammaParams().as_tuple() == (0.0, 2.0, 2.0, 2.0)


class TestPosterior:
    def test_no_data_identity(self):
        prior = NormalGammaParams(0, 1, 1, 1)
        assert posterior(prior, SufficientStats()) == prior

    def test_single_zero_observation(self):
        # closed form: kappa 1 -> 2, alpha 1 -> 1.5, m and beta unchanged
        post = posterior(NormalGammaParams(0, 1, 1, 1), SufficientStats(1, 0.0, 0.0))
        assert post.as_tuple() == pytest.approx((0.0, 2.0, 1.5, 1.0), abs=1e-15)

    def test_matches_textbook_formula(self):
        rng = np.random.default_rng(3)
        y = rng.normal(1.0, 2.0, size=17)
        prior = NormalGammaParams(0.5, 1.5, 2.5, 0.7)
        got = posterior(prior, SufficientStats.from_values(y)).as_tuple()
        np.testing.assert_allclose(got, oracles.ng_posterior(prior.as_tuple(), y), rtol=1e-12)

    def test_posterior_mean_by_quadrature(self):
        # posterior density of mu,tau is likelihood x prior / evidence; its mu-mean must be m_n
        prior = NormalGammaParams(0, 1, 2, 2)
        y = np.array([1.0, 2.0, 2.0, 3.0])
        post = posterior(prior, SufficientStats.from_values(y))
        assert post.m == pytest.approx(8 / 5)
        z = oracles.quad_evidence(prior.as_tuple(), y)

        def inner(tau):
            if tau <= 0:
                return 0.0
            f = lambda mu: mu * np.prod(np.exp(-0.5 * tau * (y - mu) ** 2) * math.sqrt(tau / (2 * math.pi))) \
                * oracles.ng_density(mu, tau, prior.as_tuple())
            return integrate.quad(f, -30, 30, epsrel=1e-12, limit=400, points=[2.0])[0]

        mean = integrate.quad(inner, 0, np.inf, epsrel=1e-11, limit=400)[0] / z
        assert mean == pytest.approx(1.6, abs=1e-6)

    def test_monte_carlo_consistency(self):
        rng = np.random.default_rng(11)
        mu, tau = 1.3, 0.8
        y = rng.normal(mu, 1 / math.sqrt(tau), size=1000)
        post = posterior(NormalGammaParams(0, 2, 2, 2), SufficientStats.from_values(y))
        # marginal posterior sd of mu is the Student-t scale sqrt(beta / (alpha * kappa))
        sd = math.sqrt(post.beta / (post.alpha * post.kappa))
        assert abs(post.m - mu) < 3 * sd

    @given(st.lists(finite, min_size=1, max_size=25))
    @settings(max_examples=60)
    def test_batch_equals_online(self, ys):
        prior = NormalGammaParams(0.3, 1.2, 1.7, 0.9)
        batch = posterior(prior, SufficientStats.from_values(ys))
        online = prior
        for y in ys:
            online = posterior(online, SufficientStats(1, y, y * y))
        np.testing.assert_allclose(batch.as_tuple(), online.as_tuple(), rtol=1e-12, atol=1e-12)


class TestPredictive:
    def test_symmetry(self):
        post = NormalGammaParams(0, 1, 1, 1)
        for y in (0.1, 1.0, 7.5, 300.0):
            assert predictive_log_density(post, y) == predictive_log_density(post, -y)

    def test_matches_quadrature_at_zero(self):
        post = NormalGammaParams(0, 2, 1.5, 1)
        q = oracles.quad_predictive(post.as_tuple(), 0.0)
        assert math.exp(predictive_log_density(post, 0.0)) == pytest.approx(q, abs=1e-6)

    @pytest.mark.parametrize("params", [(0, 2, 2, 2), (1.5, 0.5, 3.0, 0.2), (-2, 4, 1.6, 3)])
    def test_grid_normalization(self, params):
        post = NormalGammaParams(*params)
        sigma = predictive_scale(post)
        grid = np.linspace(post.m - 50 * sigma, post.m + 50 * sigma, 200001)
        dens = np.exp([predictive_log_density(post, y) for y in grid])
        assert integrate.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-4)

    def test_heavy_tail_normalizes_over_real_line(self):
        # dof 2: the +-50 sigma grid misses ~4e-4 of mass, so integrate to infinity instead
        post = NormalGammaParams(0, 1, 1, 1)
        f = lambda y: math.exp(predictive_log_density(post, y))
        assert integrate.quad(f, -np.inf, np.inf, epsabs=1e-12)[0] == pytest.approx(1, abs=1e-8)

    @pytest.mark.parametrize("params", [(0, 2, 2, 2), (3.7, 2, 2, 5), (-1, 0.3, 1.2, 0.4)])
    def test_mean_matches_quadrature(self, params):
        post = NormalGammaParams(*params)
        f = lambda y: y * math.exp(predictive_log_density(post, y))
        mean = integrate.quad(f, -np.inf, np.inf, epsabs=1e-11, epsrel=1e-11, limit=500)[0]
        assert mean == pytest.approx(predictive_mean(post), abs=1e-6)

    def test_mean_values(self):
        assert predictive_mean(NormalGammaParams(0, 1, 1, 1)) == 0
        assert predictive_mean(NormalGammaParams(3.7, 2, 2, 5)) == 3.7
        post = posterior(NormalGammaParams(0, 1, 2, 2), SufficientStats(4, 8.0, 20.0))
        assert predictive_mean(post) == pytest.approx(1.6)

    def test_matches_scipy_t(self):
        post = NormalGammaParams(0.4, 1.3, 2.2, 0.9)
        for y in (-3.0, 0.0, 0.4, 10.0):
            assert predictive_log_density(post, y) == pytest.approx(
                oracles.t_logpdf(post.as_tuple(), y), abs=1e-12)

    def test_finite_far_out(self):
        assert math.isfinite(predictive_log_density(NormalGammaParams(), 1e150))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            predictive_log_density(NormalGammaParams(), math.nan)


class TestEvidence:
    def test_matches_quadrature(self):
        prior = NormalGammaParams(0.2, 1.5, 2.0, 1.0)
        y = np.array([0.3, -0.4, 1.1])
        z = oracles.quad_evidence(prior.as_tuple(), y)
        assert math.exp(log_marginal_likelihood(prior, SufficientStats.from_values(y))) == \
            pytest.approx(z, rel=1e-7)

    @given(st.lists(finite, min_size=1, max_size=20), st.randoms(use_true_random=False))
    @settings(max_examples=60)
    def test_chain_rule_is_permutation_invariant(self, ys, rnd):
        prior = NormalGammaParams(0.0, 2.0, 2.0, 2.0)

        def chain(seq):
            total, stats = 0.0, SufficientStats()
            for y in seq:
                total += predictive_log_density(posterior(prior, stats), y)
                stats = update_stats(stats, y)
            return total

        shuffled = list(ys)
        rnd.shuffle(shuffled)
        closed = log_marginal_likelihood(prior, SufficientStats.from_values(ys))
        assert chain(ys) == pytest.approx(chain(shuffled), abs=1e-8)
        assert chain(ys) == pytest.approx(closed, abs=1e-8)

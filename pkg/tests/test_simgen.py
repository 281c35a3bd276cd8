import itertools

import numpy as np
import pytest
from scipy.integrate import trapezoid

from cfk._rng import substream
from cfk.simgen import (
    DEFAULT_BETA,
    DEFAULT_NU,
    GaussianMixtureLaw,
    MixtureShiftConfig,
    RecSysConfig,
    Scenario,
    ScenarioConfig,
    gen_mixture_shift,
    gen_recsys,
    gen_scenario,
    potential_outcome_law,
)
from cfk.ope import SlatePolicy, importance_weights
from cfk.twosample import TestConfig, power_study


def se(v):
    return np.std(v, ddof=1) / np.sqrt(len(v))


class TestScenarios:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.beta == (0.1, 0.2, 0.3, 0.4, 0.5)
        assert cfg.alpha == (0.5, 0.4, 0.3, 0.2, 0.1)
        assert (cfg.alpha0, cfg.noise_variance, cfg.x_variance) == (0.05, 0.1, 0.1)

    def test_oracle_channels_under_no_effect(self):
        def halves(n, rng):
            d = gen_scenario(ScenarioConfig(Scenario.NO_EFFECT, n=2 * n), rng)
            return d.y0_star[:n], d.y1_star[n:]

        res = power_study(halves, 50, 100, TestConfig(n_bootstrap=200, alpha=0.05), seed=9)
        assert res.power <= 0.05 + 0.02

    def test_mean_shift(self):
        d = gen_scenario(ScenarioConfig(Scenario.MEAN_SHIFT, n=20000), 1)
        diff = d.y1_star - d.y0_star
        np.testing.assert_allclose(diff, 2.0, atol=1e-12)
        assert abs(d.y1_star.mean() - d.y0_star.mean() - 2.0) <= 3 * se(d.y1_star) + 3 * se(d.y0_star)

    def test_higher_order_effect(self):
        d = gen_scenario(ScenarioConfig(Scenario.HIGHER_ORDER, n=20000), 2)
        np.testing.assert_allclose(np.abs(d.y1_star - d.y0_star), 1.0, atol=1e-12)
        assert abs(d.y1_star.mean() - d.y0_star.mean()) <= 3 * se(d.y1_star - d.y0_star)
        assert d.y1_star.var() - d.y0_star.var() == pytest.approx(1.0, abs=0.05)

    def test_observed_outcome_and_propensity(self):
        cfg = ScenarioConfig(Scenario.MEAN_SHIFT, n=300)
        d = gen_scenario(cfg, 3)
        np.testing.assert_array_equal(d.y, np.where(d.t == 1, d.y1_star, d.y0_star))
        np.testing.assert_allclose(d.propensity, cfg.propensity_model()(d.x))

    def test_randomized_assignment(self):
        d = gen_scenario(ScenarioConfig(n=50, assignment="randomized"), 0)
        assert np.all(d.propensity == 0.5)

    def test_reproducible(self):
        a = gen_scenario(ScenarioConfig(Scenario.HIGHER_ORDER), substream(4, 1))
        b = gen_scenario(ScenarioConfig(Scenario.HIGHER_ORDER), substream(4, 1))
        for field in ("x", "t", "y", "y0_star", "y1_star", "propensity"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))

    def test_assignment_ignores_outcome_noise(self):
        cfg = ScenarioConfig(Scenario.MEAN_SHIFT, n=10000)
        d = gen_scenario(cfg, 5)
        resid = d.y0_star - d.x @ np.asarray(cfg.beta)
        score = d.x @ np.asarray(cfg.alpha)
        edges = np.quantile(score, np.linspace(0, 1, 11))
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (score >= lo) & (score <= hi)
            assert abs(np.corrcoef(d.t[sel], resid[sel])[0, 1]) <= 0.1

    @pytest.mark.parametrize("scenario", list(Scenario))
    def test_closed_form_law_matches_samples(self, scenario):
        cfg = ScenarioConfig(scenario, n=40000)
        d = gen_scenario(cfg, 6)
        for arm, y in ((0, d.y0_star), (1, d.y1_star)):
            law = potential_outcome_law(cfg, arm)
            mean = np.dot(law.weights, law.means)
            assert abs(y.mean() - mean) <= 4 * se(y)

    def test_mixture_law_embedding_by_quadrature(self):
        law = GaussianMixtureLaw((0.3, 0.7), (-1.0, 2.0), (0.5, 0.2))
        grid = np.linspace(-10, 10, 200001)
        dens = sum(w * np.exp(-(grid - m) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)
                   for w, m, v in zip(law.weights, law.means, law.variances))
        y = 0.4
        numeric = trapezoid(np.exp(-(grid - y) ** 2 / 2) * dens, grid)
        assert law.embedding([y], 1.0)[0] == pytest.approx(numeric, rel=1e-8)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            ScenarioConfig(assignment="coin")
        with pytest.raises(ValueError):
            ScenarioConfig(noise_variance=0.0)


class TestMixtureShift:
    def test_shapes_and_weights(self):
        d = gen_mixture_shift(MixtureShiftConfig(n=40), 0)
        assert d.x_control.shape == d.x_treated.shape == (40, 5)
        assert d.y_control.shape == d.y_counterfactual.shape == (40,)
        with pytest.raises(ValueError):
            MixtureShiftConfig(weights=(0.5, 0.6, -0.1))

    def test_counterfactual_mean(self):
        cfg = MixtureShiftConfig()
        y = cfg.sample_counterfactual(30000, 1)
        expected = np.asarray(DEFAULT_BETA) @ np.mean(DEFAULT_NU, axis=0)
        assert abs(y.mean() - expected) <= 3 * se(y)

    def test_control_mean(self):
        d = gen_mixture_shift(MixtureShiftConfig(n=20000), 2)
        assert abs(d.y_control.mean()) <= 3 * se(d.y_control)


class TestRecSys:
    def test_equal_policies_at_unit_shift(self):
        data = gen_recsys(RecSysConfig(n=200, policy_shift=1.0), 0)
        np.testing.assert_array_equal(data.logging_policy.params, data.target_policy.params)
        np.testing.assert_allclose(importance_weights(data.logged, data.target_policy), 1.0)

    def test_target_params_are_masked_users(self):
        data = gen_recsys(RecSysConfig(), 1)
        b = data.target_policy.params
        assert np.all((b == 0) | (b == data.user_features))
        assert 0.3 < np.mean(b == 0) < 0.7

    def test_full_slate_orderings_normalise(self):
        items = np.random.default_rng(2).normal(size=(3, 2))
        policy = SlatePolicy(items, np.array([[1.0, -0.5]]), 3)
        orderings = np.array(list(itertools.permutations(range(3))))
        assert policy.pmf(np.zeros(6, int), orderings).sum() == pytest.approx(1.0, abs=1e-14)

    def test_propensity_is_sequential_product(self):
        data = gen_recsys(RecSysConfig(n=50, n_items=4, slate_size=2, dim=3), 3)
        for u, slate, p in zip(data.logged.users, data.logged.slates, data.logged.propensities):
            s = np.exp(data.logging_policy.scores([u])[0])
            first = s[slate[0]] / s.sum()
            second = s[slate[1]] / (s.sum() - s[slate[0]])
            assert p == pytest.approx(first * second, rel=1e-12)

    def test_rewards_are_clicks(self):
        data = gen_recsys(RecSysConfig(n=100), 4)
        assert set(np.unique(data.logged.rewards)) <= {0.0, 1.0}
        assert data.true_value == data.target_rewards.mean()
        assert np.all(data.target.users == data.logged.users)

    def test_reproducible(self):
        a, b = gen_recsys(RecSysConfig(n=100), 5), gen_recsys(RecSysConfig(n=100), 5)
        np.testing.assert_array_equal(a.logged.slates, b.logged.slates)
        np.testing.assert_array_equal(a.logged.rewards, b.logged.rewards)
        np.testing.assert_array_equal(a.target_rewards, b.target_rewards)

    @pytest.mark.parametrize("kwargs", [dict(slate_size=30), dict(policy_shift=1.5), dict(click_noise=-1.0)])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            RecSysConfig(**kwargs)

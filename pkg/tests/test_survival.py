import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinpurify.errors import MonotoneLikelihoodError, ValidationError
from twinpurify.survival import (
    HIGH,
    LOW,
    c_index,
    cox_partial_loglik,
    fit_cox,
    km_curve,
    log_rank_test,
    median_split,
    risk_scores,
    survival_pipeline,
)
from twinpurify.synth import SynthConfig, generate_cohort
from twinpurify.data import TUMOR


def _exp_times(rng, lin_pred):
    return rng.exponential(1.0 / np.exp(lin_pred))


class TestCox:
    def test_null_covariate(self):
        small = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((500, 1))
            t = rng.exponential(1.0, 500)
            small += abs(fit_cox(x, t, np.ones(500, bool)).coef[0]) < 0.2
        assert small >= 38

    def test_recovers_planted(self, rng):
        X = rng.standard_normal((2000, 2))
        T = _exp_times(rng, X @ [1.0, -1.0])
        m = fit_cox(X, T, np.ones(2000, bool))
        assert np.all(np.abs(m.coef - [1.0, -1.0]) <= 0.15)
        assert m.converged and m.grad_norm < 1e-6 and m.tie_method == "breslow"

    def test_constant_feature_excluded(self, rng):
        X = np.column_stack([rng.standard_normal(50), np.full(50, 2.0)])
        with pytest.warns(RuntimeWarning, match="excluding 1 constant"):
            m = fit_cox(X, rng.exponential(1.0, 50), np.ones(50, bool), ["a", "k"])
        assert m.excluded == ("k",) and m.coef[1] == 0.0

    def test_no_events(self, rng):
        with pytest.raises(ValidationError, match="no events"):
            fit_cox(rng.standard_normal((5, 1)), np.arange(1.0, 6.0), np.zeros(5, bool))

    def test_separation(self):
        x = np.arange(1.0, 11.0)
        with pytest.raises(MonotoneLikelihoodError, match="monotone likelihood"):
            fit_cox(x, x, np.ones(10, bool))

    def test_bad_time(self):
        with pytest.raises(ValidationError, match="positive"):
            fit_cox(np.ones((2, 1)), [0.0, 1.0], [1, 1])

    def test_gradient_matches_finite_differences(self, rng):
        X = rng.standard_normal((12, 3))
        t = np.round(rng.exponential(1.0, 12), 1) + 0.1  # includes tied times
        e = rng.random(12) < 0.7
        e[0] = True
        beta = rng.normal(0, 0.5, 3)
        _, g, H = cox_partial_loglik(X, t, e, beta)
        h = 1e-6
        for j in range(3):
            d = np.zeros(3)
            d[j] = h
            num = (cox_partial_loglik(X, t, e, beta + d, False)[0] - cox_partial_loglik(X, t, e, beta - d, False)[0]) / (2 * h)
            assert abs(num - g[j]) < 1e-6 * max(1.0, abs(g[j]))
            gn = (cox_partial_loglik(X, t, e, beta + d)[1] - cox_partial_loglik(X, t, e, beta - d)[1]) / (2 * h)
            assert np.allclose(gn, H[:, j], atol=1e-6)


class TestRiskScores:
    def test_zero_beta(self, rng):
        X = rng.standard_normal((10, 2))
        t = rng.exponential(1.0, 10)
        m = fit_cox(X, t, np.ones(10, bool))
        m.coef[:] = 0.0
        assert np.array_equal(risk_scores(m, X), np.zeros(10))

    def test_monotone_and_round_trip(self, rng):
        X = rng.standard_normal((200, 2)) * [3.0, 0.5] + [10.0, -2.0]
        T = _exp_times(rng, (X - [10.0, -2.0]) @ [0.3, -1.0])
        m = fit_cox(X, T, np.ones(200, bool))
        s = risk_scores(m, X)
        j = int(np.argmax(m.coef))
        X2 = X.copy()
        X2[:, j] *= 2
        assert ((risk_scores(m, X2) > s) == (X[:, j] > 0)).all()
        Z = (X - m.center) / m.scale
        assert np.allclose(Z @ m.coef_standardized + m.center @ m.coef, s, atol=1e-10)

    def test_shape(self, rng):
        m = fit_cox(rng.standard_normal((10, 2)), rng.exponential(1.0, 10), np.ones(10, bool))
        with pytest.raises(ValidationError):
            risk_scores(m, np.ones((3, 3)))


class TestMedianSplit:
    def test_even(self):
        assert median_split([1, 2, 3, 4]).tolist() == [LOW, LOW, HIGH, HIGH]

    def test_ties_low(self):
        assert median_split([1, 2, 2, 3]).tolist() == [LOW, LOW, LOW, HIGH]

    def test_constant(self):
        with pytest.warns(RuntimeWarning, match="identical"):
            assert set(median_split([5, 5, 5])) == {LOW}


class TestKM:
    def test_all_events(self):
        assert np.array_equal(km_curve([1, 2, 3], [1, 1, 1]).survival, [2 / 3, 1 / 3, 0.0])

    def test_matches_product_limit(self, rng):
        for _ in range(50):
            t = rng.integers(1, 15, 30).astype(float)
            c = km_curve(t, rng.random(30) < 0.6)
            assert np.allclose(c.survival, np.cumprod(1 - c.events / c.at_risk), atol=1e-14)

    def test_all_censored(self):
        c = km_curve([1, 2, 3], [0, 0, 0])
        assert (c.survival == 1.0).all() and c.median_time() == float("inf")

    def test_single_event(self):
        c = km_curve([4.0, 5, 6, 7, 8], [1, 0, 0, 0, 0])
        assert c(4.0) == 1 - 1 / 5 and c(3.9) == 1.0

    def test_censored_leave_risk_set(self):
        c = km_curve([1, 2, 3, 4], [1, 0, 1, 1])
        assert c.at_risk.tolist() == [4, 3, 2, 1]
        assert np.allclose(c.survival, [0.75, 0.75, 0.375, 0.0])

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(0.01, 100), st.booleans()), min_size=1, max_size=40))
    def test_step_function(self, recs):
        c = km_curve([t for t, _ in recs], [e for _, e in recs])
        assert (np.diff(c.survival) <= 0).all() and (c.survival >= 0).all() and (c.survival <= 1).all()


class TestLogRank:
    def test_hand_fixture(self):
        # expected/observed table worked by hand: O_A = 3, E_A = 1.9, V = 0.99
        r = log_rank_test([1, 3, 5], [1, 1, 1], [2, 4, 6], [1, 0, 1])
        assert abs(r.observed_a - 3.0) < 1e-12 and abs(r.expected_a - 1.9) < 1e-12
        assert abs(r.statistic - 1.21 / 0.99) < 1e-6 and r.df == 1

    def test_identical_groups(self, rng):
        t, e = rng.exponential(1.0, 30), rng.random(30) < 0.8
        r = log_rank_test(t, e, t, e)
        assert r.statistic < 1e-12 and r.p_value > 0.999

    def test_symmetric(self, rng):
        t, e = rng.exponential(1.0, 60), rng.random(60) < 0.8
        a, b = log_rank_test(t[:25], e[:25], t[25:], e[25:]), log_rank_test(t[25:], e[25:], t[:25], e[:25])
        assert abs(a.statistic - b.statistic) < 1e-12

    def test_no_events(self):
        with pytest.raises(ValidationError, match="at least one event"):
            log_rank_test([1, 2], [0, 0], [3], [0])

    def test_power(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a, b = rng.exponential(1.0, 500), rng.exponential(0.1, 500)
            hits += log_rank_test(a, np.ones(500, bool), b, np.ones(500, bool)).p_value < 1e-6
        assert hits >= 19


class TestCIndex:
    def test_perfect(self):
        assert c_index([4, 3, 2, 1], [1, 2, 3, 4], [1, 1, 1, 1]) == 1.0

    def test_worked_fixture(self):
        # admissible: (0,1) discordant, (0,2) concordant; (1,2) starts censored
        assert c_index([2.0, 3.0, 1.0], [2.0, 4.0, 6.0], [1, 0, 1]) == 0.5

    def test_score_ties_half(self):
        assert c_index([1.0, 1.0], [1.0, 2.0], [1, 1]) == 0.5

    def test_random_near_half(self, rng):
        t = rng.exponential(1.0, 2000)
        assert abs(c_index(rng.standard_normal(2000), t, rng.random(2000) < 0.7) - 0.5) < 0.05

    def test_no_admissible(self):
        with pytest.raises(ValidationError, match="admissible"):
            c_index([1, 2], [1, 2], [0, 0])

    @settings(max_examples=40)
    @given(st.integers(0, 10_000), st.integers(3, 30))
    def test_reversal(self, seed, n):
        rng = np.random.default_rng(seed)
        s, t, e = rng.standard_normal(n), rng.exponential(1.0, n), rng.random(n) < 0.6
        e[np.argmin(t)] = True
        assert abs(c_index(s, t, e) + c_index(-s, t, e) - 1.0) < 1e-12


class TestPipeline:
    @pytest.fixture(scope="class")
    @staticmethod
    def cohort():
        m, truth = generate_cohort(SynthConfig(n_genes=400, n_tumor=300, n_normal=10, seed=5, hazard_weights=(1.5, 0.0, -1.5)))
        return m.select_kind(TUMOR), truth

    def test_planted_genes(self, cohort):
        m, truth = cohort
        genes = [g for k in range(3) for g in truth.block_genes(m.genes, k)[:10]]
        res = survival_pipeline({"planted": genes}, m)["planted"]
        assert res.c_index > 0.7 and res.logrank.p_value < 1e-3
        assert set(res.curves) == {HIGH, LOW}

    def test_noise_genes(self):
        # in-sample risk groups are optimistic, so only a majority is required
        small_p = 0
        for seed in range(20):
            m, truth = generate_cohort(SynthConfig(n_genes=400, n_tumor=200, n_normal=0, seed=seed, hazard_weights=(1.5, 0.0, -1.5)))
            planted = set(np.concatenate(truth.blocks + truth.normal_blocks).tolist())
            noise = [g for j, g in enumerate(m.genes) if j not in planted][:5]
            small_p += survival_pipeline({"noise": noise}, m)["noise"].logrank.p_value <= 0.01
        assert small_p < 10

    def test_duplicates_and_missing(self, cohort):
        m, _ = cohort
        genes = list(m.genes[:3])
        with pytest.warns(RuntimeWarning, match="not in the matrix"):
            res = survival_pipeline({"x": [genes, genes[::-1], ["NOPE"]]}, m)["x"]
        assert res.genes == tuple(genes) and res.missing == ("NOPE",)

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from panelvar import backtest as bt
from panelvar.errors import IdenticalForecasts, InsufficientObservations, SeparationFallback


def clustered_path(rng, T):
    return -1.645 * np.exp(0.2 * np.cumsum(rng.normal(0, 0.1, T)))


class TestHits:
    def test_example(self):
        assert list(bt.hits([-0.03, 0.01], [-0.02, -0.02], 0.05).hits) == [1, 0]

    def test_boundary_is_a_hit(self):
        r = np.array([-0.01, 0.02, 0.0])
        assert np.all(bt.hits(r, r, 0.5).hits == 1)

    def test_normal_var_hit_rate(self):
        n = 100_000
        r = np.random.default_rng(0).standard_normal(n)
        rate = bt.hits(r, np.full(n, norm.ppf(0.05)), 0.05).coverage
        assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / n)

    @settings(max_examples=50)
    @given(st.integers(0, 10**6), st.integers(1, 300))
    def test_binary_and_aligned(self, seed, T):
        rng = np.random.default_rng(seed)
        h = bt.hits(rng.standard_normal(T), rng.standard_normal(T), 0.1)
        assert len(h) == T and set(np.unique(h.hits)) <= {0, 1}
        assert 0.0 <= h.coverage <= 1.0


class TestDQ:
    def test_statistic_matches_reference_logit(self):
        # frozen from an independent maximum-likelihood logit fit
        rng = np.random.default_rng(31)
        q = clustered_path(rng, 500)
        r = rng.standard_normal(500) * np.abs(q) / 1.645
        res = bt.dq_test(bt.hits(r, q, 0.05), lags=4, mc_reps=199, seed=0)
        assert res.statistic == pytest.approx(17.886600699048, rel=1e-9)
        assert 0.0 <= res.p_value <= 1.0 and not res.separation

    def test_design_columns(self):
        h = bt.HitSeries(np.arange(10) % 2, 0.5, np.arange(10.0) ** 2)
        y, Z, Zq = bt.dq_design(h, lags=2)
        assert np.array_equal(y, h.hits[2:])
        assert np.array_equal(Z[:, 1], h.hits[1:-1]) and np.array_equal(Z[:, 2], h.hits[:-2])
        assert Zq.shape[0] == 8
        assert np.allclose(Zq.mean(axis=0), 0.0) and np.allclose(Zq.std(axis=0), 1.0)

    def test_size_under_null(self, dq_null_pvalues):
        """Bernoulli(0.05) hits are rejected at the nominal 5% rate."""
        assert 0.03 <= np.mean(dq_null_pvalues < 0.05) <= 0.07

    def test_all_zero_hits(self):
        q = clustered_path(np.random.default_rng(2), 200)
        res = bt.dq_test(bt.HitSeries(np.zeros(200, np.int8), 0.05, q), mc_reps=199)
        assert res.degenerate
        assert 0.0 <= res.p_value <= 1.0 and np.isfinite(res.statistic)

    def test_separation_falls_back_to_ridge(self):
        rng = np.random.default_rng(5)
        q = clustered_path(rng, 300)
        # hits are a deterministic function of the lagged forecast
        h = np.zeros(300, np.int8)
        h[1:] = q[:-1] < np.quantile(q, 0.1)
        with pytest.warns(SeparationFallback):
            res = bt.dq_test(bt.HitSeries(h, 0.1, q), mc_reps=99)
        assert res.separation and res.p_value < 0.05

    def test_reproducible(self):
        rng = np.random.default_rng(6)
        q = clustered_path(rng, 250)
        h = bt.HitSeries((rng.random(250) < 0.1).astype(np.int8), 0.1, q)
        assert bt.dq_test(h, mc_reps=99, seed=3) == bt.dq_test(h, mc_reps=99, seed=3)

    def test_needs_enough_hits(self):
        with pytest.raises(InsufficientObservations):
            bt.dq_test(bt.HitSeries(np.zeros(60, np.int8), 0.05, np.ones(60)), lags=4)


class TestTickLoss:
    def test_perfect_forecast(self):
        r = np.array([0.01, -0.02])
        assert bt.tick_loss(r, r, 0.05) == 0.0

    def test_median_is_half_mae(self, rng):
        r, q = rng.standard_normal(50), rng.standard_normal(50)
        assert bt.tick_loss(r, q, 0.5) == pytest.approx(0.5 * np.mean(np.abs(r - q)))

    def test_true_quantile_is_best(self):
        r = np.random.default_rng(10).standard_normal(200_000)
        q = norm.ppf(0.05)
        losses = {s: bt.tick_loss(r, np.full(r.shape, q + s), 0.05) for s in np.linspace(-0.5, 0.5, 21)}
        assert min(losses, key=losses.get) == pytest.approx(0.0, abs=0.051)

    @settings(max_examples=100)
    @given(st.integers(0, 10**6), st.floats(0.01, 0.99))
    def test_non_negative(self, seed, tau):
        rng = np.random.default_rng(seed)
        assert np.all(bt.tick_losses(rng.standard_normal(20), rng.standard_normal(20), tau) >= 0)


class TestDieboldMariano:
    def test_identical_losses(self, rng):
        loss = rng.random(100)
        res = bt.dm_test(loss, loss)
        assert res.statistic == 0.0 and res.p_value == 1.0 and res.identical
        with pytest.raises(IdenticalForecasts):
            bt.dm_test(loss, loss, raise_on_identical=True)

    def test_known_mean_difference(self):
        rng = np.random.default_rng(13)
        T, mu, sd = 1600, 0.05, 1.0
        d = rng.normal(mu, sd, T)
        res = bt.dm_test(d, np.zeros(T))
        assert res.statistic == pytest.approx(np.mean(d) * np.sqrt(T) / np.std(d), rel=1e-12)
        assert res.statistic == pytest.approx(mu * np.sqrt(T) / sd, abs=3.0)

    @settings(max_examples=50)
    @given(st.integers(0, 10**6))
    def test_antisymmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random(60), rng.random(60)
        ab, ba = bt.dm_test(a, b), bt.dm_test(b, a)
        assert ab.statistic == pytest.approx(-ba.statistic)
        assert ab.p_value == pytest.approx(ba.p_value)

    def test_better_rule(self):
        assert bt.dm_better(bt.DMResult(-2.5, 0.01))
        assert not bt.dm_better(bt.DMResult(2.5, 0.01))
        assert not bt.dm_better(bt.DMResult(-1.0, 0.3))

    def test_too_short(self):
        with pytest.raises(InsufficientObservations):
            bt.dm_test(np.ones(10), np.zeros(10))


class TestEvaluate:
    def test_report(self, small_data):
        from panelvar.models import ModelSpec
        from panelvar.var import rolling_forecast

        m, r = small_data
        series = [rolling_forecast(ModelSpec(k, taus=(0.05,)), m, r, window=300) for k in ("PQR_RV", "RISKMETRICS")]
        rep = bt.evaluate(series, mc_reps=49)
        assert rep.models() == ["PQR-RV", "RISKMETRICS"]
        assert set(rep.dm) == {("PQR-RV", "RISKMETRICS", 0.05), ("RISKMETRICS", "PQR-RV", 0.05)}
        res = rep.results[("PQR-RV", 0.05)]
        assert 0.0 <= res.coverage <= 1.0 and 0.0 <= res.dq.p_value <= 1.0

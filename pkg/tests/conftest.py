import numpy as np
import pytest

from panelvar.market_data import daily_returns
from panelvar.realized import compute_measures
from panelvar.simulate import SimConfig, simulate_paths


@pytest.fixture(scope="session")
def small_sim():
    """Three assets, 600 days on a 84-point grid: cheap but realistic."""
    cfg = SimConfig(days=600, intraday_steps=84, n_assets=3, seed=11)
    return simulate_paths(cfg)


@pytest.fixture(scope="session")
def small_data(small_sim):
    return compute_measures(small_sim.panel), daily_returns(small_sim.panel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dq_null_pvalues():
    """DQ p-values for 500 hit series drawn under the null (T=300, tau=0.05)."""
    import warnings

    from panelvar import backtest as bt
    from panelvar.errors import SeparationFallback

    gen = np.random.default_rng(77)
    T, trials = 300, 500
    out = np.empty(trials)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationFallback)
        for k in range(trials):
            q = -1.645 * np.exp(0.2 * np.cumsum(gen.normal(0, 0.1, T)))
            h = (gen.random(T) < 0.05).astype(np.int8)
            out[k] = bt.dq_test(bt.HitSeries(h, 0.05, q), lags=4, mc_reps=199, seed=k).p_value
    return out


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record an acceptance verdict, print it and fail the test when it is negative."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])

"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The Monte-Carlo criteria (3 to 6) share one study of 20 simulated panels with
five assets, run once per session through the same pipeline the CLI uses.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.stats import kstest, norm

from panelvar import backtest as bt
from panelvar import pipeline, qreg
from panelvar import portfolio as pf
from panelvar.cli import main
from panelvar.realized import (
    bipower_variation,
    compute_measures,
    correlation_from_covariance,
    jump_variation,
    realized_covariance,
    realized_semivariances,
    realized_variance,
)
from panelvar.simulate import SimConfig, simulate_paths

STUDY_MODELS = "pqr-rv,pqr-rsv,pqr-bpv,uqr-rv,riskmetrics"
STUDY_TAUS = (0.05, 0.10, 0.50, 0.90, 0.95)
REPLICATIONS = 20
PQR = ("PQR-RV", "PQR-RSV", "PQR-BPV")


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    cfg = pipeline.make_config(
        {},
        {
            "simulate": "mvn",
            "models": STUDY_MODELS,
            "taus": ",".join(str(t) for t in STUDY_TAUS),
            "replications": REPLICATIONS,
            "n_assets": 5,
            "days": 2613,
            "window": 1000,
            "dq_reps": 999,
            "seed": 0,
            "out_dir": str(tmp_path_factory.mktemp("study")),
        },
    )
    results = pipeline.run_study(cfg)
    files = pipeline.report_tables(cfg, results, cfg.out_dir)
    return cfg, results, files


def _coef_means(results, model, name):
    out = {}
    for res in results:
        for m, tau, _, param, est, _ in res.coefs:
            if m == model and param == name:
                out.setdefault(tau, []).append(est)
    return {tau: float(np.mean(v)) for tau, v in out.items()}


def _evaluation(results, model, tau):
    return [(cov, p) for res in results for m, t, cov, _, p, _ in res.evaluation if m == model and t == tau]


def _dm_share(results, a, b, tau):
    flags = [bt.dm_better(bt.DMResult(s, p)) for res in results for x, y, t, s, p in res.dm if (x, y, t) == (a, b, tau)]
    return float(np.mean(flags)), len(flags)


class TestCriterion1EstimatorIdentities:
    def test_identities_on_random_and_simulated_days(self, criterion):
        sim = simulate_paths(SimConfig(days=1000, intraday_steps=420, n_assets=5, seed=5))
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        worst_rel = 0.0
        jv_ok = corr_ok = True
        # 5000 random days of varying length, scale and tail weight
        for _ in range(5000):
            n = int(rng.integers(3, 400))
            r = rng.standard_t(int(rng.integers(2, 30)), n) * 10.0 ** rng.uniform(-4, -1)
            rv = realized_variance(r)
            plus, minus = realized_semivariances(r)
            worst_rel = max(worst_rel, abs(plus + minus - rv) / rv)
            jv = jump_variation(rv, bipower_variation(r))
            jv_ok &= bool(0.0 <= jv <= rv)
        for _ in range(500):
            k = int(rng.integers(2, 8))
            corr = correlation_from_covariance(realized_covariance(rng.standard_normal((k, 78)) * 0.001))
            corr_ok &= bool(np.all(np.diag(corr) == 1.0) and np.all(np.abs(corr) <= 1.0))
        # 5000 simulated asset-days, simulation time excluded
        m = compute_measures(sim.panel)
        worst_rel = max(worst_rel, float(np.max(np.abs(m.rs_plus + m.rs_minus - m.rv) / m.rv)))
        jv_ok &= bool(np.all(m.jv >= 0) and np.all(m.jv <= m.rv))
        corr = correlation_from_covariance(m.cov)
        corr_ok &= bool(np.all(np.diagonal(corr, axis1=1, axis2=2) == 1.0) and np.all(np.abs(corr) <= 1.0))
        elapsed = time.perf_counter() - start
        ok = worst_rel <= 1e-12 and jv_ok and corr_ok and elapsed < 10
        criterion(
            1, ok,
            f"max |RS+ + RS- - RV|/RV = {worst_rel:.1e}, JV in [0, RV]: {jv_ok}, "
            f"unit-diagonal |rho|<=1: {corr_ok}, {elapsed:.1f}s over 10^4 days",
        )


class TestCriterion2SolverCorrectness:
    def test_location_panel_and_subgradient(self, criterion):
        start = time.perf_counter()
        rng = np.random.default_rng(99)
        taus = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)
        worst_obj = worst_res = worst_panel = 0.0
        for _ in range(200):
            T = int(rng.integers(10, 500))
            tau = float(rng.choice(taus))
            y = rng.standard_normal(T) * rng.uniform(0.01, 100) + rng.normal(0, 10)
            prob = qreg.QuantileProblem(y, np.empty((T, 0)), np.zeros(T, int), tau)
            f = qreg.fit(prob)
            # the ceil(T*tau)-th order statistic is a sample tau-quantile
            q = np.sort(y)[int(np.ceil(T * tau)) - 1]
            ref = float(np.sum(qreg.quantile_loss(y - q, tau)))
            worst_obj = max(worst_obj, abs(f.objective - ref) / max(ref, 1e-300))
            worst_res = max(worst_res, qreg.optimality_residual(prob, f.alphas, f.betas))
        for _ in range(50):
            T, p = int(rng.integers(30, 300)), int(rng.integers(1, 4))
            V = np.abs(rng.standard_normal((T, p)))
            y = V @ rng.standard_normal(p) + rng.standard_t(5, T)
            tau = float(rng.choice(taus))
            panel = qreg.QuantileProblem(y, V, np.zeros(T, int), tau, mode="panel")
            uni = qreg.QuantileProblem(y, V, np.zeros(T, int), tau, mode="univariate")
            a, b = qreg.fit(panel), qreg.fit(uni)
            worst_panel = max(worst_panel, abs(a.objective - b.objective) / max(b.objective, 1e-300))
            worst_res = max(worst_res, qreg.optimality_residual(panel, a.alphas, a.betas))
            worst_res = max(worst_res, qreg.optimality_residual(uni, b.alphas, b.betas))
        for _ in range(30):
            n, T = int(rng.integers(2, 6)), int(rng.integers(40, 150))
            groups = np.repeat(np.arange(n), T)
            V = np.abs(rng.standard_normal((n * T, 2)))
            y = rng.normal(0, 1, n)[groups] + V @ [1.0, -0.5] + rng.standard_normal(n * T)
            prob = qreg.QuantileProblem(y, V, groups, float(rng.choice(taus)), lam=float(rng.uniform(0, 5)))
            f = qreg.fit(prob)
            worst_res = max(worst_res, qreg.optimality_residual(prob, f.alphas, f.betas))
        elapsed = time.perf_counter() - start
        ok = worst_obj <= 1e-8 and worst_res <= 1e-6 and worst_panel <= 1e-8 and elapsed < 60
        criterion(
            2, ok,
            f"location objective rel err {worst_obj:.1e}, subgradient residual {worst_res:.1e}, "
            f"panel(n=1) vs univariate {worst_panel:.1e}, {elapsed:.1f}s",
        )


class TestCriterion3CoefficientTable:
    def test_mean_coefficients(self, study, criterion):
        _, results, _ = study
        rv = _coef_means(results, "PQR-RV", "RV^1/2")
        target = {0.05: -1.54, 0.50: 0.00, 0.95: 1.55}
        rv_ok = all(abs(rv[t] - v) <= 0.25 for t, v in target.items())
        plus = _coef_means(results, "PQR-RSV", "RS+^1/2")
        minus = _coef_means(results, "PQR-RSV", "RS-^1/2")
        gaps = {t: abs(plus[t] - minus[t]) for t in (0.05, 0.95)}
        rsv_ok = all(g < 0.2 for g in gaps.values())
        jumps = _coef_means(results, "PQR-BPV", "Jumps^1/2")
        bpv_ok = all(abs(v) < 0.15 for v in jumps.values())
        criterion(
            3, rv_ok and rsv_ok and bpv_ok,
            "PQR-RV beta " + ", ".join(f"{t:g}:{rv[t]:+.3f}" for t in sorted(rv))
            + "; RS+/RS- gap " + ", ".join(f"{t:g}:{g:.3f}" for t, g in gaps.items())
            + "; max |jump beta| " + f"{max(abs(v) for v in jumps.values()):.3f}",
        )


class TestCriterion4Coverage:
    def test_coverage_and_dq(self, study, criterion):
        _, results, _ = study
        tails = (0.05, 0.10, 0.90, 0.95)
        devs = {}
        pvals = []
        for tau in tails:
            ev = _evaluation(results, "PQR-RV", tau)
            devs[tau] = 100 * (np.mean([c for c, _ in ev]) - tau)
            pvals += [p for _, p in ev]
        reject = 100 * float(np.mean(np.array(pvals) < 0.05))
        ok = all(abs(d) <= 1.0 for d in devs.values()) and 2.0 <= reject <= 12.0
        criterion(
            4, ok,
            "PQR-RV coverage - tau (pp) " + ", ".join(f"{t:g}:{d:+.2f}" for t, d in devs.items())
            + f"; DQ rejections {reject:.1f}% of {len(pvals)} tests",
        )


class TestCriterion5DieboldMariano:
    def test_sign_pattern(self, study, criterion):
        _, results, _ = study
        wins = {(m, t): _dm_share(results, m, "RISKMETRICS", t)[0] for m in PQR for t in (0.05, 0.95)}
        losses = {
            (m, t): _dm_share(results, "RISKMETRICS", m, t)[0] for m in PQR for t in STUDY_TAUS if t != 0.5
        }
        ok = all(v > 0.5 for v in wins.values()) and all(v < 0.05 for v in losses.values())
        criterion(
            5, ok,
            "PQR beats RM " + ", ".join(f"{m}@{t:g}:{100 * v:.0f}%" for (m, t), v in wins.items())
            + f"; RM beats PQR off-median at most {100 * max(losses.values()):.0f}%",
        )


class TestCriterion6GMVaR:
    def test_closed_form_and_ordering(self, study, criterion):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(100):
            g = rng.standard_normal((5, 7))
            xi = g @ g.T / 7 + 0.05 * np.eye(5)
            w = pf.gmvar_weights(xi)
            # oracle: gradient descent with steps projected onto sum(w) = 1
            v = np.full(5, 0.2)
            step = 1.0 / (2.0 * np.linalg.eigvalsh(xi)[-1])
            for _ in range(100_000):
                grad = 2.0 * xi @ v
                d = grad - grad.mean()
                v -= step * d
                if np.max(np.abs(d)) < 1e-14:
                    break
            worst = max(worst, float(np.max(np.abs(w - v))))
        _, results, _ = study
        shares = {}
        for tau in (0.05, 0.10):
            chain = []
            for res in results:
                g = {m: v for m, t, v in res.gmvar if t == tau}
                chain.append(g["PQR-RV"] <= g["UQR-RV"] <= g["RISKMETRICS"])
            shares[tau] = float(np.mean(chain))
        ok = worst <= 1e-6 and all(s > 0.5 for s in shares.values())
        criterion(
            6, ok,
            f"max weight gap {worst:.1e} over 100 instances; PQR-RV <= UQR-RV <= RM in "
            + ", ".join(f"{t:g}:{100 * s:.0f}%" for t, s in shares.items()) + " of replications",
        )


def _exact_frontier_point(xi, mu, target):
    n = len(mu)
    best = np.inf
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            S = list(S)
            A = np.vstack([np.ones(k), mu[S]])
            K = np.block([[2 * xi[np.ix_(S, S)], A.T], [A, np.zeros((2, 2))]])
            sol = np.linalg.lstsq(K, np.concatenate([np.zeros(k), [1.0, target]]), rcond=None)[0]
            w = sol[:k]
            if np.all(w >= -1e-12) and abs(w.sum() - 1) < 1e-9 and abs(mu[S] @ w - target) < 1e-9:
                best = min(best, float(w @ xi[np.ix_(S, S)] @ w))
    return best


def _grid_frontier_point(xi, mu, target, h=0.01):
    n = len(mu)
    m = int(round(1 / h))
    free = np.array(list(itertools.product(range(m + 1), repeat=n - 2)), dtype=float) * h
    free = free.reshape(max(len(free), 1), n - 2)
    free = free[free.sum(axis=1) <= 1 + 1e-12]
    rest = 1.0 - free.sum(axis=1)
    w2 = (target - free @ mu[: n - 2] - mu[-1] * rest) / (mu[-2] - mu[-1])
    w = np.column_stack([free, w2, rest - w2])
    w = w[np.all(w >= -1e-12, axis=1)]
    return float(np.min(np.einsum("ki,ij,kj->k", w, xi, w))) if len(w) else np.inf


class TestCriterion7Frontier:
    def test_random_instances(self, criterion):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        worst_exact = worst_kkt = 0.0
        above_grid = 0
        convex = True
        count = 0
        for n in (2, 3, 4, 5, 6):
            for _ in range(12):
                g = rng.standard_normal((n, n + 2))
                xi = g @ g.T / (n + 2) + 0.01 * np.eye(n)
                mu = rng.uniform(-0.05, 0.2, n)
                targets = np.linspace(mu.min(), mu.max(), 9)
                pts = pf.frontier(xi, mu, targets)
                var = np.array([p.portfolio_var for p in pts])
                convex &= bool(np.all(var[:-2] + var[2:] - 2 * var[1:-1] >= -1e-10))
                for t, p in zip(targets[1:-1:3], pts[1:-1:3]):
                    obj = p.portfolio_var**2
                    worst_exact = max(worst_exact, abs(obj - _exact_frontier_point(xi, mu, t)) / obj)
                    if n <= 5:
                        above_grid += obj > _grid_frontier_point(xi, mu, t) * (1 + 1e-4)
                    count += 1
                worst_kkt = max(worst_kkt, max(p.kkt_residual for p in pts))
        elapsed = time.perf_counter() - start
        ok = worst_exact <= 1e-4 and above_grid == 0 and convex and worst_kkt <= 1e-7 and elapsed < 60
        criterion(
            7, ok,
            f"{count} points: rel gap to exhaustive search {worst_exact:.1e}, worse than 0.01 grid: "
            f"{above_grid}, convex: {convex}, max KKT residual {worst_kkt:.1e}, {elapsed:.1f}s",
        )


class TestCriterion8Backtests:
    def test_machinery(self, dq_null_pvalues, criterion):
        ks = kstest(dq_null_pvalues, "uniform").statistic
        loss = np.random.default_rng(1).random(1612)
        dm = bt.dm_test(loss, loss).statistic
        n = 100_000
        r = np.random.default_rng(8).standard_normal(n)
        rates = {}
        for tau in (0.01, 0.05, 0.10, 0.90, 0.95):
            rates[tau] = (bt.hits(r, np.full(n, norm.ppf(tau)), tau).coverage, 3 * np.sqrt(tau * (1 - tau) / n))
        hit_ok = all(abs(c - t) <= s for t, (c, s) in rates.items())
        ok = ks < 0.08 and dm == 0.0 and hit_ok
        criterion(
            8, ok,
            f"DQ null KS distance {ks:.3f} over {len(dq_null_pvalues)} trials; DM on identical "
            f"losses {dm}; normal VaR hit rates within 3 s.e.: {hit_ok}",
        )


class TestCriterion9Determinism:
    def test_study_twice(self, tmp_path, criterion):
        cfg = tmp_path / "study.cfg"
        cfg.write_text(
            "models = pqr-rv, pqr-rsv, uqr-rv, portfolio_uqr, riskmetrics\n"
            "taus = 0.05, 0.5, 0.95\nreplications = 2\nn_assets = 3\ndays = 700\n"
            "window = 500\nintraday_steps = 84\ndq_reps = 99\nseed = 17\nfrontier = true\n"
        )
        outs = [tmp_path / "first", tmp_path / "second"]
        codes = [main(["study", "--config", str(cfg), "--simulate", "mvn", "--out-dir", str(o)]) for o in outs]
        names = sorted(p.name for p in outs[0].iterdir())
        same = names == sorted(p.name for p in outs[1].iterdir()) and all(
            (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in names
        )
        criterion(9, codes == [0, 0] and same, f"{len(names)} files compared, byte-identical: {same}")

"""Forecast evaluation: hits, coverage, the dynamic quantile test, tick loss and DM."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import norm

from .errors import IdenticalForecasts, InsufficientObservations, PanelVarError, SeparationFallback

SEPARATION_BOUND = 20.0  # |coef| on standardised regressors that signals separation
RIDGE = 1e-2


@dataclass(frozen=True)
class HitSeries:
    hits: np.ndarray = field(repr=False)
    tau: float
    forecasts: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.hits)

    @property
    def coverage(self) -> float:
        return float(np.mean(self.hits)) if len(self.hits) else float("nan")


def hits(returns, forecasts, tau: float) -> HitSeries:
    """``1{r <= Q}``; equality counts as a violation."""
    r = np.asarray(returns, dtype=float).ravel()
    q = np.asarray(forecasts, dtype=float).ravel()
    if r.shape != q.shape:
        raise PanelVarError("returns and forecasts must have equal length")
    return HitSeries((r <= q).astype(np.int8), tau, q)


def coverage(h: HitSeries) -> float:
    return h.coverage


# ---------------------------------------------------------------- logistic MLE


@numba.njit(cache=True)
def _loglik(Z, h, b):
    ll = 0.0
    for t in range(Z.shape[0]):
        eta = 0.0
        for j in range(Z.shape[1]):
            eta += Z[t, j] * b[j]
        # log(1 + exp(eta)) computed stably
        sp = eta + math.log1p(math.exp(-eta)) if eta > 0 else math.log1p(math.exp(eta))
        ll += h[t] * eta - sp
    return ll


@numba.njit(cache=True)
def _logit_fit(Z, h, ridge, b0, maxit, gtol):
    """Damped Newton for the (optionally ridge-penalised) logistic likelihood.

    The intercept (column 0) is never penalised.  Returns
    ``(coef, unpenalised loglik, converged)``.
    """
    T, k = Z.shape
    b = b0.copy()
    pen = np.full(k, ridge)
    pen[0] = 0.0
    cur = _loglik(Z, h, b) - 0.5 * np.sum(pen * b * b)
    converged = False
    for _ in range(maxit):
        grad = -pen * b
        H = np.diag(pen + 1e-12)
        for t in range(T):
            eta = 0.0
            for j in range(k):
                eta += Z[t, j] * b[j]
            p = 1.0 / (1.0 + math.exp(-eta))
            r = h[t] - p
            wt = p * (1.0 - p)
            for j in range(k):
                grad[j] += Z[t, j] * r
                zw = Z[t, j] * wt
                for l in range(j + 1):
                    H[j, l] += zw * Z[t, l]
        for j in range(k):
            for l in range(j):
                H[l, j] = H[j, l]
        gn = 0.0
        for j in range(k):
            gn += grad[j] * grad[j]
        if math.sqrt(gn) < gtol:
            converged = True
            break
        step = np.linalg.solve(H, grad)
        s = 1.0
        improved = False
        for _ls in range(40):
            trial = b + s * step
            val = _loglik(Z, h, trial) - 0.5 * np.sum(pen * trial * trial)
            if val >= cur - 1e-12 * abs(cur):
                b = trial
                improved = val > cur
                cur = val
                break
            s *= 0.5
        if not improved:
            converged = True
            break
        if ridge == 0.0 and np.max(np.abs(b)) > SEPARATION_BOUND:
            # diverging towards a separating direction, stop early
            break
    return b, _loglik(Z, h, b), converged


@numba.njit(cache=True)
def _lr_stat(Z, h, ll0, tau, ridge_fallback):
    """LR statistic and separation flag for one hit series."""
    k = Z.shape[1]
    b0 = np.zeros(k)
    m = 0.0
    for t in range(len(h)):
        m += h[t]
    m /= len(h)
    m = min(max(m, 1e-4), 1.0 - 1e-4)
    b0[0] = math.log(m / (1.0 - m))
    b, ll, ok = _logit_fit(Z, h, 0.0, b0, 100, 1e-10)
    sep = not ok
    for j in range(k):
        if abs(b[j]) > SEPARATION_BOUND or not np.isfinite(b[j]):
            sep = True
    if sep:
        b, ll, ok = _logit_fit(Z, h, ridge_fallback, b0, 100, 1e-10)
    stat = 2.0 * (ll - ll0)
    return max(stat, 0.0), sep


@numba.njit(cache=True)
def _null_stats(Zq, lags, tau, hits_sim, ridge):
    """LR statistics for simulated hit paths (rows of ``hits_sim``)."""
    R, T = hits_sim.shape
    n = T - lags
    kq = Zq.shape[1]
    k = 1 + lags + kq
    Z = np.empty((n, k))
    h = np.empty(n)
    out = np.empty(R)
    lt = math.log(tau)
    l1t = math.log(1.0 - tau)
    for r in range(R):
        ll0 = 0.0
        for t in range(n):
            hv = hits_sim[r, t + lags]
            h[t] = hv
            ll0 += hv * lt + (1.0 - hv) * l1t
            Z[t, 0] = 1.0
            for d in range(lags):
                Z[t, 1 + d] = hits_sim[r, t + lags - 1 - d]
            for j in range(kq):
                Z[t, 1 + lags + j] = Zq[t, j]
        out[r] = _lr_stat(Z, h, ll0, tau, ridge)[0]
    return out


def _forecast_block(forecasts, lags):
    """Standardised forecast lags ``Q_t .. Q_{t-L+1}`` with collinear columns dropped."""
    q = np.asarray(forecasts, dtype=float)
    T = len(q)
    # row for hit t carries Q_t .. Q_{t-L+1}; Q_t is known at the close of t-1
    cols = np.column_stack([q[lags - d : T - d] for d in range(lags)]) if lags else np.empty((T, 0))
    sd = cols.std(axis=0)
    keep = []
    basis = [np.ones(len(cols)) / math.sqrt(len(cols))]
    for j in range(cols.shape[1]):
        c = cols[:, j] - cols[:, j].mean()
        if sd[j] <= 1e-12 * (np.abs(cols[:, j]).max() + 1e-300):
            continue
        resid = c.copy()
        for bvec in basis:
            resid -= (bvec @ resid) * bvec
        if np.linalg.norm(resid) > 1e-8 * np.linalg.norm(c):
            basis.append(resid / np.linalg.norm(resid))
            keep.append(j)
    Zq = (cols[:, keep] - cols[:, keep].mean(axis=0)) / cols[:, keep].std(axis=0)
    return np.ascontiguousarray(Zq)


@dataclass(frozen=True)
class DQResult:
    statistic: float
    p_value: float
    lags: int
    mc_reps: int
    seed: int | None
    separation: bool = False
    degenerate: bool = False


def dq_design(hit_series: HitSeries, lags: int = 4):
    """Response and design of the hit regression (constant, hit lags, forecast lags)."""
    h = np.asarray(hit_series.hits, dtype=float)
    T = len(h)
    Zq = _forecast_block(hit_series.forecasts, lags)
    Zh = np.column_stack([h[lags - 1 - d : T - 1 - d] for d in range(lags)]) if lags else np.empty((T, 0))
    Z = np.column_stack([np.ones(T - lags), Zh, Zq])
    return h[lags:], np.ascontiguousarray(Z), Zq


def dq_null_distribution(forecasts, tau: float, lags: int = 4, mc_reps: int = 9999, seed=0):
    """LR statistics under iid Bernoulli(tau) hits, forecast path held fixed."""
    q = np.asarray(forecasts, dtype=float)
    Zq = _forecast_block(q, lags)
    rng = np.random.default_rng(seed)
    sims = (rng.random((mc_reps, len(q))) < tau).astype(np.float64)
    return _null_stats(Zq, lags, float(tau), sims, RIDGE)


def dq_test(
    hit_series: HitSeries,
    lags: int = 4,
    mc_reps: int = 9999,
    seed=0,
    null=None,
) -> DQResult:
    """Dynamic quantile test with Monte-Carlo p-value.

    ``null`` may carry precomputed statistics from ``dq_null_distribution``
    for the same forecast path.
    """
    tau = hit_series.tau
    T = len(hit_series)
    if T <= 10 * (2 * lags + 1):
        raise InsufficientObservations(f"DQ test with {lags} lags needs more than {10 * (2 * lags + 1)} hits")
    y, Z, _ = dq_design(hit_series, lags)
    ll0 = float(np.sum(y * math.log(tau) + (1 - y) * math.log(1 - tau)))
    stat, sep = _lr_stat(Z, y, ll0, float(tau), RIDGE)
    degenerate = bool(np.all(y == y[0]))
    if sep:
        warnings.warn(
            "logistic fit separated; statistic taken from a ridge-penalised fit",
            SeparationFallback,
        )
    if null is None:
        null = dq_null_distribution(hit_series.forecasts, tau, lags, mc_reps, seed)
    null = np.asarray(null)
    p = float(np.mean(null >= stat - 1e-12 * max(1.0, abs(stat))))
    return DQResult(float(stat), p, lags, len(null), seed, bool(sep), degenerate)


# ------------------------------------------------------------- loss and DM


def tick_losses(returns, forecasts, tau: float) -> np.ndarray:
    e = np.asarray(returns, dtype=float) - np.asarray(forecasts, dtype=float)
    return e * (tau - (e < 0))


def tick_loss(returns, forecasts, tau: float) -> float:
    """Mean check loss of the forecast errors."""
    return float(np.mean(tick_losses(returns, forecasts, tau)))


@dataclass(frozen=True)
class DMResult:
    statistic: float
    p_value: float
    identical: bool = False


def dm_test(loss_a, loss_b, raise_on_identical: bool = False) -> DMResult:
    """Diebold-Mariano test on ``d = loss_a - loss_b``; negative favours ``a``."""
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape:
        raise PanelVarError("loss series must have equal length")
    if len(a) < 30:
        raise InsufficientObservations("DM test needs at least 30 losses")
    d = a - b
    var = float(np.var(d))
    if var <= 1e-300 * max(1.0, float(np.mean(a * a))) or var == 0.0:
        if raise_on_identical:
            raise IdenticalForecasts("loss differential has zero variance")
        return DMResult(0.0, 1.0, True)
    stat = float(np.mean(d) / math.sqrt(var / len(d)))
    return DMResult(stat, float(2.0 * norm.sf(abs(stat))), False)


def dm_better(result: DMResult, level: float = 0.05) -> bool:
    """``a`` significantly more accurate than ``b`` at the two-sided ``level``."""
    return result.statistic < 0 and result.p_value < level


# ------------------------------------------------------------------ reports


@dataclass(frozen=True)
class ModelTauResult:
    model: str
    tau: float
    coverage: float
    dq: DQResult | None
    loss: float


@dataclass
class BacktestReport:
    """Per-run evaluation: one entry per (model, tau) plus pairwise DM results."""

    results: dict = field(default_factory=dict)  # (model, tau) -> ModelTauResult
    dm: dict = field(default_factory=dict)  # (model_a, model_b, tau) -> DMResult
    dq_seed: int | None = None

    def models(self):
        seen = []
        for m, _ in self.results:
            if m not in seen:
                seen.append(m)
        return seen


def evaluate(series_list, lags: int = 4, mc_reps: int = 9999, seed=0, dq: bool = True) -> BacktestReport:
    """Coverage, DQ, tick loss for every series and tau; DM for every ordered pair.

    Series too short for the DQ test get ``dq=None``; pairs too short for DM
    are left out.
    """
    report = BacktestReport(dq_seed=seed)
    losses = {}
    for s in series_list:
        for k, tau in enumerate(s.taus):
            q = s.var[k]
            hs = hits(s.realized, q, tau)
            res = None
            if dq and len(hs) > 10 * (2 * lags + 1):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SeparationFallback)
                    res = dq_test(hs, lags, mc_reps, seed)
            ls = tick_losses(s.realized, q, tau)
            losses[(s.model, tau)] = ls
            report.results[(s.model, tau)] = ModelTauResult(
                s.model, tau, hs.coverage, res, float(ls.mean())
            )
    names = [s.model for s in series_list]
    taus = sorted({t for s in series_list for t in s.taus})
    for tau in taus:
        for a in names:
            for b in names:
                if a == b or (a, tau) not in losses or (b, tau) not in losses:
                    continue
                if len(losses[(a, tau)]) < 30:
                    continue
                report.dm[(a, b, tau)] = dm_test(losses[(a, tau)], losses[(b, tau)])
    return report

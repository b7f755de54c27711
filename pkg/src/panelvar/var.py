"""Single-asset and portfolio %VaR forecasts over a rolling estimation window.

Quantiles keep their natural sign: left-tail VaRs are negative.  Square-root
aggregation formulas are evaluated on magnitudes and re-signed by the tail.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import qreg
from .errors import CorrelationError, DegenerateCutoff, InsufficientObservations, PanelVarError
from .market_data import DailyPanel
from .models import (
    ModelSpec,
    build_design,
    check_alignment,
    forecast_regressors,
    portfolio_design,
    portfolio_uqr_series,
    riskmetrics_path,
)
from .realized import RealizedSeries, correlation_from_covariance

DEGENERATE_FLAG = "DegenerateCutoff"


def _tail_sign(tau, reference=None) -> float:
    if tau is not None and tau != 0.5:
        return -1.0 if tau < 0.5 else 1.0
    if reference is not None and reference < 0:
        return -1.0
    return 1.0


def normal_var(sigma, w, tau: float) -> float:
    """``gamma_tau * sqrt(w' Sigma w)`` with ``gamma_tau`` the normal quantile."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    w = np.asarray(w, dtype=float).ravel()
    gamma = norm.ppf(tau)
    if tau == 0.5:
        warnings.warn("normal cut-off is 0 at tau=0.5; VaR is identically 0", DegenerateCutoff)
        return 0.0
    qf = max(float(w @ sigma @ w), 0.0)
    return float(np.sign(gamma) * np.sqrt(gamma * gamma * qf))


def aggregate_var(asset_vars, omega, w, tau: float | None = None) -> float:
    """Portfolio VaR ``sqrt((w o |VaR|)' Omega (w o |VaR|))`` re-signed by tail.

    Without ``tau`` the sign follows ``sum(w * VaR)``.
    """
    v = np.asarray(asset_vars, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape != (len(v), len(v)) or len(w) != len(v):
        raise PanelVarError("dimension mismatch between VaRs, weights and correlation")
    if not np.allclose(np.diag(omega), 1.0, atol=1e-10):
        raise CorrelationError("correlation matrix must have a unit diagonal")
    if len(v) > 1 and np.linalg.eigvalsh(0.5 * (omega + omega.T))[0] < -1e-10:
        raise CorrelationError("correlation matrix is not positive semidefinite")
    a = w * np.abs(v)
    qf = max(float(a @ omega @ a), 0.0)
    return _tail_sign(tau, float(w @ v)) * float(np.sqrt(qf))


def _aggregate_many(asset_vars, omegas, w, tau):
    """Vectorised ``aggregate_var`` over days, inputs already validated."""
    a = w[None, :] * np.abs(asset_vars)
    qf = np.maximum(np.einsum("ti,tij,tj->t", a, omegas, a), 0.0)
    if tau != 0.5:
        sign = _tail_sign(tau)
    else:
        sign = np.where(asset_vars @ w < 0, -1.0, 1.0)
    return sign * np.sqrt(qf)


@dataclass(frozen=True)
class VaRForecastSeries:
    """Rolling one-step forecasts for one model.

    ``var[k, f]`` is the portfolio VaR at level ``taus[k]`` for target date
    ``dates[f]``; ``asset_vars[k, f, i]`` holds the per-asset VaRs when the
    model produces them.
    """

    model: str
    taus: tuple
    dates: tuple
    origins: np.ndarray = field(repr=False)
    var: np.ndarray = field(repr=False)
    realized: np.ndarray = field(repr=False)
    asset_vars: np.ndarray | None = field(default=None, repr=False)
    asset_returns: np.ndarray | None = field(default=None, repr=False)
    flags: tuple = ()

    def __len__(self):
        return len(self.dates)

    def tau_index(self, tau: float) -> int:
        for k, t in enumerate(self.taus):
            if abs(t - tau) < 1e-12:
                return k
        raise KeyError(f"tau {tau} not forecast")

    def for_tau(self, tau: float) -> np.ndarray:
        return self.var[self.tau_index(tau)]


def _window_rows(n_assets, rows_per_asset, first_row, start, stop):
    """Row indices of days ``start .. stop-1`` (response days) in an asset-major design."""
    a = start - first_row
    b = stop - first_row
    base = np.arange(a, b)
    return (np.arange(n_assets)[:, None] * rows_per_asset + base[None, :]).ravel()


def _annotate(exc, date):
    exc.window_end = date
    if exc.args:
        exc.args = (f"{exc.args[0]} (window ending {date})",) + exc.args[1:]
    return exc


def rolling_forecast(
    spec: ModelSpec,
    measures: RealizedSeries,
    returns: DailyPanel,
    window: int = 1000,
    taus=None,
    weights=None,
    tol: float = 1e-8,
) -> VaRForecastSeries:
    """Re-estimate daily on the last ``window`` days and forecast one day ahead.

    Forecast origins are ``t = window .. T-2``.  At origin ``t`` the quantile
    models are fitted on responses dated ``t-window+1 .. t`` and evaluated at
    the measures of day ``t``; per-asset VaRs are aggregated with the
    correlation of the day-``t`` realized covariance.
    """
    check_alignment(measures, returns)
    taus = tuple(spec.taus if taus is None else taus)
    r = np.asarray(returns.returns)
    T, n = r.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).ravel()
    L = spec.lag_count
    if window < L + 2 or T - 1 - window < 1:
        raise InsufficientObservations(f"T={T} days cannot support window {window}")
    origins = np.arange(window, T - 1)
    F = len(origins)
    dates = tuple(returns.dates[t + 1] for t in origins)
    realized = r[origins + 1] @ w
    var = np.empty((len(taus), F))
    asset_vars = None
    flags = [""] * len(taus)

    if spec.family == "riskmetrics":
        sig = riskmetrics_path(r, window)[1:]  # forecasts for days window+1 .. T-1
        sd = np.sqrt(np.maximum(np.diagonal(sig, axis1=1, axis2=2), 0.0))
        qf = np.sqrt(np.maximum(np.einsum("i,tij,j->t", w, sig, w), 0.0))
        asset_vars = np.empty((len(taus), F, n))
        for k, tau in enumerate(taus):
            gamma = norm.ppf(tau)
            if tau == 0.5:
                warnings.warn(
                    "normal cut-off is 0 at tau=0.5; VaR is identically 0", DegenerateCutoff
                )
                flags[k] = DEGENERATE_FLAG
                gamma = 0.0
            asset_vars[k] = gamma * sd
            var[k] = gamma * qf
    elif spec.family == "portfolio":
        r_p, s_p = portfolio_uqr_series(r, measures.cov, w)
        solver = qreg.WindowSolver(portfolio_design(r_p, s_p, lam=spec.lam, lag_count=L), tol)
        for f, t in enumerate(origins):
            rows = np.arange(t - window + 1, t + 1) - L
            x = np.array([s_p[t - j] for j in range(L)])
            for k, tau in enumerate(taus):
                try:
                    fit = solver.fit(rows, tau)
                except PanelVarError as exc:
                    raise _annotate(exc, returns.dates[t]) from None
                var[k, f] = fit.alphas[0] + x @ fit.betas[0]
    else:
        solver = qreg.WindowSolver(build_design(spec, measures, returns), tol)
        rows_per_asset = T - L
        omegas = correlation_from_covariance(measures.cov[origins], measures.assets)
        asset_vars = np.empty((len(taus), F, n))
        for f, t in enumerate(origins):
            rows = _window_rows(n, rows_per_asset, L, t - window + 1, t + 1)
            x = forecast_regressors(spec, measures, t)
            for k, tau in enumerate(taus):
                try:
                    fit = solver.fit(rows, tau)
                except PanelVarError as exc:
                    raise _annotate(exc, returns.dates[t]) from None
                if spec.family == "panel":
                    asset_vars[k, f] = fit.alphas + x @ fit.betas
                else:
                    asset_vars[k, f] = fit.alphas + np.einsum("ij,ij->i", x, fit.betas)
        for k, tau in enumerate(taus):
            var[k] = _aggregate_many(asset_vars[k], omegas, w, tau)

    return VaRForecastSeries(
        spec.label,
        taus,
        dates,
        origins,
        var,
        realized,
        asset_vars,
        r[origins + 1],
        tuple(flags),
    )


def write_forecasts(series_list, path) -> None:
    """Long CSV ``date,model,tau,var_forecast,realized_return[,flag]``."""
    flagged = any(any(s.flags) for s in series_list)
    with open(path, "w", newline="") as fh:
        header = "date,model,tau,var_forecast,realized_return"
        fh.write(header + (",flag\n" if flagged else "\n"))
        for s in series_list:
            for k, tau in enumerate(s.taus):
                flag = s.flags[k] if s.flags else ""
                for f, day in enumerate(s.dates):
                    line = f"{day},{s.model},{tau:g},{s.var[k, f]:.10g},{s.realized[f]:.10g}"
                    fh.write(line + (f",{flag}\n" if flagged else "\n"))

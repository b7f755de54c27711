"""Regressor sets for the quantile models and the EWMA benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, InsufficientObservations, NumericalPSDError
from .market_data import DailyPanel
from .qreg import QuantileProblem
from .realized import RealizedSeries

KINDS = (
    "PQR_RV",
    "PQR_RSV",
    "PQR_BPV",
    "UQR_RV",
    "UQR_RSV",
    "UQR_BPV",
    "PORTFOLIO_UQR",
    "RISKMETRICS",
)
DEFAULT_TAUS = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)

_MEASURES = {
    "RV": ("rv",),
    "RSV": ("rs_plus", "rs_minus"),
    "BPV": ("bpv", "jv"),
}
_LABELS = {
    "rv": "RV^1/2",
    "rs_plus": "RS+^1/2",
    "rs_minus": "RS-^1/2",
    "bpv": "BPV^1/2",
    "jv": "Jumps^1/2",
}


def parse_kind(name: str) -> str:
    """Accept ``pqr-rv``, ``PQR_RV``, ``riskmetrics`` style names."""
    kind = name.strip().upper().replace("-", "_")
    aliases = {"RM": "RISKMETRICS", "PUQR": "PORTFOLIO_UQR", "PORTFOLIO": "PORTFOLIO_UQR"}
    kind = aliases.get(kind, kind)
    if kind not in KINDS:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(KINDS)}")
    return kind


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    lag_count: int = 1
    taus: tuple = DEFAULT_TAUS
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if self.lag_count < 1:
            raise ConfigError("lag_count must be >= 1")
        if any(not 0.0 < t < 1.0 for t in self.taus):
            raise ConfigError("quantile levels must lie in (0, 1)")

    @property
    def family(self) -> str:
        if self.kind.startswith("PQR"):
            return "panel"
        if self.kind.startswith("UQR"):
            return "univariate"
        if self.kind == "PORTFOLIO_UQR":
            return "portfolio"
        return "riskmetrics"

    @property
    def measures(self) -> tuple:
        if self.family in ("panel", "univariate"):
            return _MEASURES[self.kind.split("_", 1)[1]]
        return ()

    @property
    def param_names(self) -> tuple:
        if self.family == "portfolio":
            base = ("sigma_P",)
        else:
            base = tuple(_LABELS[m] for m in self.measures)
        names = list(base)
        for lag in range(1, self.lag_count):
            names += [f"{b}_lag{lag}" for b in base]
        return tuple(names)

    @property
    def label(self) -> str:
        return self.kind.replace("_", "-")


def check_alignment(measures: RealizedSeries, returns: DailyPanel) -> None:
    if tuple(measures.dates) != tuple(returns.dates):
        raise AlignmentError("realized measures and daily returns cover different dates")
    if returns.assets and tuple(measures.assets) != tuple(returns.assets):
        raise AlignmentError("realized measures and daily returns cover different assets")


def lagged_columns(x: np.ndarray, lag_count: int) -> np.ndarray:
    """Stack ``x`` (``(T, k)``) with its lags, rows for origins ``t = L-1 .. T-2``.

    Row ``s`` holds ``x[t], x[t-1], ..., x[t-L+1]`` for ``t = L-1+s``.
    """
    T = x.shape[0]
    L = lag_count
    return np.concatenate([x[L - 1 - j : T - 1 - j] for j in range(L)], axis=1)


def regressor_panel(spec: ModelSpec, measures: RealizedSeries) -> np.ndarray:
    """Square-root regressors ``(T, n, k)`` at every day (no lags)."""
    cols = [np.sqrt(getattr(measures, m)) for m in spec.measures]
    return np.stack(cols, axis=-1)


def build_design(
    spec: ModelSpec, measures: RealizedSeries, returns: DailyPanel, tau: float = 0.5
) -> QuantileProblem:
    """Pair ``r_{i,t+1}`` with the square-root measures dated ``t`` (and lags).

    Rows are stacked asset-major; ``day_index`` holds the response day.
    """
    check_alignment(measures, returns)
    if spec.family not in ("panel", "univariate"):
        raise ConfigError(f"{spec.kind} has no panel design; see portfolio_uqr_series")
    r = np.asarray(returns.returns)
    T, n = r.shape
    L = spec.lag_count
    if T - L < 1:
        raise InsufficientObservations(f"{T} days cannot support {L} lags")
    X = regressor_panel(spec, measures)
    k = X.shape[2]
    rows = T - L
    y = r[L:].T.ravel()
    V = np.empty((n * rows, k * L))
    for i in range(n):
        V[i * rows : (i + 1) * rows] = lagged_columns(X[:, i, :], L)
    idx = np.repeat(np.arange(n), rows)
    days = np.tile(np.arange(L, T), n)
    return QuantileProblem(
        y,
        V,
        idx,
        tau,
        spec.lam,
        "panel" if spec.family == "panel" else "univariate",
        n_assets=n,
        day_index=days,
        param_names=spec.param_names,
        asset_names=tuple(measures.assets),
    )


def forecast_regressors(spec: ModelSpec, measures: RealizedSeries, t: int) -> np.ndarray:
    """Regressor rows ``(n, k*L)`` known at the close of day ``t``."""
    X = regressor_panel(spec, measures)
    return np.concatenate([X[t - j] for j in range(spec.lag_count)], axis=1)


@dataclass(frozen=True)
class EwmaState:
    sigma: np.ndarray
    decay: float = 0.94

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("EWMA decay must lie in (0, 1)")
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", 0.5 * (s + s.T))


def riskmetrics_update(state: EwmaState, r) -> EwmaState:
    """``decay * sigma + (1 - decay) * r r'``."""
    r = np.asarray(r, dtype=float).ravel()
    new = state.decay * state.sigma + (1.0 - state.decay) * np.outer(r, r)
    return EwmaState(new, state.decay)


def riskmetrics_path(returns: np.ndarray, window: int, decay: float = 0.94) -> np.ndarray:
    """One-step covariance forecasts for days ``window .. T-1``.

    Entry ``k`` is the forecast for day ``window + k`` made at the close of the
    previous day.  The recursion is seeded with the sample covariance of the
    first ``window`` days.
    """
    r = np.asarray(returns, dtype=float)
    T, n = r.shape
    if window < 2 or window > T:
        raise InsufficientObservations(f"window {window} invalid for {T} days")
    state = EwmaState(np.atleast_2d(np.cov(r[:window], rowvar=False)), decay)
    out = np.empty((T - window, n, n))
    out[0] = state.sigma
    for k in range(1, T - window):
        state = riskmetrics_update(state, r[window + k - 1])
        out[k] = state.sigma
    return out


def portfolio_uqr_series(returns: DailyPanel, covariances, weights):
    """Portfolio returns ``w'r_t`` and volatilities ``sqrt(w' Sigma_t w)``."""
    r = np.asarray(returns.returns if isinstance(returns, DailyPanel) else returns, dtype=float)
    w = np.asarray(weights, dtype=float).ravel()
    if not np.isclose(w.sum(), 1.0, atol=1e-10):
        raise ConfigError("portfolio weights must sum to 1")
    cov = np.asarray(covariances, dtype=float)
    qf = np.einsum("i,tij,j->t", w, cov, w)
    if np.any(qf < -1e-12):
        t = int(np.argmin(qf))
        raise NumericalPSDError(f"w' Sigma w = {qf[t]:.3e} < 0 on day {t}")
    return r @ w, np.sqrt(np.maximum(qf, 0.0))


def portfolio_design(r_p, sigma_p, tau: float = 0.5, lam: float = 0.0, lag_count: int = 1):
    """Univariate quantile problem of ``r_{P,t+1}`` on ``sigma_{P,t}`` (and lags)."""
    r_p = np.asarray(r_p, dtype=float)
    L = lag_count
    T = len(r_p)
    V = lagged_columns(np.asarray(sigma_p, dtype=float)[:, None], L)
    names = ("sigma_P",) + tuple(f"sigma_P_lag{j}" for j in range(1, L))
    return QuantileProblem(
        r_p[L:],
        V,
        np.zeros(T - L, dtype=np.int64),
        tau,
        lam,
        "univariate",
        n_assets=1,
        day_index=np.arange(L, T),
        param_names=names,
        asset_names=("P",),
    )

"""Monte-Carlo generator: jump diffusion with square-root stochastic variance.

Log-price per asset follows

    dp = (mu - v/2) dt + sqrt(v) dW1 + c dN,    dv = kappa (alpha - v) dt + gamma sqrt(v) dW2

discretised by Euler with full truncation (``v+ = max(v, 0)`` inside drift and
diffusion).  Parameters are in annual units and one trading day spans
``1/days_per_year``; each day is split into ``intraday_steps`` steps.
W1 increments are drawn from one of four error laws; in the multivariate cases
they are correlated across assets with a per-day correlation matrix.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import CholeskyError, ConfigError
from .market_data import IntradayPanel

DISTRIBUTIONS = ("mvn", "mt9", "n01", "t9")
T_DOF = 9


@dataclass(frozen=True)
class SimConfig:
    mu: float = 0.0
    alpha: float = 0.04
    kappa: float = 5.0
    gamma: float = 0.5
    sigma_jump: float = 0.01
    jump_intensity: float = 0.2  # expected jumps per asset per day
    days: int = 2613
    intraday_steps: int = 420
    n_assets: int = 5
    error_dist: str = "mvn"
    seed: int = 0
    v0: float | None = None  # initial variance, defaults to alpha
    days_per_year: int = 252
    base_correlation: float = 0.3
    wishart_dof: int = 50
    start_date: dt.date = dt.date(2005, 7, 1)
    initial_log_price: float = float(np.log(100.0))

    def __post_init__(self):
        if 2.0 * self.kappa * self.alpha < self.gamma**2:
            raise ConfigError(
                f"Feller condition violated: 2*kappa*alpha={2 * self.kappa * self.alpha} "
                f"< gamma^2={self.gamma**2}"
            )
        if self.error_dist not in DISTRIBUTIONS:
            raise ConfigError(f"error_dist must be one of {DISTRIBUTIONS}")
        if self.days < 1 or self.intraday_steps < 3 or self.n_assets < 1:
            raise ConfigError("days >= 1, intraday_steps >= 3 and n_assets >= 1 required")
        if self.jump_intensity < 0 or self.sigma_jump < 0:
            raise ConfigError("jump intensity and size must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / (self.days_per_year * self.intraday_steps)


@dataclass(frozen=True)
class SimOutput:
    panel: IntradayPanel
    true_iv: np.ndarray = field(repr=False)  # (days, n) integrated variance
    true_jv: np.ndarray = field(repr=False)  # (days, n) sum of squared jumps
    jumps: tuple = field(repr=False)  # (day, asset, step, size) records
    correlations: np.ndarray | None = field(default=None, repr=False)
    continuous_rv: np.ndarray | None = field(default=None, repr=False)


def trading_days(start: dt.date, count: int) -> list:
    """Weekdays from ``start``; holidays are not modelled."""
    out = []
    d = start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _cholesky(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        # PSD but singular matrices are fine: use an eigen square root
        w, q = np.linalg.eigh(sigma)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise CholeskyError(f"covariance is not positive semidefinite (min eig {w.min():.3e})") from exc
        return q * np.sqrt(np.clip(w, 0.0, None))


def multivariate_innovations(dist, sigma, steps, seed=None, rng=None):
    """Draw ``steps`` innovation vectors.

    ``mvn``: N(0, sigma) via Cholesky.  ``mt9``: Student-t with 9 dof and scale
    matrix ``sigma`` (covariance ``9/7 sigma``), as a normal / chi-square
    mixture.  ``n01`` and ``t9`` draw independently per asset; ``sigma`` then
    only fixes the dimension.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    n = sigma.shape[0]
    if dist in ("mvn", "mt9"):
        chol = _cholesky(sigma)
        z = rng.standard_normal((steps, n)) @ chol.T
        if dist == "mt9":
            z /= np.sqrt(rng.chisquare(T_DOF, size=(steps, 1)) / T_DOF)
        return z
    if dist == "n01":
        return rng.standard_normal((steps, n))
    if dist == "t9":
        return rng.standard_t(T_DOF, size=(steps, n))
    raise ConfigError(f"unknown distribution {dist!r}")


def synthetic_correlation_path(n, days, rho=0.3, dof=50, rng=None):
    """Per-day correlation matrices: Wishart draws around an equicorrelated base."""
    rng = rng if rng is not None else np.random.default_rng()
    base = np.full((n, n), rho) + (1.0 - rho) * np.eye(n)
    chol = np.linalg.cholesky(base)
    out = np.empty((days, n, n))
    for t in range(days):
        g = rng.standard_normal((dof, n)) @ chol.T
        s = g.T @ g
        d = 1.0 / np.sqrt(np.diag(s))
        out[t] = s * d[:, None] * d[None, :]
    return out


@numba.njit(cache=True)
def _day_kernel(p0, v0, z1, z2, jumps, mu, alpha, kappa, gamma, dt):
    steps, n = z1.shape
    path = np.empty((n, steps + 1))
    iv = np.zeros(n)
    crv = np.zeros(n)
    v = v0.copy()
    p = p0.copy()
    sdt = np.sqrt(dt)
    for i in range(n):
        path[i, 0] = p[i]
    for k in range(steps):
        for i in range(n):
            vp = v[i] if v[i] > 0.0 else 0.0
            sv = np.sqrt(vp)
            dc = (mu - 0.5 * vp) * dt + sv * sdt * z1[k, i]
            p[i] += dc + jumps[k, i]
            crv[i] += dc * dc
            iv[i] += vp * dt
            v[i] += kappa * (alpha - vp) * dt + gamma * sv * sdt * z2[k, i]
            path[i, k + 1] = p[i]
    return path, v, iv, crv


def simulate_paths(config: SimConfig, sigma_series=None, rng=None) -> SimOutput:
    """Simulate ``config.days`` sessions for ``config.n_assets`` assets.

    ``sigma_series`` (``(days, n, n)``) supplies the per-day covariance used to
    correlate W1 in the multivariate modes; it is rescaled to a correlation
    matrix, so only its correlation structure enters.  When omitted, a
    synthetic Wishart-perturbed path is drawn from the same generator.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, days, steps = config.n_assets, config.days, config.intraday_steps
    corr = None
    if config.error_dist in ("mvn", "mt9"):
        if sigma_series is None:
            corr = synthetic_correlation_path(
                n, days, config.base_correlation, config.wishart_dof, rng
            )
        else:
            s = np.asarray(sigma_series, dtype=float)
            if s.ndim == 2:
                s = np.broadcast_to(s, (days, n, n))
            if s.shape != (days, n, n):
                raise ConfigError(f"sigma_series must be ({days}, {n}, {n})")
            d = np.sqrt(np.diagonal(s, axis1=1, axis2=2))
            if np.any(~(d > 0)):
                raise CholeskyError("supplied covariance has a non-positive diagonal")
            corr = s / d[:, :, None] / d[:, None, :]
        for t in range(days):
            # validates PSD up front so failures name no partial output
            _cholesky(corr[t])

    dtv = config.dt
    v = np.full(n, config.alpha if config.v0 is None else config.v0, dtype=float)
    p = np.full(n, config.initial_log_price)
    log_prices = np.empty((days, n, steps + 1))
    true_iv = np.empty((days, n))
    true_jv = np.zeros((days, n))
    crv = np.empty((days, n))
    jump_log = []
    ident = np.eye(n)
    for t in range(days):
        z1 = multivariate_innovations(
            config.error_dist, corr[t] if corr is not None else ident, steps, rng=rng
        )
        z2 = rng.standard_normal((steps, n))
        jumps = np.zeros((steps, n))
        counts = rng.poisson(config.jump_intensity, size=n)
        for i in np.flatnonzero(counts):
            where = rng.integers(0, steps, size=counts[i])
            sizes = rng.normal(0.0, config.sigma_jump, size=counts[i])
            for k, c in zip(where, sizes):
                jumps[k, i] += c
                jump_log.append((t, i, int(k), float(c)))
                true_jv[t, i] += c * c
        path, v, iv, crv[t] = _day_kernel(
            p, v, z1, z2, jumps, config.mu, config.alpha, config.kappa, config.gamma, dtv
        )
        log_prices[t] = path
        true_iv[t] = iv
        p = path[:, -1].copy()

    days_list = trading_days(config.start_date, days)
    assets = tuple(f"A{i + 1:02d}" for i in range(n))
    grid_seconds = max(1, int(round(7 * 3600 / steps)))
    panel = IntradayPanel(assets, days_list, grid_seconds, log_prices)
    return SimOutput(panel, true_iv, true_jv, tuple(jump_log), corr, crv)


def write_ledger(out: SimOutput, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date,asset,true_iv,true_jv\n")
        for t, day in enumerate(out.panel.days):
            for i, name in enumerate(out.panel.assets):
                fh.write(f"{day},{name},{out.true_iv[t, i]:.12g},{out.true_jv[t, i]:.12g}\n")

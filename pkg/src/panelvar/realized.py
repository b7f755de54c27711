"""Realized measures computed from intraday log-returns.

Every estimator works on the last axis, so a single day's vector, a
``(assets, N)`` block or a full ``(days, assets, N)`` panel all go through the
same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVariance, GridMismatch, InsufficientObservations
from .market_data import IntradayPanel

MU1 = np.sqrt(2.0 / np.pi)  # E|Z| for Z ~ N(0, 1)


def realized_variance(returns):
    r = np.asarray(returns, dtype=float)
    return np.sum(r * r, axis=-1)


def realized_semivariances(returns):
    """Return ``(rs_plus, rs_minus)``; zero returns enter neither side."""
    r = np.asarray(returns, dtype=float)
    sq = r * r
    return np.sum(np.where(r > 0, sq, 0.0), axis=-1), np.sum(np.where(r < 0, sq, 0.0), axis=-1)


def bipower_variation(returns):
    r"""Skip-one bipower variation ``mu1^-2 N/(N-2) sum_{k>=3} |r_{k-2}||r_k|``."""
    a = np.abs(np.asarray(returns, dtype=float))
    n = a.shape[-1]
    if n < 3:
        raise InsufficientObservations(f"bipower variation needs N >= 3, got {n}")
    return (n / (n - 2)) / MU1**2 * np.sum(a[..., 2:] * a[..., :-2], axis=-1)


def jump_variation(rv, bpv):
    """``max(rv - bpv, 0)``."""
    return np.maximum(np.asarray(rv, dtype=float) - np.asarray(bpv, dtype=float), 0.0)


def realized_covariance(returns):
    """Realized covariance from a ``(..., assets, N)`` block of returns."""
    if isinstance(returns, (list, tuple)):
        lengths = {len(np.asarray(x)) for x in returns}
        if len(lengths) != 1:
            raise GridMismatch(f"assets have different grid lengths: {sorted(lengths)}")
    r = np.asarray(returns, dtype=float)
    cov = r @ np.swapaxes(r, -1, -2)
    # exact symmetry and diag == RV; matmul may differ in the last ulp
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    idx = np.arange(cov.shape[-1])
    cov[..., idx, idx] = realized_variance(r)
    return cov


def correlation_from_covariance(cov, assets=None):
    c = np.asarray(cov, dtype=float)
    d = np.diagonal(c, axis1=-2, axis2=-1)
    bad = np.argwhere(~(d > 0))
    if bad.size:
        idx = int(bad[0][-1])
        name = assets[idx] if assets is not None else idx
        raise DegenerateVariance(name, float(d[tuple(bad[0])]))
    s = 1.0 / np.sqrt(d)
    corr = c * s[..., :, None] * s[..., None, :]
    corr = np.clip(0.5 * (corr + np.swapaxes(corr, -1, -2)), -1.0, 1.0)
    idx = np.arange(c.shape[-1])
    corr[..., idx, idx] = 1.0
    return corr


@dataclass(frozen=True)
class RealizedDay:
    rv: np.ndarray
    rs_plus: np.ndarray
    rs_minus: np.ndarray
    bpv: np.ndarray
    jv: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class RealizedSeries:
    """Per-day measures; per-asset arrays are ``(T, n)``, ``cov`` is ``(T, n, n)``."""

    dates: tuple
    assets: tuple
    rv: np.ndarray = field(repr=False)
    rs_plus: np.ndarray = field(repr=False)
    rs_minus: np.ndarray = field(repr=False)
    bpv: np.ndarray = field(repr=False)
    jv: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.dates)

    def day(self, t: int) -> RealizedDay:
        return RealizedDay(
            self.rv[t], self.rs_plus[t], self.rs_minus[t], self.bpv[t], self.jv[t], self.cov[t]
        )

    def slice(self, start: int, stop: int) -> "RealizedSeries":
        return RealizedSeries(
            self.dates[start:stop],
            self.assets,
            self.rv[start:stop],
            self.rs_plus[start:stop],
            self.rs_minus[start:stop],
            self.bpv[start:stop],
            self.jv[start:stop],
            self.cov[start:stop],
        )


def compute_measures(panel: IntradayPanel) -> RealizedSeries:
    r = panel.intraday_returns()
    rv = realized_variance(r)
    rs_plus, rs_minus = realized_semivariances(r)
    bpv = bipower_variation(r)
    return RealizedSeries(
        panel.days,
        panel.assets,
        rv,
        rs_plus,
        rs_minus,
        bpv,
        jump_variation(rv, bpv),
        realized_covariance(r),
    )


def write_measures(series: RealizedSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date,asset,rv,rs_plus,rs_minus,bpv,jv\n")
        for t, day in enumerate(series.dates):
            for i, name in enumerate(series.assets):
                fh.write(
                    f"{day},{name},{series.rv[t, i]:.12g},{series.rs_plus[t, i]:.12g},"
                    f"{series.rs_minus[t, i]:.12g},{series.bpv[t, i]:.12g},{series.jv[t, i]:.12g}\n"
                )


def write_covariances(series: RealizedSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date,asset_i,asset_j,value\n")
        for t, day in enumerate(series.dates):
            for i, a in enumerate(series.assets):
                for j, b in enumerate(series.assets):
                    fh.write(f"{day},{a},{b},{series.cov[t, i, j]:.12g}\n")

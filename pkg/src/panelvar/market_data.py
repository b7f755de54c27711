"""Tick ingestion, previous-tick synchronisation and daily return panels."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MissingDay, PanelVarError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Session:
    start: dt.time = dt.time(9, 30)
    end: dt.time = dt.time(16, 0)

    @property
    def seconds(self) -> int:
        s = self.start.hour * 3600 + self.start.minute * 60 + self.start.second
        e = self.end.hour * 3600 + self.end.minute * 60 + self.end.second
        if e <= s:
            raise PanelVarError(f"session end {self.end} not after start {self.start}")
        return e - s

    def start_offset(self) -> int:
        return self.start.hour * 3600 + self.start.minute * 60 + self.start.second


@dataclass(frozen=True)
class IntradayPanel:
    """Synchronised grid log-prices, shape ``(days, assets, N + 1)``."""

    assets: tuple
    days: tuple
    grid_seconds: int
    log_prices: np.ndarray = field(repr=False)

    def __post_init__(self):
        lp = _frozen(self.log_prices)
        if lp.ndim != 3:
            raise PanelVarError("log_prices must be (days, assets, N+1)")
        if lp.shape[0] != len(self.days) or lp.shape[1] != len(self.assets):
            raise PanelVarError("log_prices shape does not match days/assets")
        if lp.shape[2] < 2:
            raise PanelVarError("need at least two grid points per day")
        if not np.all(np.isfinite(lp)):
            raise PanelVarError("log_prices contain missing cells")
        object.__setattr__(self, "log_prices", lp)
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "days", tuple(self.days))

    @property
    def n_intraday(self) -> int:
        return self.log_prices.shape[2] - 1

    def intraday_returns(self) -> np.ndarray:
        """Intraday log-returns, shape ``(days, assets, N)``."""
        return np.diff(self.log_prices, axis=2)


@dataclass(frozen=True)
class DailyPanel:
    returns: np.ndarray = field(repr=False)  # (T, n)
    dates: tuple
    assets: tuple = ()

    def __post_init__(self):
        r = _frozen(self.returns)
        if r.ndim != 2 or r.shape[0] != len(self.dates):
            raise PanelVarError("returns must be (T, n) aligned with dates")
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "assets", tuple(self.assets))


def n_grid_returns(session: Session, grid_seconds: int) -> int:
    length = session.seconds
    if grid_seconds <= 0 or length % grid_seconds:
        raise PanelVarError(
            f"grid of {grid_seconds}s does not divide the {length}s session"
        )
    return length // grid_seconds


def synchronize(ticks: pd.DataFrame, session: Session, grid_seconds: int) -> IntradayPanel:
    """Previous-tick sample raw ticks onto a fixed intraday grid.

    ``ticks`` needs columns ``timestamp``, ``asset_id`` and ``price``.  Only
    ticks inside the session window are used; grid points that precede the
    first in-session tick of a day take that first tick (back-fill at the
    open).  An asset with no in-session tick on a day raises ``MissingDay``.
    """
    n_ret = n_grid_returns(session, grid_seconds)
    ts = pd.to_datetime(ticks["timestamp"])
    price = ticks["price"].to_numpy(dtype=float)
    if np.any(price <= 0):
        raise PanelVarError("prices must be strictly positive")
    asset = ticks["asset_id"].astype(str).to_numpy()
    date = ts.dt.date.to_numpy()
    secs = (
        ts.dt.hour * 3600 + ts.dt.minute * 60 + ts.dt.second + ts.dt.microsecond / 1e6
    ).to_numpy()
    t0 = session.start_offset()
    in_session = (secs >= t0) & (secs <= t0 + session.seconds)

    frame = pd.DataFrame(
        {"asset": asset, "date": date, "sec": secs - t0, "lp": np.log(price)}
    )[in_session]
    assets = tuple(sorted(pd.unique(asset)))
    days = tuple(sorted(pd.unique(date)))
    grid = np.arange(n_ret + 1, dtype=float) * grid_seconds

    out = np.empty((len(days), len(assets), n_ret + 1))
    groups = {k: g for k, g in frame.groupby(["asset", "date"], sort=False)}
    for d, day in enumerate(days):
        for a, name in enumerate(assets):
            g = groups.get((name, day))
            if g is None or len(g) == 0:
                raise MissingDay(name, day)
            # stable sort keeps the last-arriving tick for equal timestamps
            g = g.sort_values("sec", kind="mergesort")
            sec = g["sec"].to_numpy()
            lp = g["lp"].to_numpy()
            idx = np.searchsorted(sec, grid, side="right") - 1
            out[d, a] = lp[np.maximum(idx, 0)]
    return IntradayPanel(assets, days, grid_seconds, out)


def daily_returns(panel: IntradayPanel) -> DailyPanel:
    """Open-to-close log return of each session."""
    if len(panel.days) == 0:
        raise PanelVarError("empty panel")
    lp = panel.log_prices
    return DailyPanel(lp[:, :, -1] - lp[:, :, 0], panel.days, panel.assets)


def read_ticks(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, header=None, comment="#", dtype={1: str})
    if isinstance(frame.iloc[0, 0], str) and frame.iloc[0, 0].strip().lower().startswith(
        "timestamp"
    ):
        frame = frame.iloc[1:]
    frame = frame.iloc[:, :3]
    frame.columns = ["timestamp", "asset_id", "price"]
    frame["price"] = frame["price"].astype(float)
    return frame.reset_index(drop=True)


def write_ticks(panel: IntradayPanel, path: str | Path, session: Session) -> None:
    """Write a gridded panel back out in the tick CSV schema."""
    t0 = session.start_offset()
    n_days, n_assets, m = panel.log_prices.shape
    offsets = t0 + np.arange(m) * panel.grid_seconds
    with open(path, "w", newline="") as fh:
        fh.write("timestamp_iso8601,asset_id,price\n")
        for d, day in enumerate(panel.days):
            base = dt.datetime.combine(_as_date(day), dt.time())
            stamps = [(base + dt.timedelta(seconds=int(o))).isoformat() for o in offsets]
            prices = np.exp(panel.log_prices[d])
            for a, name in enumerate(panel.assets):
                fh.writelines(
                    f"{s},{name},{p:.12g}\n" for s, p in zip(stamps, prices[a])
                )


def write_grid_audit(panel: IntradayPanel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("date,asset,k,log_price\n")
        for d, day in enumerate(panel.days):
            for a, name in enumerate(panel.assets):
                fh.writelines(
                    f"{day},{name},{k},{v:.12g}\n"
                    for k, v in enumerate(panel.log_prices[d, a])
                )


def _as_date(day) -> dt.date:
    if isinstance(day, dt.date):
        return day
    return dt.date.fromisoformat(str(day))

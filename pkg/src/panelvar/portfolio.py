"""VaR-based portfolio construction: global minimum VaR and the long-only frontier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DegenerateAsset, PanelVarError, SingularXi, TargetInfeasible

TRADING_DAYS = 252


@dataclass(frozen=True)
class VaRCovariance:
    """``diag|VaR| * Omega * diag|VaR|`` with its ingredients."""

    xi: np.ndarray = field(repr=False)
    asset_vars: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.asset_vars)


def build_xi(asset_vars, omega, tau: float | None = None) -> VaRCovariance:
    v = np.asarray(asset_vars, dtype=float).ravel()
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape != (len(v), len(v)):
        raise PanelVarError("correlation matrix does not match the VaR vector")
    if tau != 0.5 and np.any(v == 0.0):
        raise DegenerateAsset(f"zero VaR for asset(s) {np.flatnonzero(v == 0.0).tolist()}")
    a = np.abs(v)
    xi = a[:, None] * omega * a[None, :]
    xi = 0.5 * (xi + xi.T)
    xi[np.diag_indices_from(xi)] = a * a
    return VaRCovariance(xi, v, omega)


def _as_matrix(xi):
    return xi.xi if isinstance(xi, VaRCovariance) else np.atleast_2d(np.asarray(xi, dtype=float))


def gmvar_weights(xi) -> np.ndarray:
    """Minimiser of ``w' Xi w`` subject to ``sum(w) = 1``, short sales allowed."""
    X = _as_matrix(xi)
    if not np.all(np.isfinite(X)):
        raise SingularXi("Xi has non-finite entries")
    if np.linalg.cond(X) >= 1e12:
        raise SingularXi("Xi is singular or nearly so (condition number >= 1e12)")
    x = np.linalg.solve(X, np.ones(len(X)))
    return x / x.sum()


@dataclass(frozen=True)
class GMVaRValue:
    quadratic: float  # w' Xi w
    root: float  # sqrt(w' Xi w), a VaR magnitude


def gmvar_value(xi, w) -> GMVaRValue:
    X = _as_matrix(xi)
    w = np.asarray(w, dtype=float)
    q = max(float(w @ X @ w), 0.0)
    return GMVaRValue(q, math.sqrt(q))


def annualize_var(v):
    return np.asarray(v, dtype=float) * math.sqrt(TRADING_DAYS)


def annualize_return(r):
    return np.asarray(r, dtype=float) * TRADING_DAYS


# ---------------------------------------------------------------- frontier


@dataclass(frozen=True)
class FrontierPoint:
    target: float
    weights: np.ndarray
    portfolio_var: float  # sqrt(w' Xi w)
    kkt_residual: float
    converged: bool = True
    iterations: int = 0


def _null_space(A, tol=1e-12):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[rank:].T


def _multipliers(X, w, mu, working):
    """Least-squares multipliers of ``X w = nu1 1 + nu2 mu + sum_W lam_i e_i``."""
    n = len(w)
    cols = [np.ones(n), mu] + [np.eye(n)[i] for i in working]
    A = np.column_stack(cols)
    lam, *_ = np.linalg.lstsq(A, X @ w, rcond=None)
    return lam, A


def kkt_residual(X, mu, target, w) -> float:
    """Largest violation of stationarity, feasibility, sign and complementarity."""
    X = _as_matrix(X)
    mu = np.asarray(mu, dtype=float)
    active = [i for i in range(len(w)) if w[i] <= 1e-12]
    A = np.column_stack([np.ones(len(w)), mu] + [np.eye(len(w))[i] for i in active])
    # at the ends of the frontier the constraint gradients are dependent, so
    # pick the sign-feasible multipliers closest to stationarity
    lower = np.r_[-np.inf, -np.inf, np.zeros(len(active))]
    lam = lsq_linear(A, X @ w, bounds=(lower, np.inf), method="bvls", tol=1e-15).x
    stat = np.max(np.abs(A @ lam - X @ w))
    ineq = lam[2:]
    worst = max(
        stat,
        abs(w.sum() - 1.0),
        abs(mu @ w - target),
        max(0.0, -float(w.min())),
        max(0.0, -float(ineq.min())) if len(ineq) else 0.0,
        float(np.max(np.abs(ineq * w[active]))) if len(ineq) else 0.0,
    )
    return float(worst)


def solve_frontier_qp(xi, mu, target: float, maxit: int = 500, tol: float = 1e-9) -> FrontierPoint:
    """Primal active-set method for ``min w'Xi w`` s.t. ``1'w = 1, mu'w = target, w >= 0``."""
    X = _as_matrix(xi)
    mu = np.asarray(mu, dtype=float).ravel()
    n = len(mu)
    lo, hi = float(mu.min()), float(mu.max())
    span = max(hi - lo, abs(hi), 1e-300)
    if target < lo - 1e-12 * span or target > hi + 1e-12 * span:
        raise TargetInfeasible(f"target {target} outside [{lo}, {hi}]")
    i_lo, i_hi = int(np.argmin(mu)), int(np.argmax(mu))
    w = np.zeros(n)
    if hi - lo <= 1e-15 * span:
        w[:] = 1.0 / n
    else:
        theta = min(max((target - lo) / (hi - lo), 0.0), 1.0)
        w[i_hi] += theta
        w[i_lo] += 1.0 - theta
    working = [i for i in range(n) if w[i] == 0.0]
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        A = np.vstack([np.ones(n), mu] + [np.eye(n)[i] for i in working])
        Z = _null_space(A)
        g = X @ w
        if Z.shape[1]:
            H = Z.T @ X @ Z
            y, *_ = np.linalg.lstsq(H, -(Z.T @ g), rcond=None)
            p = Z @ y
        else:
            p = np.zeros(n)
        if np.max(np.abs(p)) <= tol * max(1.0, np.max(np.abs(w))):
            lam, _ = _multipliers(X, w, mu, working)
            ineq = lam[2:]
            scale = max(1e-300, float(np.max(np.abs(X))))
            if len(ineq) == 0 or ineq.min() >= -tol * scale:
                converged = True
                break
            working.pop(int(np.argmin(ineq)))
            continue
        alpha = 1.0
        block = -1
        for i in range(n):
            if i not in working and p[i] < 0:
                a = -w[i] / p[i]
                if a < alpha:
                    alpha, block = a, i
        w = w + alpha * p
        if block >= 0:
            w[block] = 0.0
            working.append(block)
    w = np.where(np.abs(w) < 1e-15, 0.0, w)
    value = math.sqrt(max(float(w @ X @ w), 0.0))
    return FrontierPoint(target, w, value, kkt_residual(X, mu, target, w), converged, it)


def frontier(xi, mu, targets) -> list:
    """One long-only minimum-VaR portfolio per target return.

    Infeasible targets raise; a point that fails to converge is returned with
    ``converged=False`` and the sweep continues.
    """
    return [solve_frontier_qp(xi, mu, float(t)) for t in targets]


def gmvar_path(asset_vars, omegas, tau: float | None = None):
    """Daily GMVaR weights and values for forecast VaRs and correlations."""
    v = np.asarray(asset_vars, dtype=float)
    F, n = v.shape
    weights = np.full((F, n), np.nan)
    values = np.full(F, np.nan)
    for f in range(F):
        xi = build_xi(v[f], omegas[f], tau)
        w = gmvar_weights(xi)
        weights[f] = w
        values[f] = gmvar_value(xi, w).root
    return weights, values


def write_frontier(rows, path, n_assets: int) -> None:
    """``rows`` are ``(model, tau, FrontierPoint)``."""
    with open(path, "w", newline="") as fh:
        head = ",".join(f"w{i + 1}" for i in range(n_assets))
        fh.write(f"model,tau,target_return,portfolio_var,{head}\n")
        for model, tau, pt in rows:
            ws = ",".join(f"{x:.10g}" for x in pt.weights)
            fh.write(f"{model},{tau:g},{pt.target:.10g},{pt.portfolio_var:.10g},{ws}\n")

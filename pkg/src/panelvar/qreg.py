"""Univariate and penalised fixed-effects panel quantile regression.

The panel estimator minimises, for a single quantile level ``tau``,

    sum_i sum_t rho_tau(y_it - alpha_i - v_it' beta) + lam * sum_i |alpha_i|

with per-asset, per-quantile fixed effects ``alpha_i`` and slopes ``beta``
shared across assets.  In univariate mode every asset gets its own slopes
and the problem separates into one classical quantile regression per asset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from . import _fnb, _simplex
from .errors import (
    BootstrapDegenerate,
    InsufficientObservations,
    PanelVarError,
    RankDeficient,
    SolverFailure,
)

MODES = ("panel", "univariate")


def quantile_loss(u, tau):
    """Check function ``u * (tau - 1{u < 0})``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


@dataclass(frozen=True)
class QuantileProblem:
    y: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)  # (N, p) slope regressors
    asset_index: np.ndarray = field(repr=False)  # (N,) ints in [0, n_assets)
    tau: float
    lam: float = 0.0
    mode: str = "panel"
    n_assets: int | None = None
    day_index: np.ndarray | None = field(default=None, repr=False)
    param_names: tuple = ()
    asset_names: tuple = ()

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).ravel()
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        V = np.ascontiguousarray(V.reshape(len(y), -1))
        idx = np.ascontiguousarray(self.asset_index, dtype=np.int64).ravel()
        if len(idx) != len(y):
            raise PanelVarError("asset_index must align with y")
        if not 0.0 < self.tau < 1.0:
            raise PanelVarError(f"tau must lie in (0, 1), got {self.tau}")
        if self.lam < 0:
            raise PanelVarError("lambda must be non-negative")
        if self.mode not in MODES:
            raise PanelVarError(f"mode must be one of {MODES}")
        n = int(idx.max()) + 1 if self.n_assets is None else int(self.n_assets)
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise PanelVarError("asset_index out of range")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "asset_index", idx)
        object.__setattr__(self, "n_assets", n)
        if self.day_index is not None:
            object.__setattr__(
                self, "day_index", np.ascontiguousarray(self.day_index, dtype=np.int64).ravel()
            )
        if not self.param_names:
            object.__setattr__(
                self, "param_names", tuple(f"x{j}" for j in range(V.shape[1]))
            )

    @property
    def n_slopes(self) -> int:
        return self.V.shape[1]

    def with_tau(self, tau: float) -> "QuantileProblem":
        return _replace(self, tau=tau)

    def subset(self, rows) -> "QuantileProblem":
        rows = np.asarray(rows)
        return _replace(
            self,
            y=self.y[rows],
            V=self.V[rows],
            asset_index=self.asset_index[rows],
            day_index=None if self.day_index is None else self.day_index[rows],
        )


def _replace(problem, **changes):
    kw = {
        "y": problem.y,
        "V": problem.V,
        "asset_index": problem.asset_index,
        "tau": problem.tau,
        "lam": problem.lam,
        "mode": problem.mode,
        "n_assets": problem.n_assets,
        "day_index": problem.day_index,
        "param_names": problem.param_names,
        "asset_names": problem.asset_names,
    }
    kw.update(changes)
    return QuantileProblem(**kw)


@dataclass(frozen=True)
class QuantileFit:
    alphas: np.ndarray
    betas: np.ndarray  # (p,) in panel mode, (n, p) in univariate mode
    objective: float
    tau: float
    lam: float
    mode: str = "panel"
    gap: float = 0.0
    iterations: int = 0

    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.alphas, np.ravel(self.betas)])


@dataclass(frozen=True)
class BootstrapSE:
    names: tuple
    estimates: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    replications: int
    skipped: int


def _fitted(problem: QuantileProblem, alphas, betas) -> np.ndarray:
    betas = np.asarray(betas, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if problem.mode == "panel" or betas.ndim == 1:
        slope = problem.V @ betas.reshape(-1) if problem.n_slopes else 0.0
    else:
        slope = np.einsum("kj,kj->k", problem.V, betas[problem.asset_index])
    return alphas[problem.asset_index] + slope


def objective(problem: QuantileProblem, alphas, betas) -> float:
    """Penalised check-loss criterion at the given parameters."""
    resid = problem.y - _fitted(problem, alphas, betas)
    return float(
        np.sum(quantile_loss(resid, problem.tau))
        + problem.lam * np.sum(np.abs(np.asarray(alphas, dtype=float)))
    )


def check_rank(V, groups, n_groups, names=None):
    """Raise ``RankDeficient`` unless the within-group demeaned ``V`` has full column rank."""
    V = np.asarray(V, dtype=float)
    counts = np.bincount(groups, minlength=n_groups)
    if np.any(counts == 0):
        g = int(np.flatnonzero(counts == 0)[0])
        raise RankDeficient(f"alpha[{g}]", f"asset {g} has no observations")
    p = V.shape[1]
    if p == 0:
        return
    means = np.stack([np.bincount(groups, V[:, j], n_groups) for j in range(p)], axis=1)
    Vc = V - (means / counts[:, None])[groups]
    norms = np.sqrt(np.sum(Vc * Vc, axis=0))
    colscale = np.sqrt(np.sum(V * V, axis=0)) + 1e-300
    basis = []
    for j in range(p):
        col = Vc[:, j]
        if norms[j] <= 1e-10 * colscale[j]:
            raise RankDeficient(names[j] if names else j)
        resid = col.copy()
        for b in basis:
            resid -= (b @ resid) * b
        nr = np.linalg.norm(resid)
        if nr <= 1e-8 * norms[j]:
            raise RankDeficient(names[j] if names else j)
        basis.append(resid / nr)


def _augment(y, V, groups, n_groups, tau, lam):
    """Append one penalty pseudo-row per group when ``lam > 0``.

    ``lam*|alpha_i|`` equals ``2*lam * rho_0.5(0 - alpha_i)``, so the penalty
    is a weighted observation at the median level.
    """
    N, p = V.shape
    u = np.ones(N)
    taus = np.full(N, tau)
    if lam > 0:
        y = np.concatenate([y, np.zeros(n_groups)])
        V = np.vstack([V, np.zeros((n_groups, p))])
        groups = np.concatenate([groups, np.arange(n_groups, dtype=np.int64)])
        u = np.concatenate([u, np.full(n_groups, 2.0 * lam)])
        taus = np.concatenate([taus, np.full(n_groups, 0.5)])
    return (
        np.ascontiguousarray(y),
        np.ascontiguousarray(V),
        np.ascontiguousarray(groups, dtype=np.int64),
        u,
        taus,
    )


def _weighted_obj(coef, y, V, groups, n_groups, u, taus):
    e = y - coef[:n_groups][groups] - V @ coef[n_groups:]
    return float(np.sum(u * e * (taus - (e < 0))))


def _crossover(coef, y, V, groups, n_groups, u, taus, active=None):
    """Move an interior solution to an optimal vertex.

    The rows with smallest absolute residual seed a basis which is then
    pivoted to optimality.  Returns ``(coef, basis)``; ``basis`` is None if
    the vertex search failed and the interior solution is kept.
    """
    K = n_groups + V.shape[1]
    if active is None:
        active = np.ones(len(y), dtype=np.bool_)
    cand = np.flatnonzero(active)
    if len(cand) <= K:
        return coef, None
    e = np.abs(y[cand] - coef[:n_groups][groups[cand]] - V[cand] @ coef[n_groups:])
    order = cand[np.argsort(e, kind="stable")]
    basis = _pick_basis(order, groups, V, n_groups)
    if basis is None:
        return coef, None
    vertex, basis, _, status = _simplex.descend(
        groups, V, y, u, taus, active, basis, n_groups, 50 + 2 * K, _DERIV_TOL
    )
    if status != 0:
        return coef, None
    sel = active
    before = _weighted_obj(coef, y[sel], V[sel], groups[sel], n_groups, u[sel], taus[sel])
    after = _weighted_obj(vertex, y[sel], V[sel], groups[sel], n_groups, u[sel], taus[sel])
    if after <= before + 1e-12 * max(abs(before), 1e-300):
        return vertex, basis
    return coef, None


_DERIV_TOL = 1e-10


def _pick_basis(order, groups, V, n_groups):
    """First ``K`` linearly independent rows of ``[E | V]`` in the given order."""
    K = n_groups + V.shape[1]
    rows = order[:K]
    X = np.zeros((K, K))
    X[np.arange(K), groups[rows]] = 1.0
    X[:, n_groups:] = V[rows]
    if np.linalg.cond(X) < 1e10:
        return np.ascontiguousarray(rows, dtype=np.int64)
    chosen = []
    Q = np.zeros((0, K))
    for r in order[: 20 * K]:
        x = np.zeros(K)
        x[groups[r]] = 1.0
        x[n_groups:] = V[r]
        resid = x - Q.T @ (Q @ x)
        nr = np.linalg.norm(resid)
        if nr > 1e-6 * np.linalg.norm(x):
            Q = np.vstack([Q, resid / nr])
            chosen.append(r)
            if len(chosen) == K:
                return np.array(chosen, dtype=np.int64)
    return None


def _solve_block(y, V, groups, n_groups, tau, lam, tol, maxit):
    """Fit one panel block; returns ``(alphas, betas, gap, iterations, basis)``."""
    y, V, groups, u, taus = _augment(y, V, groups, n_groups, tau, lam)
    coef, gap, it, ok = _fnb.fnb(groups, V, y, u, taus, n_groups, tol, maxit, 0.99995)
    if not ok:
        raise SolverFailure(gap, it)
    coef, basis = _crossover(coef, y, V, groups, n_groups, u, taus)
    return coef[:n_groups], coef[n_groups:], gap, it, basis


def fit(problem: QuantileProblem, tol: float = 1e-8, maxit: int = 200) -> QuantileFit:
    """Solve the penalised quantile regression to relative duality gap ``tol``."""
    n, p = problem.n_assets, problem.n_slopes
    if problem.mode == "panel":
        k = n + p
        if len(problem.y) < k + 1:
            raise InsufficientObservations(f"{len(problem.y)} rows for {k} parameters")
        check_rank(problem.V, problem.asset_index, n, problem.param_names)
        alphas, betas, gap, it, _ = _solve_block(
            problem.y, problem.V, problem.asset_index, n, problem.tau, problem.lam, tol, maxit
        )
    else:
        alphas = np.empty(n)
        betas = np.empty((n, p))
        gap, it = 0.0, 0
        for i in range(n):
            rows = np.flatnonzero(problem.asset_index == i)
            if len(rows) < p + 2:
                raise InsufficientObservations(
                    f"asset {i}: {len(rows)} rows for {p + 1} parameters"
                )
            Vi = problem.V[rows]
            gi = np.zeros(len(rows), dtype=np.int64)
            check_rank(Vi, gi, 1, problem.param_names)
            a, b, g, k_it, _ = _solve_block(problem.y[rows], Vi, gi, 1, problem.tau, problem.lam, tol, maxit)
            alphas[i] = a[0]
            betas[i] = b
            gap += g
            it = max(it, k_it)
    return QuantileFit(
        alphas,
        betas,
        objective(problem, alphas, betas),
        problem.tau,
        problem.lam,
        problem.mode,
        float(gap),
        int(it),
    )


class WindowSolver:
    """Repeated fits of the same model on overlapping row subsets.

    Each call restarts the vertex descent from the optimal basis of the
    previous call at the same ``tau``; a cold interior point solve is used
    for the first call or whenever the warm start fails.  Results are exact
    optima either way.
    """

    def __init__(self, problem: QuantileProblem, tol: float = 1e-8, maxit: int = 200):
        self.problem = problem
        self.tol = tol
        self.maxit = maxit
        n = problem.n_assets
        self._blocks = []
        if problem.mode == "panel":
            self._blocks.append((np.arange(len(problem.y)), problem.asset_index, n))
        else:
            for i in range(n):
                rows = np.flatnonzero(problem.asset_index == i)
                self._blocks.append((rows, np.zeros(len(rows), dtype=np.int64), 1))
        self._arrays = {}
        self._bases = {}
        self.cold_starts = 0
        self.pivots = 0

    def _block_arrays(self, b, tau):
        key = (b, tau)
        if key not in self._arrays:
            rows, groups, n_groups = self._blocks[b]
            pr = self.problem
            self._arrays[key] = _augment(
                pr.y[rows], pr.V[rows], groups, n_groups, tau, pr.lam
            )
        return self._arrays[key]

    def fit(self, rows, tau: float) -> QuantileFit:
        pr = self.problem
        selected = np.zeros(len(pr.y), dtype=np.bool_)
        selected[np.asarray(rows)] = True
        n, p = pr.n_assets, pr.n_slopes
        alphas = np.empty(n)
        betas = np.empty(p) if pr.mode == "panel" else np.empty((n, p))
        pivots = 0
        for b, (brows, groups, n_groups) in enumerate(self._blocks):
            y, V, g, u, taus = self._block_arrays(b, tau)
            active = np.ones(len(y), dtype=np.bool_)
            active[: len(brows)] = selected[brows]
            if pr.lam <= 0:
                active[len(brows):] = False
            coef = None
            basis = self._bases.get((b, tau))
            if basis is not None:
                c, nb, piv, status = _simplex.descend(
                    g, V, y, u, taus, active, basis, n_groups, 50 + 4 * len(basis), _DERIV_TOL
                )
                pivots += piv
                if status == 0 and np.all(active[nb]):
                    coef, basis = c, nb
            if coef is None:
                self.cold_starts += 1
                sub = np.flatnonzero(active)
                ys, Vs, gs = y[sub], V[sub], g[sub]
                kk = n_groups + p
                if np.count_nonzero(active[: len(brows)]) < kk + 1:
                    raise InsufficientObservations(f"{len(sub)} rows for {kk} parameters")
                check_rank(Vs[: np.count_nonzero(active[: len(brows)])],
                           gs[: np.count_nonzero(active[: len(brows)])], n_groups, pr.param_names)
                c, gap, it, ok = _fnb.fnb(gs, Vs, ys, u[sub], taus[sub], n_groups,
                                          self.tol, self.maxit, 0.99995)
                if not ok:
                    raise SolverFailure(gap, it)
                coef, basis = _crossover(c, y, V, g, n_groups, u, taus, active)
            if basis is not None:
                self._bases[(b, tau)] = basis
            else:
                self._bases.pop((b, tau), None)
            if pr.mode == "panel":
                alphas[:] = coef[:n_groups]
                betas[:] = coef[n_groups:]
            else:
                alphas[b] = coef[0]
                betas[b] = coef[1:]
        self.pivots += pivots
        sub = _replace(pr, tau=tau).subset(np.flatnonzero(selected))
        return QuantileFit(alphas, betas, objective(sub, alphas, betas), tau, pr.lam,
                           pr.mode, 0.0, pivots)


def _design_rows(problem: QuantileProblem):
    """Dense design, weights and levels including penalty pseudo-rows."""
    n, p = problem.n_assets, problem.n_slopes
    N = len(problem.y)
    if problem.mode == "panel":
        X = np.zeros((N, n + p))
        X[np.arange(N), problem.asset_index] = 1.0
        X[:, n:] = problem.V
    else:
        X = np.zeros((N, n * (1 + p)))
        X[np.arange(N), problem.asset_index] = 1.0
        for j in range(p):
            X[np.arange(N), n + problem.asset_index * p + j] = problem.V[:, j]
    y = problem.y
    u = np.ones(N)
    taus = np.full(N, problem.tau)
    if problem.lam > 0:
        P = np.zeros((n, X.shape[1]))
        P[np.arange(n), np.arange(n)] = 1.0
        X = np.vstack([X, P])
        y = np.concatenate([y, np.zeros(n)])
        u = np.concatenate([u, np.full(n, 2.0 * problem.lam)])
        taus = np.concatenate([taus, np.full(n, 0.5)])
    return X, y, u, taus


def _split(problem, coef):
    n, p = problem.n_assets, problem.n_slopes
    if problem.mode == "panel":
        return coef[:n], coef[n:]
    return coef[:n], coef[n:].reshape(n, p)


def directional_derivatives(problem: QuantileProblem, alphas, betas, zero_tol=None):
    """One-sided derivatives of the criterion along every ``+-e_j`` coordinate.

    Returns an array of shape ``(k, 2)`` (plus, minus).  At a minimiser all
    entries are ``>= 0``.
    """
    X, y, u, taus = _design_rows(problem)
    coef = np.concatenate([np.asarray(alphas, float), np.ravel(betas)])
    e = y - X @ coef
    if zero_tol is None:
        zero_tol = 1e-9 * (np.max(np.abs(y)) + 1e-300)
    zero = np.abs(e) <= zero_tol
    psi = np.where(e < 0, taus - 1.0, taus) * u
    base = -(psi[~zero] @ X[~zero])
    Xz, uz, tz = X[zero], u[zero], taus[zero]
    plus = base + np.sum(uz[:, None] * quantile_loss(-Xz, tz[:, None]), axis=0)
    minus = -base + np.sum(uz[:, None] * quantile_loss(Xz, tz[:, None]), axis=0)
    return np.column_stack([plus, minus])


def optimality_residual(problem: QuantileProblem, alphas, betas, zero_tol=None) -> float:
    """Distance of zero from the subdifferential (infinity norm).

    Solves ``min ||Xz' d - g||`` over the box of admissible subgradient weights
    on zero-residual rows; zero means the parameters are optimal.
    """
    X, y, u, taus = _design_rows(problem)
    coef = np.concatenate([np.asarray(alphas, float), np.ravel(betas)])
    e = y - X @ coef
    if zero_tol is None:
        zero_tol = 1e-9 * (np.max(np.abs(y)) + 1e-300)
    zero = np.abs(e) <= zero_tol
    psi = np.where(e < 0, taus - 1.0, taus) * u
    target = -(psi[~zero] @ X[~zero])
    if not np.any(zero):
        return float(np.max(np.abs(target)))
    lo = u[zero] * (taus[zero] - 1.0)
    hi = u[zero] * taus[zero]
    res = lsq_linear(X[zero].T, target, bounds=(lo, hi), method="bvls", tol=1e-14)
    return float(np.max(np.abs(X[zero].T @ res.x - target)))


def fit_many(problem: QuantileProblem, taus, **kw) -> dict:
    """Fit each quantile level separately."""
    return {tau: fit(problem.with_tau(tau), **kw) for tau in taus}


def _block_days(n_days, block, rng):
    n_blocks = math.ceil(n_days / block)
    starts = rng.integers(0, n_days - block + 1, size=n_blocks)
    return (starts[:, None] + np.arange(block)[None, :]).ravel()[:n_days]


def bootstrap_se(
    problem: QuantileProblem,
    B: int = 200,
    seed=None,
    block_length: int | None = None,
    tol: float = 1e-8,
) -> BootstrapSE:
    """Moving-block bootstrap over days; each drawn day keeps its full cross-section."""
    if B < 2:
        raise PanelVarError("need B >= 2 bootstrap replications")
    base = fit(problem, tol=tol)
    est = base.coefficients()
    n, p = problem.n_assets, problem.n_slopes
    if problem.mode == "panel":
        names = tuple(f"alpha[{a}]" for a in _asset_labels(problem)) + tuple(problem.param_names)
    else:
        names = tuple(f"alpha[{a}]" for a in _asset_labels(problem)) + tuple(
            f"{nm}[{a}]" for a in _asset_labels(problem) for nm in problem.param_names
        )
    day = problem.day_index
    if day is None:
        day = np.arange(len(problem.y))
    days, inverse = np.unique(day, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(days) + 1))
    rows_by_day = [order[bounds[d] : bounds[d + 1]] for d in range(len(days))]
    T = len(days)
    block = block_length or math.ceil(T ** (1.0 / 3.0))
    block = min(block, T)
    streams = np.random.SeedSequence(seed).spawn(B)
    draws = []
    skipped = 0
    for ss in streams:
        rng = np.random.default_rng(ss)
        picked = _block_days(T, block, rng)
        rows = np.concatenate([rows_by_day[d] for d in picked])
        try:
            f = fit(problem.subset(rows), tol=tol)
        except (RankDeficient, SolverFailure, InsufficientObservations):
            skipped += 1
            continue
        draws.append(f.coefficients())
    if skipped > 0.2 * B:
        raise BootstrapDegenerate(f"{skipped} of {B} bootstrap replications were singular")
    draws = np.array(draws)
    se = draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros_like(est)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, est / se, np.nan)
    return BootstrapSE(names, est, se, tstat, B, skipped)


def _asset_labels(problem):
    if problem.asset_names:
        return problem.asset_names
    return tuple(str(i) for i in range(problem.n_assets))


def write_fit_csv(rows, path) -> None:
    """``rows`` are ``(tau, lam, name, estimate, tstat)`` tuples."""
    with open(path, "w", newline="") as fh:
        fh.write("tau,lambda,param_name,estimate,tstat\n")
        for tau, lam, name, est, t in rows:
            ts = "NA" if t is None or not np.isfinite(t) else f"{t:.6g}"
            fh.write(f"{tau:g},{lam:g},{name},{est:.10g},{ts}\n")

"""Exact vertex descent for fixed-effects quantile regression.

A vertex is fixed by ``K = n_groups + p`` basis rows with zero residual.  Each
pivot moves along the edge that frees one basis row, stops at the breakpoint
where the piecewise-linear objective stops decreasing and swaps the row found
there into the basis.  Starting from the previous window's vertex this
typically needs a handful of pivots, against twenty-odd interior point
iterations for a cold solve.

Basis rows that are no longer active (dropped out of the window) are vacant
slots: they still span directions but carry no loss, and are refilled first.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _basis_matrix(group, V, basis, n_groups):
    K = len(basis)
    p = V.shape[1]
    X = np.zeros((K, K))
    for j in range(K):
        h = basis[j]
        X[j, group[h]] = 1.0
        for l in range(p):
            X[j, n_groups + l] = V[h, l]
    return X


@numba.njit(cache=True)
def _residuals(group, V, y, coef, n_groups, e):
    N, p = V.shape
    for k in range(N):
        acc = y[k] - coef[group[k]]
        for l in range(p):
            acc -= V[k, l] * coef[n_groups + l]
        e[k] = acc


@numba.njit(cache=True)
def descend(group, V, y, u, tau, active, basis, n_groups, maxpiv, tol):
    """Pivot to an optimal vertex; returns ``(coef, basis, pivots, status)``.

    status 0: optimal, 1: pivot cap reached, 2: singular basis.
    ``tol`` is an absolute tolerance on directional derivatives.
    """
    N, p = V.shape
    K = n_groups + p
    basis = basis.copy()
    e = np.empty(N)
    inb = np.zeros(N, dtype=np.bool_)
    a = np.empty(N)
    ts = np.empty(N)
    idx = np.empty(N, dtype=np.int64)
    coef = np.zeros(K)
    yscale = 0.0
    for k in range(N):
        if active[k] and abs(y[k]) > yscale:
            yscale = abs(y[k])
    ztol = 1e-11 * (yscale + 1e-300)
    pivots = 0
    while True:
        X = _basis_matrix(group, V, basis, n_groups)
        yb = np.empty(K)
        for j in range(K):
            yb[j] = y[basis[j]]
        if abs(np.linalg.det(X)) == 0.0:
            return coef, basis, pivots, 2
        B = np.linalg.inv(X)
        if np.linalg.norm(B) * np.linalg.norm(X) > 1e13:
            return coef, basis, pivots, 2
        coef = B @ yb
        _residuals(group, V, y, coef, n_groups, e)
        inb[:] = False
        for j in range(K):
            inb[basis[j]] = True
        # g = sum over active non-basic non-zero rows of u psi x
        g = np.zeros(K)
        nz = 0
        for k in range(N):
            if not active[k] or inb[k]:
                continue
            if abs(e[k]) <= ztol:
                idx[nz] = k
                nz += 1
                continue
            w = u[k] * (tau[k] if e[k] > 0 else tau[k] - 1.0)
            g[group[k]] += w
            for l in range(p):
                g[n_groups + l] += w * V[k, l]
        best = 0.0
        best_j = -1
        best_dir = 0.0
        vacant_first = False
        for j in range(K):
            c = 0.0
            for l in range(K):
                c += g[l] * B[l, j]
            h = basis[j]
            # along +B e_j the residual of row h becomes negative
            zp = 0.0
            zm = 0.0
            for m in range(nz):
                k = idx[m]
                ak = B[group[k], j]
                for l in range(p):
                    ak += V[k, l] * B[n_groups + l, j]
                if ak > 0:
                    zp += u[k] * (1.0 - tau[k]) * ak
                    zm += u[k] * tau[k] * ak
                else:
                    zp += -u[k] * tau[k] * ak
                    zm += -u[k] * (1.0 - tau[k]) * ak
            if active[h]:
                dplus = -c + u[h] * (1.0 - tau[h]) + zp
                dminus = c + u[h] * tau[h] + zm
                if vacant_first:
                    continue
                if dplus < best:
                    best, best_j, best_dir = dplus, j, 1.0
                if dminus < best:
                    best, best_j, best_dir = dminus, j, -1.0
            else:
                dplus = -c + zp
                dminus = c + zm
                d = dplus if dplus <= dminus else dminus
                if not vacant_first or d < best:
                    best = d
                    best_j = j
                    best_dir = 1.0 if dplus <= dminus else -1.0
                    vacant_first = True
        if best_j < 0 or (best >= -tol and not vacant_first):
            return coef, basis, pivots, 0
        if pivots >= maxpiv:
            return coef, basis, pivots, 1
        pivots += 1
        j = best_j
        # direction delta = best_dir * B[:, j]; a_k = x_k' delta
        slope = best
        nb = 0
        enter = -1
        for k in range(N):
            if not active[k] or inb[k]:
                a[k] = 0.0
                continue
            ak = B[group[k], j]
            for l in range(p):
                ak += V[k, l] * B[n_groups + l, j]
            ak *= best_dir
            a[k] = ak
            if abs(e[k]) <= ztol or ak == 0.0:
                continue
            t = e[k] / ak
            if t > 0.0:
                ts[nb] = t
                idx[nb] = k
                nb += 1
        if slope >= 0.0:
            # vacant slot with no descent: take a zero-residual row if one moves
            big = 0.0
            for k in range(N):
                if active[k] and not inb[k] and abs(e[k]) <= ztol and abs(a[k]) > big:
                    big = abs(a[k])
                    enter = k
            if enter < 0 and nb > 0:
                first = 0
                for m in range(1, nb):
                    if ts[m] < ts[first]:
                        first = m
                enter = idx[first]
        else:
            order = np.argsort(ts[:nb])
            for m in range(nb):
                k = idx[order[m]]
                slope += u[k] * abs(a[k])
                if slope >= 0.0:
                    enter = k
                    break
        if enter < 0:
            # unbounded ray or nothing to enter: treat as singular
            return coef, basis, pivots, 2
        basis[j] = enter

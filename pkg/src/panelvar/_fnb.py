"""Frisch-Newton interior point kernel for fixed-effects quantile regression.

Solves the bounded LP dual of weighted quantile regression

    min  -y'a   s.t.  X'a = X'(u * (1 - tau)),  0 <= a <= u

for ``X = [E | V]`` where ``E`` holds one indicator column per group (fixed
effect) and ``V`` the slope regressors.  The normal matrix ``X'QX`` is solved
blockwise: the indicator block is diagonal, so only a ``p x p`` Schur
complement is factorised.  Steps use a Mehrotra predictor-corrector.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _factor(group, V, q, n_groups, D, C, S):
    """Fill the diagonal block, cross block and Schur complement of X'QX."""
    N, p = V.shape
    D[:] = 0.0
    C[:, :] = 0.0
    S[:, :] = 0.0
    for k in range(N):
        g = group[k]
        qk = q[k]
        D[g] += qk
        for j in range(p):
            vj = qk * V[k, j]
            C[g, j] += vj
            for l in range(j + 1):
                S[j, l] += vj * V[k, l]
    for g in range(n_groups):
        inv = 1.0 / D[g]
        for j in range(p):
            cj = C[g, j] * inv
            for l in range(j + 1):
                S[j, l] -= cj * C[g, l]
    for j in range(p):
        for l in range(j):
            S[l, j] = S[j, l]


@numba.njit(cache=True)
def _solve(D, C, S, ra, rb, da, db):
    n_groups, p = C.shape
    if p > 0:
        rhs = rb.copy()
        for g in range(n_groups):
            t = ra[g] / D[g]
            for j in range(p):
                rhs[j] -= C[g, j] * t
        if p == 1:
            db[0] = rhs[0] / S[0, 0]
        else:
            db[:] = np.linalg.solve(S, rhs)
    for g in range(n_groups):
        acc = ra[g]
        for j in range(p):
            acc -= C[g, j] * db[j]
        da[g] = acc / D[g]


@numba.njit(cache=True)
def _xt(group, V, v, ra, rb):
    """ra, rb <- X' v."""
    N, p = V.shape
    ra[:] = 0.0
    rb[:] = 0.0
    for k in range(N):
        vk = v[k]
        ra[group[k]] += vk
        for j in range(p):
            rb[j] += V[k, j] * vk


@numba.njit(cache=True)
def _xk(group, V, da, db, k):
    acc = da[group[k]]
    for j in range(V.shape[1]):
        acc += V[k, j] * db[j]
    return acc


@numba.njit(cache=True)
def fnb(group, V, y, u, tau, n_groups, tol, maxit, beta):
    """Return ``(coef, gap, iterations, converged)``.

    ``u`` is the per-row weight (upper bound of the dual box) and ``tau`` the
    per-row quantile level, so penalty pseudo-rows can carry their own level.
    ``coef`` stacks the ``n_groups`` fixed effects followed by the slopes.
    """
    N, p = V.shape
    D = np.empty(n_groups)
    C = np.empty((n_groups, p))
    S = np.empty((p, p))
    ra = np.empty(n_groups)
    rb = np.empty(p)
    ba = np.empty(n_groups)
    bb = np.empty(p)
    pa = np.empty(n_groups)
    pb = np.empty(p)
    dpa = np.empty(n_groups)
    dpb = np.empty(p)

    x = np.empty(N)
    s = np.empty(N)
    z = np.empty(N)
    w = np.empty(N)
    q = np.empty(N)
    r = np.empty(N)
    dx = np.empty(N)
    dz = np.empty(N)
    dw = np.empty(N)
    tmp = np.empty(N)

    scale = 0.0
    for k in range(N):
        x[k] = u[k] * (1.0 - tau[k])
        s[k] = u[k] - x[k]
        q[k] = 1.0
        tmp[k] = -y[k]
        scale += u[k] * abs(y[k])
    _xt(group, V, x, ba, bb)
    # least-squares start for the dual: X pi = -y
    _factor(group, V, q, n_groups, D, C, S)
    _xt(group, V, tmp, ra, rb)
    _solve(D, C, S, ra, rb, pa, pb)
    rs = 0.0
    for k in range(N):
        r[k] = -y[k] - _xk(group, V, pa, pb, k)
        rs += abs(r[k])
    # floor keeps z, w off zero while preserving z - w = r (dual feasibility)
    eps = 0.1 * rs / N + 1e-300
    for k in range(N):
        z[k] = (r[k] if r[k] > 0.0 else 0.0) + eps
        w[k] = z[k] - r[k]

    def _gap():
        acc = 0.0
        for k in range(N):
            acc += -y[k] * x[k] + u[k] * w[k]
        for g in range(n_groups):
            acc -= ba[g] * pa[g]
        for j in range(p):
            acc -= bb[j] * pb[j]
        return acc

    gap = _gap()
    it = 0
    converged = False
    while True:
        primal = 0.0
        for k in range(N):
            primal += y[k] * x[k]
        target = tol * max(abs(primal), 1e-6 * scale, 1e-300)
        if gap <= target:
            converged = True
            break
        if it >= maxit:
            break
        it += 1
        for k in range(N):
            q[k] = 1.0 / (z[k] / x[k] + w[k] / s[k])
            r[k] = z[k] - w[k]
            tmp[k] = q[k] * r[k]
        _factor(group, V, q, n_groups, D, C, S)
        _xt(group, V, tmp, ra, rb)
        _solve(D, C, S, ra, rb, dpa, dpb)
        fx = 1e20
        fs = 1e20
        fw = 1e20
        fz = 1e20
        for k in range(N):
            d = q[k] * (_xk(group, V, dpa, dpb, k) - r[k])
            dx[k] = d
            dz[k] = -z[k] * (d / x[k] + 1.0)
            dw[k] = -w[k] * (-d / s[k] + 1.0)
            if d < 0.0:
                fx = min(fx, -x[k] / d)
            elif d > 0.0:
                fs = min(fs, s[k] / d)
            if dz[k] < 0.0:
                fz = min(fz, -z[k] / dz[k])
            if dw[k] < 0.0:
                fw = min(fw, -w[k] / dw[k])
        fp = min(beta * min(fx, fs), 1.0)
        fd = min(beta * min(fw, fz), 1.0)
        if min(fp, fd) < 1.0:
            mu = 0.0
            g = 0.0
            for k in range(N):
                mu += z[k] * x[k] + w[k] * s[k]
                g += (z[k] + fd * dz[k]) * (x[k] + fp * dx[k]) + (w[k] + fd * dw[k]) * (
                    s[k] - fp * dx[k]
                )
            mu = mu * (g / mu) ** 3 / (2.0 * N)
            for k in range(N):
                dxdz = dx[k] * dz[k]
                dsdw = -dx[k] * dw[k]
                xi = mu * (1.0 / x[k] - 1.0 / s[k])
                tmp[k] = q[k] * (dxdz - dsdw - xi)
            _xt(group, V, tmp, dpa, dpb)
            for g_ in range(n_groups):
                ra[g_] += dpa[g_]
            for j in range(p):
                rb[j] += dpb[j]
            _solve(D, C, S, ra, rb, dpa, dpb)
            fx = 1e20
            fs = 1e20
            fw = 1e20
            fz = 1e20
            for k in range(N):
                xinv = 1.0 / x[k]
                sinv = 1.0 / s[k]
                dxdz = dx[k] * dz[k]
                dsdw = -dx[k] * dw[k]
                xi = mu * (xinv - sinv)
                d = q[k] * (_xk(group, V, dpa, dpb, k) + xi - r[k] - dxdz + dsdw)
                dx[k] = d
                dz[k] = mu * xinv - z[k] - xinv * z[k] * d - dxdz
                dw[k] = mu * sinv - w[k] + sinv * w[k] * d - dsdw
                if d < 0.0:
                    fx = min(fx, -x[k] / d)
                elif d > 0.0:
                    fs = min(fs, s[k] / d)
                if dz[k] < 0.0:
                    fz = min(fz, -z[k] / dz[k])
                if dw[k] < 0.0:
                    fw = min(fw, -w[k] / dw[k])
            fp = min(beta * min(fx, fs), 1.0)
            fd = min(beta * min(fw, fz), 1.0)
        for k in range(N):
            x[k] += fp * dx[k]
            s[k] -= fp * dx[k]
            w[k] += fd * dw[k]
            z[k] += fd * dz[k]
        for g_ in range(n_groups):
            pa[g_] += fd * dpa[g_]
        for j in range(p):
            pb[j] += fd * dpb[j]
        gap = _gap()
    coef = np.empty(n_groups + p)
    for g_ in range(n_groups):
        coef[g_] = -pa[g_]
    for j in range(p):
        coef[n_groups + j] = -pb[j]
    return coef, gap, it, converged

"""Numba-compiled versions of the hot kernels.

Importing this module requires numba; the package falls back to the numpy
backend when it is missing or disabled (see ``coxsel._kernels``).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def cd_quad(g, coef, hess, diag, lam, pen, active_only, max_sweeps, tol):
    q = coef.shape[0]
    sweeps = 0
    delta_max = 0.0
    while sweeps < max_sweeps:
        sweeps += 1
        delta_max = 0.0
        for j in range(q):
            cj = coef[j]
            if active_only and cj == 0.0:
                continue
            nrm = diag[j]
            if nrm <= 0.0:
                continue
            u = g[j] + nrm * cj
            t = lam * pen[j]
            if u > t:
                new = (u - t) / nrm
            elif u < -t:
                new = (u + t) / nrm
            else:
                new = 0.0
            d = new - cj
            if d != 0.0:
                coef[j] = new
                for m in range(q):
                    g[m] -= hess[j, m] * d
                ad = abs(d)
                if ad > delta_max:
                    delta_max = ad
        if delta_max <= tol:
            break
    return sweeps, delta_max


@njit(cache=True)
def cox_irls(eta_s, evt_s, tie_start, tie_count, nevt_le):
    n = eta_s.shape[0]
    m = tie_start.shape[0]
    emax = -1.0e308
    for i in range(n):
        if eta_s[i] > emax:
            emax = eta_s[i]
    w = np.empty(n)
    for i in range(n):
        w[i] = math.exp(eta_s[i] - emax)
    # suffix risk sums evaluated at each distinct event time
    s0 = np.empty(m)
    acc = 0.0
    k = m - 1
    for i in range(n - 1, -1, -1):
        acc += w[i]
        if k >= 0 and tie_start[k] == i:
            s0[k] = acc
            k -= 1
    negll = 0.0
    cum1 = np.empty(m)
    cum2 = np.empty(m)
    a1 = 0.0
    a2 = 0.0
    for kk in range(m):
        dk = float(tie_count[kk])
        sk = s0[kk]
        a1 += dk / sk
        a2 += dk / (sk * sk)
        cum1[kk] = a1
        cum2[kk] = a2
        negll += dk * (math.log(sk) + emax)
    g = np.empty(n)
    h = np.empty(n)
    z = np.empty(n)
    v = np.empty(n)
    ninv = 1.0 / n
    for i in range(n):
        ke = nevt_le[i]
        if ke > 0:
            l1 = cum1[ke - 1] * w[i]
            l2 = cum2[ke - 1] * w[i] * w[i]
        else:
            l1 = 0.0
            l2 = 0.0
        ev = evt_s[i]
        negll -= eta_s[i] * ev
        gi = (l1 - ev) * ninv
        hi = (l1 - l2) * ninv
        g[i] = gi
        h[i] = hi
        if hi > 0.0:
            z[i] = eta_s[i] - gi / hi
            v[i] = hi
        else:
            z[i] = eta_s[i]
            v[i] = 0.0
    return negll * ninv, g, h, z, v


@njit(cache=True)
def _cox_hessian(x, xt, eta, tie_start, tie_count, hess, hdiag, xw, sx, acc):
    n, m = x.shape
    me = tie_start.shape[0]
    emax = -1.0e308
    for i in range(n):
        if eta[i] > emax:
            emax = eta[i]
    w = np.empty(n)
    for i in range(n):
        w[i] = math.exp(eta[i] - emax)
    s0 = np.empty(me)
    for j in range(m):
        acc[j] = 0.0
    wacc = 0.0
    k = me - 1
    for i in range(n - 1, -1, -1):
        wi = w[i]
        wacc += wi
        for j in range(m):
            acc[j] += wi * x[i, j]
        if k >= 0 and tie_start[k] == i:
            s0[k] = wacc
            for j in range(m):
                sx[k, j] = acc[j]
            k -= 1
    cum1 = np.empty(me)
    a1 = 0.0
    for kk in range(me):
        a1 += float(tie_count[kk]) / s0[kk]
        cum1[kk] = a1
    k = 0
    for i in range(n):
        while k < me and tie_start[k] <= i:
            k += 1
        c1 = cum1[k - 1] if k > 0 else 0.0
        f = w[i] * c1
        for j in range(m):
            xw[i, j] = x[i, j] * f
    h1 = np.dot(xt, xw)
    for kk in range(me):
        f = math.sqrt(float(tie_count[kk])) / s0[kk]
        for j in range(m):
            sx[kk, j] *= f
    h2 = np.dot(np.ascontiguousarray(sx.T), sx)
    ninv = 1.0 / n
    for a in range(m):
        for b in range(m):
            hess[a, b] = (h1[a, b] - h2[a, b]) * ninv
        hdiag[a] = hess[a, a]


@njit(cache=True)
def _kkt_resid(grad, coef, lam, pen, live):
    viol = 0.0
    for j in range(coef.shape[0]):
        if pen[j] > 0.0:
            t = lam * pen[j]
            if coef[j] > 0.0:
                r = abs(grad[j] + t)
            elif coef[j] < 0.0:
                r = abs(grad[j] - t)
            else:
                r = abs(grad[j]) - t
        elif live[j]:
            r = abs(grad[j])
        else:
            r = 0.0
        if r > viol:
            viol = r
    return viol


@njit(cache=True)
def cox_path(x, xt, evt_s, tie_start, tie_count, nevt_le, pen, live,
             grid, coef0, kkt_target, cd_tol, sweep_budget, max_outer):
    """Warm-started proximal Newton over a descending lambda grid.

    Returns (coefs, kkts, sweeps, status, bad) where status is 0 on success,
    1 sweep budget exhausted, 2 outer iterations exhausted, 3 diverged; bad is
    the offending grid index."""
    n, m = x.shape
    me = tie_start.shape[0]
    nl = grid.shape[0]
    coefs = np.zeros((nl, m))
    kkts = np.zeros(nl)
    sweeps = np.zeros(nl, dtype=np.int64)
    coef = coef0.copy()
    hess = np.zeros((m, m))
    hdiag = np.zeros(m)
    h_eta = np.zeros(n)
    xw = np.empty((n, m))
    sx = np.empty((me, m))
    acc = np.empty(m)
    h_has = False
    eta = np.dot(x, coef)
    for li in range(nl):
        lam = grid[li]
        used = 0
        tol = cd_tol
        kkt = np.inf
        done = False
        for outer in range(max_outer):
            negll, g, h, z, v = cox_irls(eta, evt_s, tie_start, tie_count, nevt_le)
            grad = np.dot(xt, g)
            kkt = _kkt_resid(grad, coef, lam, pen, live)
            if kkt <= kkt_target:
                done = True
                break
            if used >= sweep_budget:
                return coefs, kkts, sweeps, 1, li
            refresh = (not h_has) or outer > 0
            if not refresh:
                drift = 0.0
                for i in range(n):
                    d = abs(eta[i] - h_eta[i])
                    if d > drift:
                        drift = d
                refresh = drift > 0.05
            if refresh:
                _cox_hessian(x, xt, eta, tie_start, tie_count, hess, hdiag, xw, sx, acc)
                for i in range(n):
                    h_eta[i] = eta[i]
                h_has = True
            negg = -grad
            while used < sweep_budget:
                s, delta = cd_quad(negg, coef, hess, hdiag, lam, pen, False, 1, tol)
                used += s
                if delta <= tol:
                    break
                s, delta = cd_quad(
                    negg, coef, hess, hdiag, lam, pen, True,
                    min(sweep_budget - used, 1000), tol,
                )
                used += s
            eta = np.dot(x, coef)
            mx = 0.0
            for j in range(m):
                a = abs(coef[j])
                if a > mx:
                    mx = a
            if not np.isfinite(mx) or mx > 1e4:
                return coefs, kkts, sweeps, 3, li
            if outer >= 2 and outer % 2 == 0:
                tol = max(tol * 0.25, 1e-12)
        if not done:
            return coefs, kkts, sweeps, 2, li
        coefs[li] = coef
        kkts[li] = kkt
        sweeps[li] = used
    return coefs, kkts, sweeps, 0, -1


@njit(cache=True)
def cox_negll(eta_s, evt_s, tie_start, tie_count):
    n = eta_s.shape[0]
    m = tie_start.shape[0]
    emax = -1.0e308
    for i in range(n):
        if eta_s[i] > emax:
            emax = eta_s[i]
    s0 = np.empty(m)
    acc = 0.0
    k = m - 1
    for i in range(n - 1, -1, -1):
        acc += math.exp(eta_s[i] - emax)
        if k >= 0 and tie_start[k] == i:
            s0[k] = acc
            k -= 1
    negll = 0.0
    for kk in range(m):
        negll += float(tie_count[kk]) * (math.log(s0[kk]) + emax)
    for i in range(n):
        negll -= eta_s[i] * evt_s[i]
    return negll / n

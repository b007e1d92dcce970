"""Pure-numpy versions of the hot kernels.

Same contracts as the numba backend; used when numba is unavailable or the
COXSEL_NUMBA env flag disables it.
"""

import numpy as np


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
                g -= hess[j] * d
                ad = abs(d)
                if ad > delta_max:
                    delta_max = ad
        if delta_max <= tol:
            break
    return sweeps, delta_max


def _suffix_at_events(values, tie_start):
    # suffix sums over sorted rows, sampled at each distinct event time
    suff = np.cumsum(values[::-1])[::-1]
    return suff[tie_start]


def cox_irls(eta_s, evt_s, tie_start, tie_count, nevt_le):
    n = eta_s.shape[0]
    emax = eta_s.max()
    w = np.exp(eta_s - emax)
    s0 = _suffix_at_events(w, tie_start)
    d = tie_count.astype(np.float64)
    cum1 = np.cumsum(d / s0)
    cum2 = np.cumsum(d / (s0 * s0))
    negll = float(d @ (np.log(s0) + emax) - eta_s @ evt_s)
    c1 = np.concatenate((np.zeros(1), cum1))[nevt_le]
    c2 = np.concatenate((np.zeros(1), cum2))[nevt_le]
    l1 = c1 * w
    l2 = c2 * w * w
    g = (l1 - evt_s) / n
    h = (l1 - l2) / n
    pos = h > 0.0
    z = eta_s.copy()
    np.divide(g, h, out=z, where=pos)
    z = eta_s - np.where(pos, z, 0.0)
    v = np.where(pos, h, 0.0)
    return negll / n, g, h, z, v


def _cox_hessian(x, xt, eta, tie_start, tie_count, nevt_le):
    n = x.shape[0]
    emax = eta.max()
    w = np.exp(eta - emax)
    s0 = _suffix_at_events(w, tie_start)
    d = tie_count.astype(np.float64)
    cum1 = np.concatenate((np.zeros(1), np.cumsum(d / s0)))[nevt_le]
    h1 = xt @ (x * (w * cum1)[:, None])
    sx = np.cumsum((w[:, None] * x)[::-1], axis=0)[::-1][tie_start]
    p = sx * (np.sqrt(d) / s0)[:, None]
    hess = (h1 - p.T @ p) / n
    return hess, np.ascontiguousarray(np.diag(hess))


def _kkt_resid(grad, coef, lam, pen, live):
    t = lam * pen
    pos = pen > 0.0
    zero = coef == 0.0
    viol = 0.0
    m = pos & zero
    if m.any():
        viol = max(viol, float((np.abs(grad[m]) - t[m]).max()))
    m = pos & ~zero
    if m.any():
        viol = max(viol, float(np.abs(grad[m] + t[m] * np.sign(coef[m])).max()))
    m = ~pos & live
    if m.any():
        viol = max(viol, float(np.abs(grad[m]).max()))
    return max(viol, 0.0)


def cox_path(x, xt, evt_s, tie_start, tie_count, nevt_le, pen, live,
             grid, coef0, kkt_target, cd_tol, sweep_budget, max_outer):
    """Warm-started proximal Newton over a descending lambda grid.

    Returns (coefs, kkts, sweeps, status, bad) where status is 0 on success,
    1 sweep budget exhausted, 2 outer iterations exhausted, 3 diverged; bad is
    the offending grid index."""
    n, m = x.shape
    nl = grid.shape[0]
    coefs = np.zeros((nl, m))
    kkts = np.zeros(nl)
    sweeps = np.zeros(nl, dtype=np.int64)
    coef = coef0.copy()
    hess = None
    hdiag = None
    h_eta = None
    eta = x @ coef
    for li in range(nl):
        lam = float(grid[li])
        used = 0
        tol = cd_tol
        done = False
        kkt = np.inf
        for outer in range(max_outer):
            g = cox_irls(eta, evt_s, tie_start, tie_count, nevt_le)[1]
            grad = xt @ g
            kkt = _kkt_resid(grad, coef, lam, pen, live)
            if kkt <= kkt_target:
                done = True
                break
            if used >= sweep_budget:
                return coefs, kkts, sweeps, 1, li
            if (
                hess is None
                or outer > 0
                or float(np.max(np.abs(eta - h_eta))) > 0.05
            ):
                hess, hdiag = _cox_hessian(x, xt, eta, tie_start, tie_count, nevt_le)
                h_eta = eta.copy()
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
            eta = x @ coef
            mx = float(np.max(np.abs(coef))) if m else 0.0
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


def cox_negll(eta_s, evt_s, tie_start, tie_count):
    n = eta_s.shape[0]
    emax = eta_s.max()
    s0 = _suffix_at_events(np.exp(eta_s - emax), tie_start)
    d = tie_count.astype(np.float64)
    return float(d @ (np.log(s0) + emax) - eta_s @ evt_s) / n

"""Pure-numpy implementation of the EM kernels.

Mirrors ``_core.pyx`` routine for routine so either can back the package.
"""

import math

import numpy as np
from scipy.special import gammaln

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_TOL = 1e-8
_GOLDEN_MAXIT = 200
_LOG_2PI = math.log(2.0 * math.pi)


def _use_logsum(xu):
    return xu[-1] <= 2.0 * xu.shape[0] + 64.0


def _lgratio(xu, r, logsum):
    """lgamma(xu + r) - lgamma(r), via running log sums for small counts."""
    if logsum:
        k = np.arange(int(xu[-1]), dtype=float)
        return np.concatenate(([0.0], np.cumsum(np.log(r + k))))[xu.astype(np.int64)]
    return gammaln(xu + r) - math.lgamma(r)


def _nb_profile(xu, w, W, Sx, mu, r, logsum=False):
    acc = float(np.dot(w, _lgratio(xu, r, logsum)))
    acc += W * r * math.log(r / (r + mu))
    if Sx > 0.0:
        acc += Sx * math.log(mu / (r + mu))
    return acc


def _nb_newton(xu, w, W, mu, r, lo, hi):
    """Newton polish of r on the profile score, via exact harmonic sums."""
    xi = xu.astype(np.int64)
    k = np.arange(int(xi[-1]) if xi.size else 0, dtype=float)
    for _ in range(8):
        t1 = 1.0 / (r + k)
        h1 = np.concatenate(([0.0], np.cumsum(t1)))[xi]
        h2 = np.concatenate(([0.0], np.cumsum(t1 * t1)))[xi]
        S = W * math.log(r / (r + mu)) + float(np.dot(w, h1))
        dS = W * (1.0 / r - 1.0 / (r + mu)) - float(np.dot(w, h2))
        if not dS < 0.0:
            return None
        step = S / dS
        if abs(step) > 1e-3 * r or r - step <= lo or r - step >= hi:
            return None
        r -= step
        if abs(step) <= 1e-15 * r:
            break
    return r


def _fit(kind, xu, w, lo, hi, theta, has_prev):
    W = float(w.sum())
    Sx = float(np.dot(w, xu))
    mu = Sx / W
    flag = False
    if mu < lo[0]:
        mu, flag = lo[0], True
    elif mu > hi[0]:
        mu, flag = hi[0], True
    if kind == 0:
        theta[0] = mu
        return flag
    if kind == 2:
        v = float(np.dot(w, (xu - mu) ** 2)) / W
        if v < lo[1]:
            v, flag = lo[1], True
        elif v > hi[1]:
            v, flag = hi[1], True
        theta[0], theta[1] = mu, v
        return flag

    logsum = _use_logsum(xu)
    if logsum:
        xs, ws = xu, w
    else:
        nz = w != 0.0
        xs, ws = xu[nz], w[nz]
    r_prev = theta[1]
    a, b = math.log(lo[1]), math.log(hi[1])
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = _nb_profile(xs, ws, W, Sx, mu, math.exp(c), logsum)
    fd = _nb_profile(xs, ws, W, Sx, mu, math.exp(d), logsum)
    it = 0
    while (b - a) > _GOLDEN_TOL and it < _GOLDEN_MAXIT:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = _nb_profile(xs, ws, W, Sx, mu, math.exp(c), logsum)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = _nb_profile(xs, ws, W, Sx, mu, math.exp(d), logsum)
        it += 1
    t, fbest = (c, fc) if fc >= fd else (d, fd)
    theta[0] = mu
    theta[1] = math.exp(t)
    if xu[-1] < 1e6:
        polished = _nb_newton(xu, w, W, mu, theta[1], lo[1], hi[1])
        if polished is not None:
            theta[1] = polished
            fbest = _nb_profile(xs, ws, W, Sx, mu, polished, logsum)
    if has_prev and lo[1] <= r_prev <= hi[1]:
        if _nb_profile(xs, ws, W, Sx, mu, r_prev, logsum) > fbest:
            theta[1] = r_prev
    if theta[1] <= lo[1] * (1.0 + 1e-6) or theta[1] >= hi[1] * (1.0 - 1e-6):
        flag = True
    return flag


def fit_theta(kind, xu, w, lo, hi, prev=None):
    theta = np.empty(len(lo))
    if prev is not None:
        theta[:] = prev
    flag = _fit(kind, np.asarray(xu, float), np.asarray(w, float),
                np.asarray(lo, float), np.asarray(hi, float), theta,
                prev is not None)
    return theta, bool(flag)


def _logf(kind, xu, lgx1, theta):
    mu = theta[:, :1]
    if kind == 0:
        return xu * np.log(mu) - mu - lgx1
    if kind == 1:
        logsum = _use_logsum(xu)
        lgr = np.array([_lgratio(xu, float(r), logsum) for r in theta[:, 1]])
        r = theta[:, 1:2]
        return lgr - lgx1 + r * np.log(r / (r + mu)) + xu * np.log(mu / (r + mu))
    v = theta[:, 1:2]
    return -0.5 * (_LOG_2PI + np.log(v)) - 0.5 * (xu - mu) ** 2 / v


def logpdf_matrix(kind, xu, theta):
    xu = np.asarray(xu, float)
    lgx1 = gammaln(xu + 1.0) if kind != 2 else np.zeros_like(xu)
    return _logf(kind, xu, lgx1, np.asarray(theta, float))


def _estep(cnt, alpha, logf):
    with np.errstate(divide="ignore"):
        z = np.log(alpha)[:, None] + logf
    m = z.max(axis=0)
    e = np.exp(z - m)
    s = e.sum(axis=0)
    return float(np.dot(cnt, m + np.log(s))), e / s


def _penalty(alpha, lam):
    if np.any(alpha <= 0.0):
        return -math.inf
    G = alpha.shape[0]
    return lam * (float(np.log(alpha).sum()) + G * math.log(G))


def em_run(kind, xu, cnt, theta, alpha, lam, max_iter, tol, update_alpha,
           lo, hi, trace):
    G = theta.shape[0]
    lgx1 = gammaln(xu + 1.0) if kind != 2 else np.zeros_like(xu)
    n = float(cnt.sum())
    flag = False
    ll, post = _estep(cnt, alpha, _logf(kind, xu, lgx1, theta))
    pl_old = ll + _penalty(alpha, lam)
    trace[0] = pl_old
    k = 0
    while k < max_iter:
        wmat = cnt * post
        sws = wmat.sum(axis=1)
        for g in range(G):
            if update_alpha:
                alpha[g] = (sws[g] + lam) / (n + G * lam)
            if sws[g] > 0.0:
                flag |= _fit(kind, xu, wmat[g], lo, hi, theta[g], True)
        ll, post = _estep(cnt, alpha, _logf(kind, xu, lgx1, theta))
        pl_new = ll + _penalty(alpha, lam)
        k += 1
        trace[k] = pl_new
        if pl_new - pl_old < tol * abs(pl_old):
            break
        pl_old = pl_new
    return k, bool(flag)

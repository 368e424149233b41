# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EM kernels.

All routines work on compressed samples: sorted unique values ``xu`` with
multiplicities (or weights). Family codes: 0 poisson, 1 negbin, 2 normal.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport lgamma, log, exp, fabs, sqrt, INFINITY

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double INVPHI = 0.6180339887498949
cdef double GOLDEN_TOL = 1e-8
cdef int GOLDEN_MAXIT = 200


cdef inline bint _use_logsum(const double *xu, int u) noexcept nogil:
    # running log sums beat lgamma when the largest count is small
    return xu[u - 1] <= 2.0 * u + 64.0


cdef inline double _nb_profile(const double *xu, const double *w, int u,
                               double W, double Sx, double mu, double r) noexcept nogil:
    # weighted NB log-likelihood without the -lgamma(x+1) constant
    cdef double acc = 0.0, h = 0.0, lgr
    cdef int i, k = 0, kmax
    if _use_logsum(xu, u):
        # lgamma(x + r) - lgamma(r) = sum_{k<x} log(r + k) for integer x
        for i in range(u):
            kmax = <int>xu[i]
            while k < kmax:
                h += log(r + k)
                k += 1
            acc += w[i] * h
    else:
        lgr = lgamma(r)
        for i in range(u):
            if w[i] != 0.0:
                acc += w[i] * (lgamma(xu[i] + r) - lgr)
    acc += W * r * log(r / (r + mu))
    if Sx > 0.0:
        acc += Sx * log(mu / (r + mu))
    return acc


cdef int _nb_newton(const double *xu, const double *w, int u, double W,
                    double mu, double *r, double lo, double hi) noexcept nogil:
    """Polish r with Newton steps on the profile score (integer data).

    psi(x + r) - psi(r) and its derivative are exact harmonic sums for
    integer x, so the root is resolved to rounding level.
    """
    cdef int it, i, k, kmax
    cdef double rr = r[0], h1, h2, t1, t2, S, dS, step
    for it in range(8):
        S = W * log(rr / (rr + mu))
        dS = W * (1.0 / rr - 1.0 / (rr + mu))
        h1 = 0.0
        h2 = 0.0
        k = 0
        for i in range(u):
            kmax = <int>xu[i]
            while k < kmax:
                t1 = 1.0 / (rr + k)
                h1 += t1
                h2 += t1 * t1
                k += 1
            S += w[i] * h1
            dS -= w[i] * h2
        if not (dS < 0.0):
            return 0
        step = S / dS
        if fabs(step) > 1e-3 * rr or rr - step <= lo or rr - step >= hi:
            return 0
        rr -= step
        if fabs(step) <= 1e-15 * rr:
            break
    r[0] = rr
    return 1


cdef int _fit_theta(int kind, const double *xu, const double *w, int u,
                    const double *lo, const double *hi, double *theta,
                    bint has_prev) noexcept nogil:
    """Weighted MLE written into ``theta``; returns 1 when clamped to the box."""
    cdef double W = 0.0, Sx = 0.0, mu, v, d
    cdef int i, it, flag = 0
    cdef double a, b, c, dd, fc, fd, t, fbest, fprev, r_prev
    for i in range(u):
        W += w[i]
        Sx += w[i] * xu[i]
    mu = Sx / W
    if mu < lo[0]:
        mu = lo[0]
        flag = 1
    elif mu > hi[0]:
        mu = hi[0]
        flag = 1
    if kind == 0:
        theta[0] = mu
        return flag
    if kind == 2:
        v = 0.0
        for i in range(u):
            d = xu[i] - mu
            v += w[i] * d * d
        v /= W
        if v < lo[1]:
            v = lo[1]
            flag = 1
        elif v > hi[1]:
            v = hi[1]
            flag = 1
        theta[0] = mu
        theta[1] = v
        return flag
    # negbin: profile mu, golden-section on log r
    r_prev = theta[1]
    a = log(lo[1])
    b = log(hi[1])
    c = b - INVPHI * (b - a)
    dd = a + INVPHI * (b - a)
    fc = _nb_profile(xu, w, u, W, Sx, mu, exp(c))
    fd = _nb_profile(xu, w, u, W, Sx, mu, exp(dd))
    it = 0
    while (b - a) > GOLDEN_TOL and it < GOLDEN_MAXIT:
        if fc >= fd:
            b = dd
            dd = c
            fd = fc
            c = b - INVPHI * (b - a)
            fc = _nb_profile(xu, w, u, W, Sx, mu, exp(c))
        else:
            a = c
            c = dd
            fc = fd
            dd = a + INVPHI * (b - a)
            fd = _nb_profile(xu, w, u, W, Sx, mu, exp(dd))
        it += 1
    if fc >= fd:
        t = c
        fbest = fc
    else:
        t = dd
        fbest = fd
    theta[0] = mu
    theta[1] = exp(t)
    if xu[u - 1] < 1e6:
        _nb_newton(xu, w, u, W, mu, &theta[1], lo[1], hi[1])
        fbest = _nb_profile(xu, w, u, W, Sx, mu, theta[1])
    if has_prev and r_prev >= lo[1] and r_prev <= hi[1]:
        # generalized-EM guard: never accept a worse r than the previous one
        fprev = _nb_profile(xu, w, u, W, Sx, mu, r_prev)
        if fprev > fbest:
            theta[1] = r_prev
    if theta[1] <= lo[1] * (1.0 + 1e-6) or theta[1] >= hi[1] * (1.0 - 1e-6):
        flag = 1
    return flag


cdef void _logpdf_row(int kind, const double *xu, const double *lgx1, int u,
                      const double *th, double *out) noexcept nogil:
    cdef int i, k, kmax
    cdef double mu = th[0], r, v, lm, lr, lgr, d, h
    if kind == 0:
        lm = log(mu)
        for i in range(u):
            out[i] = xu[i] * lm - mu - lgx1[i]
    elif kind == 1:
        r = th[1]
        lr = log(r / (r + mu))
        lm = log(mu / (r + mu))
        if _use_logsum(xu, u):
            h = 0.0
            k = 0
            for i in range(u):
                kmax = <int>xu[i]
                while k < kmax:
                    h += log(r + k)
                    k += 1
                out[i] = h - lgx1[i] + r * lr + xu[i] * lm
        else:
            lgr = lgamma(r)
            for i in range(u):
                out[i] = lgamma(xu[i] + r) - lgr - lgx1[i] + r * lr + xu[i] * lm
    else:
        v = th[1]
        lm = -0.5 * (LOG_2PI + log(v))
        for i in range(u):
            d = xu[i] - mu
            out[i] = lm - 0.5 * d * d / v


cdef double _estep(int G, int u, const double *cnt, const double *alpha,
                   double *logf, double *post) noexcept nogil:
    """Posterior weights into ``post`` (G x u); returns sum_u cnt_u log phi(x_u)."""
    cdef int g, i
    cdef double m, s, ll = 0.0, la
    for i in range(u):
        m = -INFINITY
        for g in range(G):
            post[g * u + i] = log(alpha[g]) + logf[g * u + i]
            if post[g * u + i] > m:
                m = post[g * u + i]
        s = 0.0
        for g in range(G):
            post[g * u + i] = exp(post[g * u + i] - m)
            s += post[g * u + i]
        for g in range(G):
            post[g * u + i] /= s
        la = m + log(s)
        ll += cnt[i] * la
    return ll


cdef double _penalty(int G, const double *alpha, double lam) noexcept nogil:
    cdef double s = 0.0
    cdef int g
    for g in range(G):
        if alpha[g] <= 0.0:
            return -INFINITY
        s += log(alpha[g])
    return lam * (s + G * log(<double>G))


def fit_theta(int kind, double[::1] xu, double[::1] w, double[::1] lo,
              double[::1] hi, prev=None):
    """Weighted MLE on compressed data. Returns (theta, at_bound)."""
    cdef int d = lo.shape[0]
    cdef double[::1] theta = np.empty(d)
    cdef bint has_prev = prev is not None
    cdef int flag
    if has_prev:
        theta[:] = np.asarray(prev, dtype=np.float64)
    flag = _fit_theta(kind, &xu[0], &w[0], xu.shape[0], &lo[0], &hi[0],
                      &theta[0], has_prev)
    return np.asarray(theta), bool(flag)


def logpdf_matrix(int kind, double[::1] xu, double[:, ::1] theta):
    """log f(xu; theta_g) as a G x u array."""
    cdef int G = theta.shape[0], u = xu.shape[0], g
    cdef double[::1] lgx1 = np.empty(u)
    cdef double[:, ::1] out = np.empty((G, u))
    cdef int i
    for i in range(u):
        lgx1[i] = lgamma(xu[i] + 1.0) if kind != 2 else 0.0
    for g in range(G):
        _logpdf_row(kind, &xu[0], &lgx1[0], u, &theta[g, 0], &out[g, 0])
    return np.asarray(out)


def em_run(int kind, double[::1] xu, double[::1] cnt, double[:, ::1] theta,
           double[::1] alpha, double lam, int max_iter, double tol,
           bint update_alpha, double[::1] lo, double[::1] hi, double[::1] trace):
    """Run up to ``max_iter`` penalized EM updates in place.

    ``trace[k]`` receives the penalized log-likelihood after k updates.
    Returns (updates_done, any_boundary_hit).
    """
    cdef int G = theta.shape[0], u = xu.shape[0], d = theta.shape[1]
    cdef double[::1] lgx1 = np.empty(u)
    cdef double[:, ::1] logf = np.empty((G, u))
    cdef double[:, ::1] post = np.empty((G, u))
    cdef double[::1] wg = np.empty(u)
    cdef double n = 0.0, pl_old, pl_new, sw
    cdef int i, g, k = 0, flag = 0
    for i in range(u):
        lgx1[i] = lgamma(xu[i] + 1.0) if kind != 2 else 0.0
        n += cnt[i]
    with nogil:
        for g in range(G):
            _logpdf_row(kind, &xu[0], &lgx1[0], u, &theta[g, 0], &logf[g, 0])
        pl_old = _estep(G, u, &cnt[0], &alpha[0], &logf[0, 0], &post[0, 0]) \
            + _penalty(G, &alpha[0], lam)
        trace[0] = pl_old
        while k < max_iter:
            for g in range(G):
                sw = 0.0
                for i in range(u):
                    wg[i] = cnt[i] * post[g, i]
                    sw += wg[i]
                if update_alpha:
                    alpha[g] = (sw + lam) / (n + G * lam)
                if sw > 0.0:
                    flag |= _fit_theta(kind, &xu[0], &wg[0], u, &lo[0], &hi[0],
                                       &theta[g, 0], True)
            for g in range(G):
                _logpdf_row(kind, &xu[0], &lgx1[0], u, &theta[g, 0], &logf[g, 0])
            pl_new = _estep(G, u, &cnt[0], &alpha[0], &logf[0, 0], &post[0, 0]) \
                + _penalty(G, &alpha[0], lam)
            k += 1
            trace[k] = pl_new
            if pl_new - pl_old < tol * fabs(pl_old):
                break
            pl_old = pl_new
    return k, bool(flag)

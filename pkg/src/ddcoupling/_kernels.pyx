# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every function here has a line-for-line counterpart in ``_kernels_py`` and
both consume the same pre-drawn random numbers, so the two backends produce
the same output for the same seed.
"""
import numpy as np

from libc.math cimport sqrt, exp, log, floor, ldexp, INFINITY
from scipy.special.cython_special cimport bdtr, pdtr, ndtri, gammaln

# ctmc_advance status codes
cdef enum:
    REACHED_END = 0
    NEED_ARRIVALS = 1
    BUFFER_FULL = 2
    STOPPED = 3


cdef long long _binom_half_quantile(long long n, double u) noexcept nogil:
    cdef long long k
    cdef double pmf, cdf, guess
    if n <= 0:
        return 0
    if n <= 60:
        pmf = ldexp(1.0, <int>(-n))
        cdf = pmf
        k = 0
        while cdf < u and k < n:
            pmf *= <double>(n - k) / <double>(k + 1)
            k += 1
            cdf += pmf
        return k
    guess = floor(0.5 * n + 0.5 * sqrt(<double>n) * ndtri(u))
    if guess < 0:
        guess = 0
    if guess > n:
        guess = n
    k = <long long>guess
    cdf = bdtr(<double>k, n, 0.5)
    pmf = exp(gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0) - n * log(2.0))
    if cdf >= u:
        while k > 0 and cdf - pmf >= u:
            cdf -= pmf
            pmf *= <double>k / <double>(n - k + 1)
            k -= 1
    else:
        while cdf < u and k < n:
            pmf *= <double>(n - k) / <double>(k + 1)
            k += 1
            cdf += pmf
    return k


cdef long long _poisson_quantile(double mu, double u) noexcept nogil:
    cdef long long k
    cdef double pmf, cdf, guess
    if mu <= 0:
        return 0
    if mu <= 30.0:
        pmf = exp(-mu)
        cdf = pmf
        k = 0
        while cdf < u and k < 100000:
            pmf *= mu / <double>(k + 1)
            k += 1
            cdf += pmf
        return k
    guess = floor(mu + sqrt(mu) * ndtri(u))
    if guess < 0:
        guess = 0
    k = <long long>guess
    cdf = pdtr(<double>k, mu)
    pmf = exp(k * log(mu) - mu - gammaln(k + 1.0))
    if cdf >= u:
        while k > 0 and cdf - pmf >= u:
            cdf -= pmf
            pmf *= <double>k / mu
            k -= 1
    else:
        while cdf < u:
            pmf *= mu / <double>(k + 1)
            k += 1
            cdf += pmf
    return k


def binom_half_quantile(long long n, double u):
    return _binom_half_quantile(n, u)


def poisson_quantile(double mu, double u):
    return _poisson_quantile(mu, u)


def kmt_tree(double T, int levels, const double[::1] uniforms):
    """Dyadic quantile coupling of a Poisson path and a Brownian path on [0, T].

    ``uniforms`` holds ``2**levels`` values in (0, 1): the first couples the
    endpoint, the rest couple the cell midpoints in breadth-first order.
    Returns cumulative counts and Brownian values at the ``2**levels + 1``
    dyadic points.
    """
    cdef long long n_cells = 1 << levels
    if uniforms.shape[0] < n_cells:
        raise ValueError("need 2**levels uniforms")
    counts_arr = np.zeros(n_cells + 1, dtype=np.int64)
    b_arr = np.zeros(n_cells + 1, dtype=np.float64)
    cdef long long[::1] C = counts_arr
    cdef double[::1] B = b_arr
    cdef long long step, i, n, k, idx = 1
    cdef double u, width, sd
    cdef int lev
    with nogil:
        u = uniforms[0]
        C[n_cells] = _poisson_quantile(T, u)
        B[n_cells] = sqrt(T) * ndtri(u)
        step = n_cells
        width = T
        for lev in range(levels):
            sd = 0.5 * sqrt(width)
            i = 0
            while i < n_cells:
                u = uniforms[idx]
                idx += 1
                n = C[i + step] - C[i]
                k = _binom_half_quantile(n, u)
                C[i + step // 2] = C[i] + k
                B[i + step // 2] = 0.5 * (B[i] + B[i + step]) + sd * ndtri(u)
                i += step
            step //= 2
            width *= 0.5
    return counts_arr, b_arr


def bridge_fill(const double[::1] kt, const double[::1] kb,
                const double[::1] q, const double[::1] z):
    """Brownian values at sorted query times, conditioned on known points.

    Queries falling in the same bracket are filled left to right, each one
    conditioned on its predecessor and the right end of the bracket.
    Queries must lie in ``[kt[0], kt[-1]]`` and differ from the known times.
    """
    cdef Py_ssize_t nq = q.shape[0], nk = kt.shape[0]
    out_arr = np.empty(nq, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j = 0
    cdef double ta, ba, tb, bb, t, w
    with nogil:
        ta = kt[0]
        ba = kb[0]
        for i in range(nq):
            t = q[i]
            while j + 1 < nk - 1 and kt[j + 1] <= t:
                j += 1
                ta = kt[j]
                ba = kb[j]
            tb = kt[j + 1]
            bb = kb[j + 1]
            w = tb - ta
            if w <= 0 or t <= ta:
                out[i] = ba
            else:
                out[i] = ba + (t - ta) / w * (bb - ba) + sqrt((t - ta) * (tb - t) / w) * z[i]
                ta = t
                ba = out[i]
    return out_arr


def linear_em(const double[:, :, ::1] A, const double[:, ::1] noise,
              const double[::1] u0, double dt):
    """Euler-Maruyama for ``dU = A(t) U dt + noise``: ``U[k+1] = U[k] + dt A[k] U[k] + noise[k]``."""
    cdef Py_ssize_t n = noise.shape[0], d = noise.shape[1]
    out_arr = np.empty((n + 1, d), dtype=np.float64)
    cdef double[:, ::1] U = out_arr
    cdef Py_ssize_t k, a, b
    cdef double acc
    with nogil:
        for a in range(d):
            U[0, a] = u0[a]
        for k in range(n):
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc = acc + A[k, a, b] * U[k, b]
                U[k + 1, a] = U[k, a] + dt * acc + noise[k, a]
    return out_arr


cdef inline double _powi(double x, long long a) noexcept nogil:
    cdef double r = 1.0
    while a > 0:
        r *= x
        a -= 1
    return r


cdef int _eval_rates(const long long[::1] N, double K, int d, int m,
                     const long long[::1] term_jump, const double[::1] term_coef,
                     const long long[:, ::1] term_exps,
                     const unsigned char[::1] clamp, const unsigned char[::1] indicator,
                     const double[::1] lo, const double[::1] hi, int simplex,
                     double* x, double* beta) noexcept nogil:
    """Fill beta[e] = rate of jump e at N / K; returns 1 if clamping/indicator fired."""
    cdef int i, e, flag = 0, inside = 1
    cdef Py_ssize_t t
    cdef double mono, s = 0.0
    for i in range(d):
        x[i] = N[i] / K
        s += x[i]
        if x[i] < lo[i] - 1e-12 or x[i] > hi[i] + 1e-12:
            inside = 0
    if simplex and s > 1.0 + 1e-12:
        inside = 0
    for e in range(m):
        beta[e] = 0.0
    for t in range(term_coef.shape[0]):
        mono = term_coef[t]
        for i in range(d):
            mono *= _powi(x[i], term_exps[t, i])
        beta[term_jump[t]] += mono
    for e in range(m):
        if clamp[e] and beta[e] < 0.0:
            beta[e] = 0.0
            flag = 1
        if indicator[e] and not inside:
            if beta[e] != 0.0:
                flag = 1
            beta[e] = 0.0
    return flag


def ctmc_advance(long long[::1] N, double K, double t, double t_end,
                 const long long[:, ::1] jumps,
                 const long long[::1] term_jump, const double[::1] term_coef,
                 const long long[:, ::1] term_exps,
                 const unsigned char[::1] clamp, const unsigned char[::1] indicator,
                 const double[::1] lo, const double[::1] hi, int simplex,
                 const double[:, ::1] arrivals, const long long[::1] n_arr,
                 long long[::1] cursor, double[::1] clock,
                 const double[:, ::1] stop_Q, const double[::1] stop_center, double stop_r2,
                 double[::1] ev_t, long long[::1] ev_j, long long n_ev, bint record):
    """Event-driven simulation of the time-changed Poisson representation.

    Channel ``e`` fires when its internal clock ``clock[e]``, advancing at
    speed ``K * beta_e(N / K)``, reaches its next unit-rate arrival
    ``arrivals[e, cursor[e]]``.  ``N``, ``cursor`` and ``clock`` are updated
    in place so that the call can be resumed.

    Returns ``(status, t, n_ev, channel, clamped)``.
    """
    cdef int d = N.shape[0], m = jumps.shape[0]
    cdef int e, best, i, a, b, flag = 0, status = REACHED_END, channel = -1
    cdef double w, wbest, yq
    cdef double x[64]
    cdef double beta[64]
    cdef double y[64]
    cdef long long cap = ev_t.shape[0]
    if d > 64 or m > 64:
        raise ValueError("kernel supports at most 64 coordinates and 64 jumps")
    with nogil:
        while True:
            flag |= _eval_rates(N, K, d, m, term_jump, term_coef, term_exps,
                                clamp, indicator, lo, hi, simplex, x, beta)
            best = -1
            wbest = INFINITY
            for e in range(m):
                if beta[e] > 0.0:
                    if cursor[e] >= n_arr[e]:
                        status = NEED_ARRIVALS
                        channel = e
                        break
                    w = (arrivals[e, cursor[e]] - clock[e]) / (K * beta[e])
                    if w < wbest:
                        wbest = w
                        best = e
            if status == NEED_ARRIVALS:
                break
            if best < 0 or t + wbest >= t_end:
                for e in range(m):
                    clock[e] += K * beta[e] * (t_end - t)
                t = t_end
                status = REACHED_END
                break
            if record and n_ev >= cap:
                status = BUFFER_FULL
                break
            if wbest < 0.0:
                wbest = 0.0
            t += wbest
            for e in range(m):
                if e == best:
                    clock[e] = arrivals[e, cursor[e]]
                    cursor[e] += 1
                else:
                    clock[e] += K * beta[e] * wbest
            for i in range(d):
                N[i] += jumps[best, i]
            if record:
                ev_t[n_ev] = t
                ev_j[n_ev] = best
            n_ev += 1
            if stop_r2 > 0.0:
                for i in range(d):
                    y[i] = N[i] / K - stop_center[i]
                yq = 0.0
                for a in range(d):
                    for b in range(d):
                        yq += y[a] * stop_Q[a, b] * y[b]
                if yq >= stop_r2:
                    status = STOPPED
                    break
    return status, t, n_ev, channel, flag

"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``.

Same algorithms, same random inputs, same outputs; only slower.
"""
import math

import numpy as np
from scipy.special import bdtr, gammaln, ndtri, pdtr

REACHED_END, NEED_ARRIVALS, BUFFER_FULL, STOPPED = 0, 1, 2, 3


def binom_half_quantile(n, u):
    n = int(n)
    if n <= 0:
        return 0
    if n <= 60:
        pmf = math.ldexp(1.0, -n)
        cdf = pmf
        k = 0
        while cdf < u and k < n:
            pmf *= (n - k) / (k + 1)
            k += 1
            cdf += pmf
        return k
    guess = math.floor(0.5 * n + 0.5 * math.sqrt(n) * float(ndtri(u)))
    k = int(min(max(guess, 0), n))
    cdf = float(bdtr(float(k), n, 0.5))
    pmf = math.exp(float(gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)) - n * math.log(2.0))
    if cdf >= u:
        while k > 0 and cdf - pmf >= u:
            cdf -= pmf
            pmf *= k / (n - k + 1)
            k -= 1
    else:
        while cdf < u and k < n:
            pmf *= (n - k) / (k + 1)
            k += 1
            cdf += pmf
    return k


def poisson_quantile(mu, u):
    if mu <= 0:
        return 0
    if mu <= 30.0:
        pmf = math.exp(-mu)
        cdf = pmf
        k = 0
        while cdf < u and k < 100000:
            pmf *= mu / (k + 1)
            k += 1
            cdf += pmf
        return k
    k = int(max(math.floor(mu + math.sqrt(mu) * float(ndtri(u))), 0))
    cdf = float(pdtr(float(k), mu))
    pmf = math.exp(k * math.log(mu) - mu - float(gammaln(k + 1.0)))
    if cdf >= u:
        while k > 0 and cdf - pmf >= u:
            cdf -= pmf
            pmf *= k / mu
            k -= 1
    else:
        while cdf < u:
            pmf *= mu / (k + 1)
            k += 1
            cdf += pmf
    return k


def kmt_tree(T, levels, uniforms):
    n_cells = 1 << levels
    if len(uniforms) < n_cells:
        raise ValueError("need 2**levels uniforms")
    C = np.zeros(n_cells + 1, dtype=np.int64)
    B = np.zeros(n_cells + 1, dtype=np.float64)
    u = float(uniforms[0])
    C[n_cells] = poisson_quantile(T, u)
    B[n_cells] = math.sqrt(T) * float(ndtri(u))
    z_all = ndtri(np.asarray(uniforms, dtype=float))
    step, width, idx = n_cells, float(T), 1
    for _ in range(levels):
        sd = 0.5 * math.sqrt(width)
        half = step // 2
        for i in range(0, n_cells, step):
            u = float(uniforms[idx])
            n = int(C[i + step] - C[i])
            C[i + half] = C[i] + binom_half_quantile(n, u)
            B[i + half] = 0.5 * (B[i] + B[i + step]) + sd * z_all[idx]
            idx += 1
        step = half
        width *= 0.5
    return C, B


def bridge_fill(kt, kb, q, z):
    nk = len(kt)
    out = np.empty(len(q))
    j = 0
    ta, ba = float(kt[0]), float(kb[0])
    for i, t in enumerate(q):
        while j + 1 < nk - 1 and kt[j + 1] <= t:
            j += 1
            ta, ba = float(kt[j]), float(kb[j])
        tb, bb = float(kt[j + 1]), float(kb[j + 1])
        w = tb - ta
        if w <= 0 or t <= ta:
            out[i] = ba
        else:
            out[i] = ba + (t - ta) / w * (bb - ba) + math.sqrt((t - ta) * (tb - t) / w) * z[i]
            ta, ba = float(t), out[i]
    return out


def linear_em(A, noise, u0, dt):
    n, d = noise.shape
    U = np.empty((n + 1, d))
    U[0] = u0
    for k in range(n):
        U[k + 1] = U[k] + dt * (A[k] @ U[k]) + noise[k]
    return U


def _eval_rates(N, K, jumps_m, term_jump, term_coef, term_exps, clamp, indicator, lo, hi, simplex):
    x = N / K
    inside = bool(np.all((x >= lo - 1e-12) & (x <= hi + 1e-12)))
    if simplex and x.sum() > 1.0 + 1e-12:
        inside = False
    beta = np.zeros(jumps_m)
    for t in range(len(term_coef)):
        mono = float(term_coef[t])
        for i in range(len(x)):
            for _ in range(int(term_exps[t, i])):
                mono *= x[i]
        beta[term_jump[t]] += mono
    flag = 0
    for e in range(jumps_m):
        if clamp[e] and beta[e] < 0.0:
            beta[e] = 0.0
            flag = 1
        if indicator[e] and not inside:
            if beta[e] != 0.0:
                flag = 1
            beta[e] = 0.0
    return beta, flag


def ctmc_advance(N, K, t, t_end, jumps, term_jump, term_coef, term_exps, clamp, indicator,
                 lo, hi, simplex, arrivals, n_arr, cursor, clock, stop_Q, stop_center, stop_r2,
                 ev_t, ev_j, n_ev, record):
    m = jumps.shape[0]
    cap = len(ev_t)
    flag = 0
    status, channel = REACHED_END, -1
    while True:
        beta, f = _eval_rates(N, K, m, term_jump, term_coef, term_exps, clamp, indicator, lo, hi, simplex)
        flag |= f
        best, wbest = -1, math.inf
        need = False
        for e in range(m):
            if beta[e] > 0.0:
                if cursor[e] >= n_arr[e]:
                    status, channel, need = NEED_ARRIVALS, e, True
                    break
                w = (arrivals[e, cursor[e]] - clock[e]) / (K * beta[e])
                if w < wbest:
                    wbest, best = w, e
        if need:
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
        wbest = max(wbest, 0.0)
        t += wbest
        for e in range(m):
            if e == best:
                clock[e] = arrivals[e, cursor[e]]
                cursor[e] += 1
            else:
                clock[e] += K * beta[e] * wbest
        N += jumps[best]
        if record:
            ev_t[n_ev] = t
            ev_j[n_ev] = best
        n_ev += 1
        if stop_r2 > 0.0:
            y = N / K - stop_center
            if float(y @ stop_Q @ y) >= stop_r2:
                status = STOPPED
                break
    return status, t, n_ev, channel, flag

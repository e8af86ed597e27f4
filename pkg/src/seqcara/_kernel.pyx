# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trial loop for the built-in allocation rules.

Every routine here mirrors a list-based routine in the pure-Python modules
with the same floating-point operation order; keep them in sync.
"""
from libc.math cimport exp, log, log1p, sqrt, cos, fabs, erfc, M_PI, INFINITY, NAN
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

import numpy as np

cdef enum:
    MAXP = 8
    MAXPK = 32

cdef enum:
    CONVERGED = 0
    SINGULAR = 1
    DIVERGED = 2
    EXHAUSTED = 3

cdef double ETA_CLAMP = 700.0
cdef double JACOBI_TOL = 1e-14
cdef int JACOBI_MAX_SWEEPS = 100
cdef double RIDGE = 1e-4
cdef double SCORE_TOL = 1e-10
cdef double STEP_TOL = 1e-12
cdef int MAX_HALVINGS = 30
cdef double OBJ_SLACK = 1e-12
cdef double DIVERGENCE_BOUND = 50.0
cdef double MAX_CONDITION = 1e12
cdef double MIN_INFO_PER_ROW = 1e-8
cdef double DEFICIENT_EIGEN = 1e-12
cdef double PI_FLOOR = 1e-6
cdef double SE_FLOOR = 1e-6
cdef double GOLDEN_TOL = 1e-6

MAX_COEFFICIENTS = MAXP
MAX_PARAMETERS = MAXPK


cdef struct Params:
    int K
    int p
    int h
    int has_contrast
    double* arms
    int ncomp
    double* mix_mean
    double* mix_sd
    double* mix_cum
    double* H
    int m0
    int n0
    int max_n
    double c2
    double delta
    int scale_total
    int rule
    double* fixed_p
    double t0
    double eta0
    int vary_t
    int vary_eta
    double t_lo
    double t_hi
    double e_lo
    double e_hi
    int j_kind
    int max_iter
    int balance


cdef struct Work:
    double* X
    int* arm
    int* y
    double* pused
    int* stage
    int* rows
    int* cnt
    int n


cdef struct Outcome:
    int tau
    int censored
    int failed
    int covered
    int correct
    int correct_adaptive
    double max_axis
    double threshold
    double theta[MAXPK]
    double gamma[MAXPK]


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------

cdef inline double clampd(double t) noexcept nogil:
    if t > ETA_CLAMP:
        return ETA_CLAMP
    if t < -ETA_CLAMP:
        return -ETA_CLAMP
    return t


cdef inline double logistic_(double t) noexcept nogil:
    return 1.0 / (1.0 + exp(-clampd(t)))


cdef inline double clip(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double lin(const double* coef, const double* x, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int j
    for j in range(d):
        s += x[j] * coef[j]
    return s


cdef inline double uniform(bitgen_t* rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline double normal(bitgen_t* rng) noexcept nogil:
    cdef double u1 = uniform(rng)
    cdef double u2 = uniform(rng)
    return sqrt(-2.0 * log(1.0 - u1)) * cos(2.0 * M_PI * u2)


cdef inline int pick(const double* cumulative, int count, double u) noexcept nogil:
    cdef int k
    for k in range(count - 1):
        if u < cumulative[k]:
            return k
    return count - 1


# ---------------------------------------------------------------------------
# small symmetric matrices (row-major, dimension d)
# ---------------------------------------------------------------------------

cdef void jacobi_eigs(const double* a, int d, double* ev) noexcept nogil:
    cdef double m[MAXPK * MAXPK]
    cdef int i, j, k, p, q, sweep
    cdef double norm = 0.0, off, apq, tau, t, c, s, akp, akq, apk, aqk
    for i in range(d * d):
        m[i] = a[i]
    for i in range(d):
        for j in range(d):
            norm += m[i * d + j] * m[i * d + j]
    norm = sqrt(norm)
    for sweep in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for i in range(d):
            for j in range(d):
                if i != j:
                    off += m[i * d + j] * m[i * d + j]
        off = sqrt(off)
        if off <= JACOBI_TOL * norm:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p * d + q]
                if apq == 0.0:
                    continue
                tau = (m[q * d + q] - m[p * d + p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    akp = m[k * d + p]
                    akq = m[k * d + q]
                    m[k * d + p] = c * akp - s * akq
                    m[k * d + q] = s * akp + c * akq
                for k in range(d):
                    apk = m[p * d + k]
                    aqk = m[q * d + k]
                    m[p * d + k] = c * apk - s * aqk
                    m[q * d + k] = s * apk + c * aqk
                m[p * d + q] = 0.0
                m[q * d + p] = 0.0
    for i in range(d):
        ev[i] = m[i * d + i]


cdef void eig_extremes(const double* a, int d, double* lo, double* hi) noexcept nogil:
    cdef double ev[MAXPK]
    cdef int i
    jacobi_eigs(a, d, ev)
    lo[0] = ev[0]
    hi[0] = ev[0]
    for i in range(1, d):
        if ev[i] < lo[0]:
            lo[0] = ev[i]
        if ev[i] > hi[0]:
            hi[0] = ev[i]


cdef int cholesky(const double* a, int d, double* low) noexcept nogil:
    cdef int i, j, k
    cdef double s, ljj
    memset(low, 0, d * d * sizeof(double))
    for j in range(d):
        s = a[j * d + j]
        for k in range(j):
            s -= low[j * d + k] * low[j * d + k]
        if not s > 0.0:
            return j
        ljj = sqrt(s)
        low[j * d + j] = ljj
        for i in range(j + 1, d):
            s = a[i * d + j]
            for k in range(j):
                s -= low[i * d + k] * low[j * d + k]
            low[i * d + j] = s / ljj
    return -1


cdef int invert_spd(const double* a, int d, double* out) noexcept nogil:
    cdef double low[MAXPK * MAXPK]
    cdef double linv[MAXPK * MAXPK]
    cdef int i, j, k
    cdef double s
    if cholesky(a, d, low) >= 0:
        return 0
    memset(linv, 0, d * d * sizeof(double))
    for i in range(d):
        linv[i * d + i] = 1.0 / low[i * d + i]
        for j in range(i):
            s = 0.0
            for k in range(j, i):
                s += low[i * d + k] * linv[k * d + j]
            linv[i * d + j] = -s / low[i * d + i]
    for i in range(d):
        for j in range(i + 1):
            s = 0.0
            for k in range(i, d):
                s += linv[k * d + i] * linv[k * d + j]
            out[i * d + j] = s
            out[j * d + i] = s
    return 1


cdef double log_det_spd(const double* a, int d) noexcept nogil:
    cdef double low[MAXPK * MAXPK]
    cdef double s = 0.0
    cdef int i
    if cholesky(a, d, low) >= 0:
        return -INFINITY
    for i in range(d):
        s += log(low[i * d + i])
    return 2.0 * s


cdef int solve_spd(const double* a, const double* rhs, int d, double* out) noexcept nogil:
    cdef double low[MAXP * MAXP]
    cdef double z[MAXP]
    cdef int i, k
    cdef double s
    if cholesky(a, d, low) >= 0:
        return 0
    for i in range(d):
        s = rhs[i]
        for k in range(i):
            s -= low[i * d + k] * z[k]
        z[i] = s / low[i * d + i]
    for i in range(d - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, d):
            s -= low[k * d + i] * out[k]
        out[i] = s / low[i * d + i]
    return 1


cdef void sandwich(const double* v, const double* h, int n, int m, double* out) noexcept nogil:
    cdef double tmp[MAXPK * MAXPK]
    cdef int i, j, a, b
    cdef double s
    for i in range(n):
        for b in range(m):
            s = 0.0
            for j in range(n):
                s += v[i * n + j] * h[j * m + b]
            tmp[i * m + b] = s
    for a in range(m):
        for b in range(a + 1):
            s = 0.0
            for i in range(n):
                s += h[i * m + a] * tmp[i * m + b]
            out[a * m + b] = s
            out[b * m + a] = s


cdef double quadratic_form(const double* d_, const double* prec, int n) noexcept nogil:
    cdef double s = 0.0, t
    cdef int i, j
    for i in range(n):
        t = 0.0
        for j in range(n):
            t += prec[i * n + j] * d_[j]
        s += d_[i] * t
    return s


# ---------------------------------------------------------------------------
# per-arm likelihood
# ---------------------------------------------------------------------------

cdef double objective(const double* theta, Work* w, int k, int max_n, int p, double ridge) noexcept nogil:
    cdef double s = 0.0, eta
    cdef int i, j, r
    cdef int nk = w.cnt[k]
    cdef const int* rows = w.rows + k * max_n
    cdef const double* x
    for i in range(nk):
        r = rows[i]
        x = w.X + r * p
        eta = 0.0
        for j in range(p):
            eta += x[j] * theta[j]
        eta = clampd(eta)
        if eta > 0.0:
            s += w.y[r] * eta - eta - log1p(exp(-eta))
        else:
            s += w.y[r] * eta - log1p(exp(eta))
    for j in range(p):
        s -= ridge * theta[j] * theta[j]
    return s


cdef void score_info(const double* theta, Work* w, int k, int max_n, int p,
                     double* score, double* info) noexcept nogil:
    cdef int i, j, a, b, r
    cdef int nk = w.cnt[k]
    cdef const int* rows = w.rows + k * max_n
    cdef const double* x
    cdef double eta, mu, res, wt, wa
    for a in range(p):
        score[a] = 0.0
    for a in range(p * p):
        info[a] = 0.0
    for i in range(nk):
        r = rows[i]
        x = w.X + r * p
        eta = 0.0
        for j in range(p):
            eta += x[j] * theta[j]
        mu = 1.0 / (1.0 + exp(-clampd(eta)))
        res = w.y[r] - mu
        wt = mu * (1.0 - mu)
        for a in range(p):
            score[a] += x[a] * res
            wa = wt * x[a]
            for b in range(a + 1):
                info[a * p + b] += wa * x[b]
    for a in range(p):
        for b in range(a):
            info[b * p + a] = info[a * p + b]


cdef int newton(Work* w, int k, int max_n, int p, const double* theta0, double ridge,
                int max_iter, double* theta, int* iters) noexcept nogil:
    cdef double score[MAXP]
    cdef double info[MAXP * MAXP]
    cdef double grad[MAXP]
    cdef double step[MAXP]
    cdef double cand[MAXP]
    cdef double obj, cand_obj, gnorm, t, snorm, lo, hi
    cdef int j, halving, accepted, small_step = 0
    for j in range(p):
        theta[j] = theta0[j]
    obj = objective(theta, w, k, max_n, p, ridge)
    iters[0] = 0
    while True:
        score_info(theta, w, k, max_n, p, score, info)
        for j in range(p):
            grad[j] = score[j] - 2.0 * ridge * theta[j]
        gnorm = 0.0
        for j in range(p):
            if fabs(grad[j]) > gnorm:
                gnorm = fabs(grad[j])
        if gnorm < SCORE_TOL or small_step:
            break
        if iters[0] >= max_iter:
            return EXHAUSTED
        for j in range(p):
            info[j * p + j] += 2.0 * ridge
        if not solve_spd(info, grad, p, step):
            return SINGULAR
        iters[0] += 1
        t = 1.0
        accepted = 0
        for halving in range(MAX_HALVINGS + 1):
            for j in range(p):
                cand[j] = theta[j] + t * step[j]
            cand_obj = objective(cand, w, k, max_n, p, ridge)
            if cand_obj >= obj - OBJ_SLACK * (1.0 + fabs(obj)):
                accepted = 1
                break
            t *= 0.5
        if not accepted:
            if gnorm < 1e-8:
                break
            return EXHAUSTED
        snorm = 0.0
        for j in range(p):
            snorm += (cand[j] - theta[j]) * (cand[j] - theta[j])
        for j in range(p):
            theta[j] = cand[j]
        obj = cand_obj
        if sqrt(snorm) < STEP_TOL:
            small_step = 1
        if ridge == 0.0:
            for j in range(p):
                if fabs(theta[j]) > DIVERGENCE_BOUND:
                    return DIVERGED
    if ridge == 0.0:
        score_info(theta, w, k, max_n, p, score, info)
        eig_extremes(info, p, &lo, &hi)
        if lo <= MIN_INFO_PER_ROW * w.cnt[k] or hi > MAX_CONDITION * lo:
            return SINGULAR
    return CONVERGED


cdef int fit(Work* w, int k, int max_n, int p, double* theta, int max_iter) noexcept nogil:
    """Refit arm ``k`` in place from ``theta``: 0 on failure, 1 for the MLE, 2 under the ridge."""
    cdef double start[MAXP]
    cdef double out[MAXP]
    cdef int j, iters
    if newton(w, k, max_n, p, theta, 0.0, max_iter, out, &iters) == CONVERGED:
        for j in range(p):
            theta[j] = out[j]
        return 1
    for j in range(p):
        start[j] = theta[j]
    for j in range(p):
        if fabs(theta[j]) > DIVERGENCE_BOUND:
            for j in range(p):
                start[j] = 0.0
            break
    if newton(w, k, max_n, p, start, RIDGE, max_iter, out, &iters) != CONVERGED:
        return 0
    for j in range(p):
        theta[j] = out[j]
    return 2


# ---------------------------------------------------------------------------
# allocation
# ---------------------------------------------------------------------------

cdef double utility_value(double p1, const double* scaled, const double* lams, const double* x,
                          int p, int n, double eta, const double* pi) noexcept nogil:
    cdef double m[MAXP * MAXP]
    cdef double pk[2]
    cdef double total = 0.0, ent = 0.0, wk
    cdef int k, i, j
    pk[0] = p1
    pk[1] = 1.0 - p1
    for k in range(2):
        wk = pk[k] * lams[k]
        for i in range(p):
            for j in range(i + 1):
                m[i * p + j] = (scaled[k * p * p + i * p + j] + wk * x[i] * x[j]) / (n + 1)
        total += log_det_spd(m, p)
    for k in range(2):
        if pk[k] > 0.0:
            ent += pk[k] * log(pk[k] / pi[k])
    return total - eta * ent


cdef double golden_max(const double* scaled, const double* lams, const double* x,
                       int p, int n, double eta, const double* pi) noexcept nogil:
    cdef double inv_phi = (sqrt(5.0) - 1.0) / 2.0
    cdef double a = 0.0, b = 1.0, c, d, fc, fd, best, fbest, fe, edge
    cdef int e
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc = utility_value(c, scaled, lams, x, p, n, eta, pi)
    fd = utility_value(d, scaled, lams, x, p, n, eta, pi)
    while b - a > GOLDEN_TOL:
        if fc >= fd:
            b = d
            d = c
            fd = fc
            c = b - inv_phi * (b - a)
            fc = utility_value(c, scaled, lams, x, p, n, eta, pi)
        else:
            a = c
            c = d
            fc = fd
            d = a + inv_phi * (b - a)
            fd = utility_value(d, scaled, lams, x, p, n, eta, pi)
    best = 0.5 * (a + b)
    fbest = utility_value(best, scaled, lams, x, p, n, eta, pi)
    for e in range(2):
        edge = <double>e
        fe = utility_value(edge, scaled, lams, x, p, n, eta, pi)
        if fe > fbest:
            best = edge
            fbest = fe
    return best


cdef double j_function(double t, int kind) noexcept nogil:
    if kind == 0:
        return logistic_(t)
    return 0.5 * erfc(-t / sqrt(2.0))


# ---------------------------------------------------------------------------
# trial
# ---------------------------------------------------------------------------

cdef void append(Work* w, Params* P, const double* x, int k, int yv, const double* pu, int stage) noexcept nogil:
    cdef int n = w.n, j
    for j in range(P.p):
        w.X[n * P.p + j] = x[j]
    w.arm[n] = k
    w.y[n] = yv
    for j in range(P.K):
        w.pused[n * P.K + j] = pu[j]
    w.stage[n] = stage
    w.rows[k * P.max_n + w.cnt[k]] = n
    w.cnt[k] += 1
    w.n = n + 1


cdef void draw_x(Params* P, bitgen_t* rng, double* x) noexcept nogil:
    cdef int c = pick(P.mix_cum, P.ncomp, uniform(rng))
    x[0] = 1.0
    x[1] = P.mix_mean[c] + P.mix_sd[c] * normal(rng)


cdef int draw_y(Params* P, int k, const double* x, bitgen_t* rng) noexcept nogil:
    cdef double mu = logistic_(lin(P.arms + k * P.p, x, P.p))
    return 1 if uniform(rng) < mu else 0


cdef void simulate(Params* P, Work* w, bitgen_t* rng, int* order, Outcome* out) noexcept nogil:
    cdef int K = P.K, p = P.p, pk = P.K * P.p, h = P.h
    cdef int i, j, k, a, b, tmp, n, yv, dirty_k = -1, deficient, stop = 0, status
    cdef int penalised[MAXPK]
    cdef int nburn = K * P.m0
    cdef double x[MAXP]
    cdef double pu[MAXPK]
    cdef double cum[MAXPK]
    cdef double S[MAXPK * MAXP]
    cdef double B[MAXPK * MAXP]
    cdef double Vk[MAXP * MAXP]
    cdef double V[MAXPK * MAXPK]
    cdef double Vg[MAXPK * MAXPK]
    cdef double prec[MAXPK * MAXPK]
    cdef double score[MAXP]
    cdef double scaled[2 * MAXP * MAXP]
    cdef double lams[2]
    cdef double pi[2]
    cdef double xt[MAXPK]
    cdef double est[MAXPK]
    cdef double tru[MAXPK]
    cdef double dv[MAXPK]
    cdef double lam, lam_max, lo, hi, vlo, vhi, lam_eff, q, threshold, se, t_n, eta_n
    cdef double delta, pi1, p1, u, mu, best_mu, s
    cdef int best

    out.failed = 0
    out.censored = 0
    out.covered = -1
    out.max_axis = NAN
    out.threshold = NAN

    for k in range(K):
        for i in range(P.m0):
            order[k * P.m0 + i] = k
    for i in range(nburn - 1, 0, -1):
        j = <int>(uniform(rng) * (i + 1))
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp
    for k in range(K):
        pu[k] = 1.0 / K
    for i in range(nburn):
        k = order[i]
        draw_x(P, rng, x)
        yv = draw_y(P, k, x, rng)
        append(w, P, x, k, yv, pu, 1)

    for i in range(pk):
        out.theta[i] = 0.0
    for k in range(K):
        penalised[k] = 0

    while True:
        n = w.n
        for k in range(K):
            if dirty_k >= 0 and k != dirty_k:
                continue
            status = fit(w, k, P.max_n, p, out.theta + k * p, P.max_iter)
            if status == 0:
                out.failed = 1
                break
            penalised[k] = status == 2
            score_info(out.theta + k * p, w, k, P.max_n, p, score, S + k * p * p)
        if out.failed:
            break
        for i in range(K * p * p):
            B[i] = S[i] / n

        deficient = 0
        lam_max = -INFINITY
        for i in range(pk * pk):
            V[i] = 0.0
        for k in range(K):
            eig_extremes(B + k * p * p, p, &lo, &hi)
            if not lo > DEFICIENT_EIGEN:
                deficient = 1
                break
            if not invert_spd(B + k * p * p, p, Vk):
                deficient = 1
                break
            eig_extremes(Vk, p, &vlo, &vhi)
            if vhi > lam_max:
                lam_max = vhi
            for a in range(p):
                for b in range(p):
                    V[(k * p + a) * pk + k * p + b] = Vk[a * p + b]

        if deficient:
            stop = 0
            out.max_axis = INFINITY
            out.threshold = INFINITY
        else:
            if P.has_contrast:
                sandwich(V, P.H, pk, h, Vg)
                eig_extremes(Vg, h, &lo, &lam)
            else:
                lam = lam_max
            lam_eff = lam / n if P.scale_total else lam
            q = P.c2 * lam_eff / n
            threshold = P.c2 * lam_eff / (P.delta * P.delta)
            stop = n >= P.n0 and q <= P.delta * P.delta
            out.max_axis = 2.0 * sqrt(q)
            out.threshold = threshold
        if stop:
            break
        if n >= P.max_n:
            out.censored = 1
            break

        draw_x(P, rng, x)
        if P.rule == 0:
            a = 0
            if P.balance:
                for k in range(K):
                    if penalised[k]:
                        a = 1
            if deficient:
                se = INFINITY
            else:
                for j in range(p):
                    xt[j] = x[j]
                    xt[p + j] = -x[j]
                se = sqrt(quadratic_form(xt, V, pk) / n)
            t_n = P.t0
            eta_n = P.eta0
            if P.vary_t:
                t_n = clip(P.t0 * se, P.t_lo, P.t_hi)
            if P.vary_eta:
                eta_n = clip(P.eta0 / (se if not SE_FLOOR > se else SE_FLOOR), P.e_lo, P.e_hi)
            delta = lin(out.theta, x, p) - lin(out.theta + p, x, p)
            pi1 = j_function(delta / t_n, P.j_kind)
            if pi1 < PI_FLOOR:
                pi1 = PI_FLOOR
            elif pi1 > 1.0 - PI_FLOOR:
                pi1 = 1.0 - PI_FLOOR
            pi[0] = pi1
            pi[1] = 1.0 - pi1
            if a:
                p1 = pi1 if (P.balance == 2 and eta_n > 0.0) else 0.5
            else:
                for k in range(2):
                    for i in range(p * p):
                        scaled[k * p * p + i] = n * B[k * p * p + i]
                    mu = logistic_(lin(out.theta + k * p, x, p))
                    lams[k] = mu * (1.0 - mu)
                p1 = golden_max(scaled, lams, x, p, n, eta_n, pi)
            pu[0] = p1
            pu[1] = 1.0 - p1
        else:
            for k in range(K):
                pu[k] = P.fixed_p[k]
        s = 0.0
        for k in range(K):
            s += pu[k]
            cum[k] = s
        k = pick(cum, K, uniform(rng))
        yv = draw_y(P, k, x, rng)
        append(w, P, x, k, yv, pu, 2)
        dirty_k = k

    n = w.n
    out.tau = n
    out.correct = 0
    out.correct_adaptive = 0
    for i in range(n):
        best = 0
        best_mu = logistic_(lin(P.arms, w.X + i * p, p))
        for k in range(1, K):
            mu = logistic_(lin(P.arms + k * p, w.X + i * p, p))
            if mu > best_mu:
                best = k
                best_mu = mu
        if best == w.arm[i]:
            out.correct += 1
            if i >= nburn:
                out.correct_adaptive += 1
    if out.failed or out.censored:
        if out.failed:
            out.max_axis = NAN
            out.threshold = NAN
        return

    if P.has_contrast:
        for b in range(h):
            s = 0.0
            for i in range(pk):
                s += P.H[i * h + b] * out.theta[i]
            est[b] = s
            s = 0.0
            for i in range(pk):
                s += P.H[i * h + b] * P.arms[i]
            tru[b] = s
            out.gamma[b] = est[b]
        if not invert_spd(Vg, h, prec):
            out.covered = 0
            return
        for b in range(h):
            dv[b] = est[b] - tru[b]
        out.covered = 1 if n * quadratic_form(dv, prec, h) <= P.c2 else 0
    else:
        for i in range(pk * pk):
            prec[i] = 0.0
        for k in range(K):
            for a in range(p):
                for b in range(p):
                    prec[(k * p + a) * pk + k * p + b] = B[k * p * p + a * p + b]
        for i in range(pk):
            dv[i] = out.theta[i] - P.arms[i]
        out.covered = 1 if n * quadratic_form(dv, prec, pk) <= P.c2 else 0


def run_trial(const double[:, ::1] arms, const double[::1] mix_mean, const double[::1] mix_sd, const double[::1] mix_cum,
              const double[:, ::1] hmat, bint has_contrast, int m0, int n0, int max_n, double c2, double delta,
              bint scale_total, int rule, const double[::1] fixed_p, double t0, double eta0, bint vary_t,
              bint vary_eta, double t_lo, double t_hi, double e_lo, double e_hi, int j_kind, int max_iter,
              int balance, object bit_generator, bint keep_records=False):
    """Run one trial; returns a dict of outcome fields (and records when asked)."""
    cdef Params P
    cdef Work w
    cdef Outcome out
    cdef bitgen_t* rng
    cdef int* order
    cdef int K = arms.shape[0], p = arms.shape[1]
    if p > MAXP or K * p > MAXPK or p != 2:
        raise ValueError("kernel supports p = 2 and at most %d parameters" % MAXPK)
    if rule == 0 and K != 2:
        raise ValueError("utility rule needs two arms")

    P.K = K
    P.p = p
    P.h = hmat.shape[1] if has_contrast else 0
    P.has_contrast = has_contrast
    P.arms = <double*> &arms[0, 0]
    P.ncomp = mix_mean.shape[0]
    P.mix_mean = <double*> &mix_mean[0]
    P.mix_sd = <double*> &mix_sd[0]
    P.mix_cum = <double*> &mix_cum[0]
    P.H = <double*> &hmat[0, 0]
    P.m0 = m0
    P.n0 = n0
    P.max_n = max_n
    P.c2 = c2
    P.delta = delta
    P.scale_total = scale_total
    P.rule = rule
    P.fixed_p = <double*> &fixed_p[0]
    P.t0 = t0
    P.eta0 = eta0
    P.vary_t = vary_t
    P.vary_eta = vary_eta
    P.t_lo = t_lo
    P.t_hi = t_hi
    P.e_lo = e_lo
    P.e_hi = e_hi
    P.j_kind = j_kind
    P.max_iter = max_iter
    P.balance = balance

    capsule = bit_generator.capsule
    rng = <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")

    X = np.empty((max_n, p))
    arm_a = np.empty(max_n, dtype=np.intc)
    y_a = np.empty(max_n, dtype=np.intc)
    pused = np.empty((max_n, K))
    stage = np.empty(max_n, dtype=np.intc)
    rows = np.empty(K * max_n, dtype=np.intc)
    cnt = np.zeros(K, dtype=np.intc)
    cdef double[:, ::1] Xv = X
    cdef int[::1] av = arm_a, yv = y_a, sv = stage, rv = rows, cv = cnt
    cdef double[:, ::1] pv = pused
    w.X = &Xv[0, 0]
    w.arm = &av[0]
    w.y = &yv[0]
    w.pused = &pv[0, 0]
    w.stage = &sv[0]
    w.rows = &rv[0]
    w.cnt = &cv[0]
    w.n = 0

    order = <int*> malloc(K * m0 * sizeof(int))
    if order == NULL:
        raise MemoryError()
    try:
        with bit_generator.lock, nogil:
            simulate(&P, &w, rng, order, &out)
    finally:
        free(order)

    n = out.tau
    result = {
        "tau": n,
        "censored": bool(out.censored),
        "failed": bool(out.failed),
        "theta": np.array([out.theta[i] for i in range(K * p)]).reshape(K, p),
        "gamma": np.array([out.gamma[i] for i in range(P.h)]) if (has_contrast and out.covered >= 0) else None,
        "covered": None if out.covered < 0 else bool(out.covered),
        "correct": out.correct,
        "correct_adaptive": out.correct_adaptive,
        "adaptive": n - K * m0,
        "counts": cnt.astype(np.int64),
        "max_axis": out.max_axis,
        "threshold": out.threshold,
    }
    if keep_records:
        result["records"] = (X[:n].copy(), arm_a[:n].copy(), y_a[:n].copy(), pused[:n].copy(), stage[:n].copy())
    return result

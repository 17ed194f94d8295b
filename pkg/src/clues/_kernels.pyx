# Compiled twin of clues._pykernels; keep the two in lockstep.
# Floating-point expressions are written in the same order as the numpy
# versions so both backends agree bit for bit. The one exception is pg_step,
# whose sums accumulate sequentially here and pairwise in numpy, so the two
# agree only to rounding.

import numpy as np

from libc.math cimport INFINITY, sqrt

cdef enum:
    SINGLE = 0
    COMPLETE = 1
    AVERAGE = 2
    WEIGHTED = 3
    WARD = 4


cdef inline double _lw(int method, double d_ki, double d_kj, double d_ij,
                       double s_i, double s_j, double s_k) noexcept nogil:
    cdef double t
    if method == SINGLE:
        return d_ki if d_ki < d_kj else d_kj
    elif method == COMPLETE:
        return d_ki if d_ki > d_kj else d_kj
    elif method == AVERAGE:
        return (s_i * d_ki + s_j * d_kj) / (s_i + s_j)
    elif method == WEIGHTED:
        return 0.5 * (d_ki + d_kj)
    else:
        t = ((s_i + s_k) * (d_ki * d_ki) + (s_j + s_k) * (d_kj * d_kj) - s_k * (d_ij * d_ij)) / (s_i + s_j + s_k)
        if t < 0.0:
            t = 0.0
        return sqrt(t)


cdef void _merge(double[:, ::1] D, double[::1] size, unsigned char[::1] active,
                 Py_ssize_t i, Py_ssize_t j, int method) noexcept nogil:
    cdef Py_ssize_t n = D.shape[0], k
    cdef double d_ij = D[i, j], v
    for k in range(n):
        if active[k] and k != i and k != j:
            v = _lw(method, D[k, i], D[k, j], d_ij, size[i], size[j], size[k])
            D[i, k] = v
            D[k, i] = v
    for k in range(n):
        D[j, k] = INFINITY
        D[k, j] = INFINITY
    active[j] = 0
    size[i] += size[j]


def merge_pair(double[:, ::1] D, double[::1] size, unsigned char[::1] active,
               Py_ssize_t i, Py_ssize_t j, int method):
    if method < 0 or method > 4:
        raise ValueError(f"unknown linkage code {method}")
    with nogil:
        _merge(D, size, active, i, j, method)


def argmin_pair(double[:, ::1] D, unsigned char[::1] active):
    cdef Py_ssize_t n = D.shape[0], i, j, bi = 0, bj = 0
    cdef double best = INFINITY, v
    with nogil:
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                v = D[i, j]
                if v < best:
                    best = v
                    bi = i
                    bj = j
    if best == INFINITY:
        # mirror np.argmin on an all-inf matrix
        return 0, 0, float(D[0, 0])
    return bi, bj, best


def nn_chain(double[:, ::1] D, double[::1] size, int method):
    cdef Py_ssize_t n = D.shape[0]
    cdef Py_ssize_t m = n - 1 if n > 0 else 0
    pairs_np = np.empty((m, 2), dtype=np.int64)
    heights_np = np.empty(m, dtype=np.float64)
    active_np = np.ones(n, dtype=np.uint8)
    chain_np = np.empty(n + 1, dtype=np.int64)
    cdef long long[:, ::1] pairs = pairs_np
    cdef double[::1] heights = heights_np
    cdef unsigned char[::1] active = active_np
    cdef long long[::1] chain = chain_np
    cdef Py_ssize_t top = 0, step, x, y, k, a, b, prev
    cdef double best, v
    if method < 0 or method > 4:
        raise ValueError(f"unknown linkage code {method}")
    with nogil:
        for step in range(m):
            if top == 0:
                for k in range(n):
                    if active[k]:
                        chain[0] = k
                        top = 1
                        break
            while True:
                x = chain[top - 1]
                best = INFINITY
                y = -1
                for k in range(n):
                    v = D[x, k]
                    if v < best:
                        best = v
                        y = k
                if top > 1:
                    prev = chain[top - 2]
                    if D[x, prev] <= best:
                        y = prev
                        best = D[x, prev]
                        break
                chain[top] = y
                top += 1
            top -= 2
            if x < y:
                a = x
                b = y
            else:
                a = y
                b = x
            pairs[step, 0] = a
            pairs[step, 1] = b
            heights[step] = best
            _merge(D, size, active, a, b, method)
    return pairs_np, heights_np


def greedy_matching(long long[::1] u, long long[::1] v, Py_ssize_t n):
    cdef Py_ssize_t m = u.shape[0], e, free = n
    cdef long long a, b
    taken_np = np.zeros(n, dtype=np.uint8)
    keep_np = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_np
    cdef unsigned char[::1] keep = keep_np
    with nogil:
        for e in range(m):
            a = u[e]
            b = v[e]
            if not taken[a] and not taken[b]:
                taken[a] = 1
                taken[b] = 1
                keep[e] = 1
                free -= 2
                if free < 2:
                    break
    return keep_np


def pg_step(double[::1] x, const double[::1] c, const unsigned char[::1] code, Py_ssize_t m,
            double lam1, double lam2, const double[::1] r, double[::1] r_new, double step, int coupled):
    """One fused projected-gradient pass over the upper triangle; see the numpy twin."""
    cdef Py_ssize_t i, j, k = 0, M = x.shape[0]
    cdef double f_ml = 0.0, f_cl = 0.0, f_d = 0.0, f_r = 0.0
    if M == 0:
        for i in range(m):
            r_new[i] = 0.0
        return 0.0
    cdef double *px = &x[0]
    cdef const double *pc = &c[0]
    cdef const unsigned char *pt = &code[0]
    cdef const double *pr = &r[0]
    cdef double *pn = &r_new[0]
    with nogil:
        _pg_pass(px, pc, pt, pr, pn, m, lam1, lam2, step, coupled, &f_d, &f_ml, &f_cl)
        if coupled:
            for i in range(m):
                f_r += pn[i] * pn[i]
    return 0.5 * f_d + 0.5 * lam1 * f_ml + 0.5 * lam2 * f_cl + 0.25 * f_r


cdef inline double _pg_entry(double *x, const double *c, const unsigned char *code, Py_ssize_t k,
                             double lam1, double lam2, double step, double coupling,
                             double *sml, double *scl) noexcept nogil:
    """Update entry ``k`` in place and return its new difference ``x - c``."""
    cdef double xv = x[k], g = xv - c[k]
    cdef unsigned char t = code[k]
    if t:
        if t == 1:
            g = g + lam1 * xv
        else:
            g = g + lam2 * (xv + 1.0)
    g = g + coupling
    xv = xv - step * g
    if xv < -1.0:
        xv = -1.0
    if xv > 0.0:
        xv = 0.0
    x[k] = xv
    if t:
        if t == 1:
            sml[0] += xv * xv
        else:
            scl[0] += (xv + 1.0) * (xv + 1.0)
    return xv - c[k]


cdef void _pg_pass(double *x, const double *c, const unsigned char *code, const double *r, double *r_new,
                   Py_ssize_t m, double lam1, double lam2, double step, int coupled,
                   double *f_d, double *f_ml, double *f_cl) noexcept nogil:
    # two interleaved accumulators per running sum break the add latency chain
    cdef Py_ssize_t i, j, k = 0
    cdef double d0, d1, ri0, ri1, half_ri, sd0 = 0.0, sd1 = 0.0, sml = 0.0, scl = 0.0
    cdef double half = 0.5 if coupled else 0.0
    for i in range(m):
        r_new[i] = 0.0
    for i in range(m):
        ri0 = 0.0
        ri1 = 0.0
        half_ri = half * r[i]
        j = i + 1
        while j + 1 < m:
            d0 = _pg_entry(x, c, code, k, lam1, lam2, step, half_ri + half * r[j], &sml, &scl)
            d1 = _pg_entry(x, c, code, k + 1, lam1, lam2, step, half_ri + half * r[j + 1], &sml, &scl)
            sd0 += d0 * d0
            sd1 += d1 * d1
            ri0 += d0
            ri1 += d1
            r_new[j] += d0
            r_new[j + 1] += d1
            j += 2
            k += 2
        if j < m:
            d0 = _pg_entry(x, c, code, k, lam1, lam2, step, half_ri + half * r[j], &sml, &scl)
            sd0 += d0 * d0
            ri0 += d0
            r_new[j] += d0
            k += 1
        r_new[i] += ri0 + ri1
    f_d[0] = sd0 + sd1
    f_ml[0] = sml
    f_cl[0] = scl

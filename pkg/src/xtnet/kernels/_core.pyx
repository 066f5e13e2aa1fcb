# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback.py`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _cost(const double[:, :, ::1] x, const double[:, :, ::1] y,
                         Py_ssize_t p, Py_ssize_t i, Py_ssize_t j, Py_ssize_t d) nogil:
    cdef double s = 0.0, t
    cdef Py_ssize_t q
    for q in range(d):
        t = x[p, i, q] - y[p, j, q]
        s += t * t
    return s


cdef void _fill_cost(const double[:, :, ::1] x, const double[:, :, ::1] y,
                     Py_ssize_t p, Py_ssize_t n, Py_ssize_t m, Py_ssize_t d,
                     double[:, ::1] C) nogil:
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            C[i, j] = _cost(x, y, p, i, j, d)


cdef void _row_update(double[:, ::1] C, double[::1] g, double[::1] fprev,
                      Py_ssize_t n, Py_ssize_t m, double logb, double eps,
                      double alpha, double[::1] out) nogil:
    # out_i = (1-alpha) fprev_i - alpha * eps * LSE_j(logb + (g_j - C_ij)/eps)
    cdef Py_ssize_t i, j
    cdef double zmax, z, s
    for i in range(n):
        zmax = -INFINITY
        for j in range(m):
            z = logb + (g[j] - C[i, j]) / eps
            if z > zmax:
                zmax = z
        s = 0.0
        for j in range(m):
            s += exp(logb + (g[j] - C[i, j]) / eps - zmax)
        out[i] = (1.0 - alpha) * fprev[i] - alpha * eps * (log(s) + zmax)


cdef void _col_update(double[:, ::1] C, double[::1] f, double[::1] gprev,
                      Py_ssize_t n, Py_ssize_t m, double loga, double eps,
                      double alpha, double[::1] out) nogil:
    cdef Py_ssize_t i, j
    cdef double zmax, z, s
    for j in range(m):
        zmax = -INFINITY
        for i in range(n):
            z = loga + (f[i] - C[i, j]) / eps
            if z > zmax:
                zmax = z
        s = 0.0
        for i in range(n):
            s += exp(loga + (f[i] - C[i, j]) / eps - zmax)
        out[j] = (1.0 - alpha) * gprev[j] - alpha * eps * (log(s) + zmax)


def sinkhorn_forward(x, nx, y, ny, double eps, int iters):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const long long[::1] nxv = np.ascontiguousarray(nx, dtype=np.int64)
    cdef const long long[::1] nyv = np.ascontiguousarray(ny, dtype=np.int64)
    cdef Py_ssize_t P = xv.shape[0], N = xv.shape[1], M = yv.shape[1], D = xv.shape[2]
    f_hist_arr = np.zeros((iters + 2, P, N))
    g_hist_arr = np.zeros((iters + 2, P, M))
    values_arr = np.zeros(P)
    cdef double[:, :, ::1] fh = f_hist_arr
    cdef double[:, :, ::1] gh = g_hist_arr
    cdef double[::1] values = values_arr
    cdef double[:, ::1] C = np.zeros((max(N, 1), max(M, 1)))
    cdef Py_ssize_t p, k, i, j, n, m
    cdef double loga, logb, acc, alpha
    with nogil:
        for p in range(P):
            n = nxv[p]
            m = nyv[p]
            loga = -log(<double>n)
            logb = -log(<double>m)
            _fill_cost(xv, yv, p, n, m, D, C)
            for k in range(1, iters + 2):
                alpha = 0.5 if k <= iters else 1.0
                _row_update(C, gh[k - 1, p, :], fh[k - 1, p, :], n, m, logb, eps, alpha, fh[k, p, :])
                _col_update(C, fh[k - 1, p, :], gh[k - 1, p, :], n, m, loga, eps, alpha, gh[k, p, :])
            acc = 0.0
            for i in range(n):
                acc += fh[iters + 1, p, i] / n
            for j in range(m):
                acc += gh[iters + 1, p, j] / m
            values[p] = acc
    return values_arr, (f_hist_arr, g_hist_arr)


def sinkhorn_backward(x, nx, y, ny, double eps, int iters, hist, upstream):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const long long[::1] nxv = np.ascontiguousarray(nx, dtype=np.int64)
    cdef const long long[::1] nyv = np.ascontiguousarray(ny, dtype=np.int64)
    cdef const double[:, :, ::1] fh = np.ascontiguousarray(hist[0], dtype=np.float64)
    cdef const double[:, :, ::1] gh = np.ascontiguousarray(hist[1], dtype=np.float64)
    cdef const double[::1] up = np.ascontiguousarray(upstream, dtype=np.float64)
    cdef Py_ssize_t P = xv.shape[0], N = xv.shape[1], M = yv.shape[1], D = xv.shape[2]
    gx_arr = np.zeros((P, N, D))
    gy_arr = np.zeros((P, M, D))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gy = gy_arr
    cdef Py_ssize_t NN = max(N, 1), MM = max(M, 1)
    cdef double[:, ::1] C = np.zeros((NN, MM))
    cdef double[:, ::1] dC = np.zeros((NN, MM))
    cdef double[:, ::1] Sa = np.zeros((NN, MM))
    cdef double[:, ::1] Sb = np.zeros((NN, MM))
    cdef double[::1] F = np.zeros(NN)
    cdef double[::1] G = np.zeros(MM)
    cdef double[::1] Fn = np.zeros(NN)
    cdef double[::1] Gn = np.zeros(MM)
    cdef Py_ssize_t p, k, i, j, q, n, m
    cdef double loga, logb, zmax, z, s, w, alpha
    with nogil:
        for p in range(P):
            n = nxv[p]
            m = nyv[p]
            loga = -log(<double>n)
            logb = -log(<double>m)
            _fill_cost(xv, yv, p, n, m, D, C)
            for i in range(n):
                F[i] = up[p] / n
                for j in range(m):
                    dC[i, j] = 0.0
            for j in range(m):
                G[j] = up[p] / m
            for k in range(iters + 1, 0, -1):
                alpha = 0.5 if k <= iters else 1.0
                # row softmax from g_{k-1}
                for i in range(n):
                    zmax = -INFINITY
                    for j in range(m):
                        z = logb + (gh[k - 1, p, j] - C[i, j]) / eps
                        if z > zmax:
                            zmax = z
                    s = 0.0
                    for j in range(m):
                        Sa[i, j] = exp(logb + (gh[k - 1, p, j] - C[i, j]) / eps - zmax)
                        s += Sa[i, j]
                    for j in range(m):
                        Sa[i, j] /= s
                # column softmax from f_{k-1}
                for j in range(m):
                    zmax = -INFINITY
                    for i in range(n):
                        z = loga + (fh[k - 1, p, i] - C[i, j]) / eps
                        if z > zmax:
                            zmax = z
                    s = 0.0
                    for i in range(n):
                        Sb[i, j] = exp(loga + (fh[k - 1, p, i] - C[i, j]) / eps - zmax)
                        s += Sb[i, j]
                    for i in range(n):
                        Sb[i, j] /= s
                for i in range(n):
                    Fn[i] = (1.0 - alpha) * F[i]
                for j in range(m):
                    Gn[j] = (1.0 - alpha) * G[j]
                for i in range(n):
                    for j in range(m):
                        dC[i, j] += alpha * (F[i] * Sa[i, j] + G[j] * Sb[i, j])
                        Fn[i] -= alpha * Sb[i, j] * G[j]
                        Gn[j] -= alpha * Sa[i, j] * F[i]
                for i in range(n):
                    F[i] = Fn[i]
                for j in range(m):
                    G[j] = Gn[j]
            for i in range(n):
                for j in range(m):
                    w = 2.0 * dC[i, j]
                    for q in range(D):
                        z = w * (xv[p, i, q] - yv[p, j, q])
                        gx[p, i, q] += z
                        gy[p, j, q] -= z
    return gx_arr, gy_arr


def mckp_dp(costs, values, long long budget):
    cdef const long long[:, ::1] cv = np.ascontiguousarray(costs, dtype=np.int64)
    cdef const double[:, ::1] vv = np.ascontiguousarray(values, dtype=np.float64)
    dp_arr = np.zeros(budget + 1)
    new_arr = np.empty(budget + 1)
    cdef double[::1] dp = dp_arr
    cdef double[::1] new = new_arr
    cdef Py_ssize_t U = cv.shape[0], T = cv.shape[1]
    cdef Py_ssize_t u, t, b
    cdef long long c
    cdef double v, cand
    with nogil:
        for u in range(U):
            for b in range(budget + 1):
                new[b] = -INFINITY
            for t in range(T):
                c = cv[u, t]
                if c > budget:
                    continue
                v = vv[u, t]
                for b in range(c, budget + 1):
                    cand = dp[b - c] + v
                    if cand > new[b]:
                        new[b] = cand
            for b in range(budget + 1):
                dp[b] = new[b]
    return dp_arr

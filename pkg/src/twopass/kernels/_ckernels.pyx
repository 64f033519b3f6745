# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled transducer-lattice and edit-distance kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double _logaddexp(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def rnnt_lattice(blank_lp, label_lp):
    """Forward-backward over a transducer lattice; see the Python fallback."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bl = np.ascontiguousarray(blank_lp, dtype=np.float64)
    cdef Py_ssize_t T = bl.shape[0]
    cdef Py_ssize_t U1 = bl.shape[1]
    cdef Py_ssize_t U = U1 - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] lb = np.ascontiguousarray(
        np.asarray(label_lp, dtype=np.float64).reshape(T, U))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] alpha = np.empty((T, U1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] beta = np.empty((T, U1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_blank = np.empty((T, U1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_label = np.empty((T, U))
    cdef Py_ssize_t t, u
    cdef double a, b, nxt, loglik
    with nogil:
        for t in range(T):
            for u in range(U1):
                if t == 0 and u == 0:
                    alpha[t, u] = 0.0
                    continue
                a = alpha[t - 1, u] + bl[t - 1, u] if t > 0 else -INFINITY
                b = alpha[t, u - 1] + lb[t, u - 1] if u > 0 else -INFINITY
                alpha[t, u] = _logaddexp(a, b)
        loglik = alpha[T - 1, U] + bl[T - 1, U]
        for t in range(T - 1, -1, -1):
            for u in range(U, -1, -1):
                if t == T - 1 and u == U:
                    beta[t, u] = bl[t, u]
                    continue
                a = beta[t + 1, u] + bl[t, u] if t < T - 1 else -INFINITY
                b = beta[t, u + 1] + lb[t, u] if u < U else -INFINITY
                beta[t, u] = _logaddexp(a, b)
        for t in range(T):
            for u in range(U1):
                if t < T - 1:
                    nxt = beta[t + 1, u]
                elif u == U:
                    nxt = 0.0
                else:
                    nxt = -INFINITY
                g_blank[t, u] = -exp(alpha[t, u] + bl[t, u] + nxt - loglik)
                if u < U:
                    g_label[t, u] = -exp(alpha[t, u] + lb[t, u] + beta[t, u + 1] - loglik)
    return loglik, g_blank, g_label


def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two integer sequences."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] x = np.ascontiguousarray(a, dtype=np.int64).reshape(-1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] y = np.ascontiguousarray(b, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prev = np.arange(m + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur = np.empty(m + 1, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef long long best, cand
    with nogil:
        for i in range(1, n + 1):
            cur[0] = i
            for j in range(1, m + 1):
                best = prev[j] + 1
                cand = cur[j - 1] + 1
                if cand < best:
                    best = cand
                cand = prev[j - 1] + (0 if x[i - 1] == y[j - 1] else 1)
                if cand < best:
                    best = cand
                cur[j] = best
            for j in range(m + 1):
                prev[j] = cur[j]
    return int(prev[m])

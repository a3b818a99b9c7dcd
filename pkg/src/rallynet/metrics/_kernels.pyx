# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the two dynamic-programming metrics (DTW, CTC)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log, log1p


cdef inline double _logaddexp(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def dtw_accumulate(double[:, ::1] cost):
    """Classic DTW on a pointwise cost matrix, no window, no normalization."""
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc_arr = np.full((n + 1, m + 1), np.inf)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j
    cdef double best
    acc[0, 0] = 0.0
    with nogil:
        for i in range(n):
            for j in range(m):
                best = acc[i, j]
                if acc[i, j + 1] < best:
                    best = acc[i, j + 1]
                if acc[i + 1, j] < best:
                    best = acc[i + 1, j]
                acc[i + 1, j + 1] = cost[i, j] + best
    return float(acc[n, m])


def ctc_forward_nll(double[:, ::1] log_probs, long[::1] labels, long blank):
    """CTC negative log-likelihood via the forward algorithm in log space."""
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t L = labels.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ext_arr = np.full(S, blank, dtype=np.int64)
    cdef Py_ssize_t k
    for k in range(L):
        ext_arr[2 * k + 1] = labels[k]
    cdef long[::1] ext = ext_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] alpha_arr = np.full(S, -np.inf)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prev_arr = np.empty(S)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] prev = prev_arr
    cdef Py_ssize_t t, s
    cdef double a, total

    alpha[0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[1] = log_probs[0, ext[1]]
    with nogil:
        for t in range(1, T):
            for s in range(S):
                prev[s] = alpha[s]
            for s in range(S):
                a = prev[s]
                if s >= 1:
                    a = _logaddexp(a, prev[s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    a = _logaddexp(a, prev[s - 2])
                alpha[s] = a + log_probs[t, ext[s]]
    total = alpha[S - 1]
    if S > 1:
        total = _logaddexp(total, alpha[S - 2])
    return -float(total)

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled composition-sampling kernels.

Mirrors _fallback.py operation for operation; both must produce
bit-identical draws from the same uniforms (build disables FMA
contraction to keep float rounding in step with numpy).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _upper_bound(const double[:] row, Py_ssize_t hi, double r) nogil:
    # Smallest index in [0, hi] with row[idx] > r; hi+1 if none.
    # Matches np.searchsorted(row[:hi+1], r, side="right").
    cdef Py_ssize_t lo = 0, mid
    hi += 1
    while lo < hi:
        mid = (lo + hi) // 2
        if row[mid] <= r:
            lo = mid + 1
        else:
            hi = mid
    return lo


def anchored_draws(
    const double[:, ::1] cum_end,
    const double[:, ::1] cum_start,
    const double[:, ::1] u,
    Py_ssize_t F,
    Py_ssize_t T,
):
    """See _fallback.anchored_draws; identical contract and results."""
    cdef Py_ssize_t n = u.shape[0]
    out_arr = np.zeros((n, F + 1), dtype=np.int64)
    cdef long long[:, ::1] t = out_arr
    cdef Py_ssize_t row, i, f
    cdef long long K, k
    cdef double r, base, total
    with nogil:
        for row in range(n):
            f = <Py_ssize_t> (u[row, 0] * F)
            if f > F - 1:
                f = F - 1
            f += 1
            k = <long long> (u[row, 1] * T)
            if k > T - 1:
                k = T - 1
            t[row, f] = k + 1
            for i in range(f - 1, 0, -1):
                K = t[row, i + 1]
                r = u[row, 1 + i] * cum_end[i, K]
                k = _upper_bound(cum_end[i], T, r)
                if k > K:
                    k = K
                t[row, i] = k
            for i in range(f + 1, F + 1):
                K = t[row, i - 1]
                base = cum_start[i, K - 1]
                r = base + u[row, 1 + i] * (cum_start[i, T] - base)
                k = _upper_bound(cum_start[i], T, r)
                if k > T:
                    k = T
                t[row, i] = k
    return out_arr[:, 1:]


def sequential_draws(const double[:, ::1] u, Py_ssize_t F, Py_ssize_t T):
    """See _fallback.sequential_draws; identical contract and results."""
    cdef Py_ssize_t n = u.shape[0]
    out_arr = np.empty((n, F), dtype=np.int64)
    cdef long long[:, ::1] t = out_arr
    cdef Py_ssize_t row, i
    cdef long long span, step
    with nogil:
        for row in range(n):
            step = <long long> (u[row, 0] * T)
            if step > T - 1:
                step = T - 1
            t[row, 0] = step + 1
            for i in range(1, F):
                span = T - t[row, i - 1] + 1
                step = <long long> (u[row, i] * span)
                if step > span - 1:
                    step = span - 1
                t[row, i] = t[row, i - 1] + step
    return out_arr

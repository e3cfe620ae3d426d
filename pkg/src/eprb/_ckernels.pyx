# cython: language_level=3, boundscheck=False, wraparound=False
# cdivision stays off: bin indices need floor semantics for negative deltas.
"""Compiled time-tag kernels.  Mirror of ``_pykernels``; keep them in sync."""

import numpy as np
cimport numpy as cnp

ctypedef cnp.int64_t i64

cnp.import_array()


def candidate_pairs(t1, t2, i64 window):
    cdef const i64[::1] a = np.ascontiguousarray(t1, dtype=np.int64)
    cdef const i64[::1] b = np.ascontiguousarray(t2, dtype=np.int64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = b.shape[0]
    cdef Py_ssize_t i, j, lo = 0, total = 0, k = 0
    for i in range(n1):
        while lo < n2 and b[lo] < a[i] - window:
            lo += 1
        j = lo
        while j < n2 and b[j] <= a[i] + window:
            total += 1
            j += 1
    out_i = np.empty(total, dtype=np.int64)
    out_j = np.empty(total, dtype=np.int64)
    out_d = np.empty(total, dtype=np.int64)
    cdef i64[::1] oi = out_i, oj = out_j, od = out_d
    lo = 0
    for i in range(n1):
        while lo < n2 and b[lo] < a[i] - window:
            lo += 1
        j = lo
        while j < n2 and b[j] <= a[i] + window:
            oi[k] = i
            oj[k] = j
            od[k] = a[i] - b[j]
            k += 1
            j += 1
    return out_i, out_j, out_d


def greedy_accept(i, j, Py_ssize_t n1, Py_ssize_t n2):
    cdef const i64[::1] ci = np.ascontiguousarray(i, dtype=np.int64)
    cdef const i64[::1] cj = np.ascontiguousarray(j, dtype=np.int64)
    cdef Py_ssize_t k, m = ci.shape[0]
    used1_arr = np.zeros(n1, dtype=np.uint8)
    used2_arr = np.zeros(n2, dtype=np.uint8)
    keep_arr = np.zeros(m, dtype=np.uint8)
    cdef cnp.uint8_t[::1] used1 = used1_arr, used2 = used2_arr, keep = keep_arr
    for k in range(m):
        if used1[ci[k]] or used2[cj[k]]:
            continue
        used1[ci[k]] = 1
        used2[cj[k]] = 1
        keep[k] = 1
    return keep_arr.view(bool)


def sequential_match(t1, t2, i64 window):
    cdef const i64[::1] a = np.ascontiguousarray(t1, dtype=np.int64)
    cdef const i64[::1] b = np.ascontiguousarray(t2, dtype=np.int64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = b.shape[0]
    cdef Py_ssize_t cap = n1 if n1 < n2 else n2
    out_i = np.empty(cap, dtype=np.int64)
    out_j = np.empty(cap, dtype=np.int64)
    cdef i64[::1] oi = out_i, oj = out_j
    cdef Py_ssize_t i, p = 0, k = 0
    for i in range(n1):
        while p < n2 and b[p] < a[i] - window:
            p += 1
        if p < n2 and b[p] <= a[i] + window:
            oi[k] = i
            oj[k] = p
            k += 1
            p += 1
    return out_i[:k].copy(), out_j[:k].copy()


def diff_histogram(t1, t2, i64 bin_ps, i64 range_ps):
    cdef const i64[::1] a = np.ascontiguousarray(t1, dtype=np.int64)
    cdef const i64[::1] b = np.ascontiguousarray(t2, dtype=np.int64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = b.shape[0]
    cdef i64 half = (2 * range_ps + bin_ps) // (2 * bin_ps)
    counts_arr = np.zeros(2 * half + 1, dtype=np.int64)
    cdef i64[::1] counts = counts_arr
    cdef Py_ssize_t i, j, lo = 0
    cdef i64 d
    for i in range(n1):
        while lo < n2 and b[lo] < a[i] - range_ps:
            lo += 1
        j = lo
        while j < n2 and b[j] <= a[i] + range_ps:
            d = a[i] - b[j]
            counts[(2 * d + bin_ps) // (2 * bin_ps) + half] += 1
            j += 1
    return counts_arr

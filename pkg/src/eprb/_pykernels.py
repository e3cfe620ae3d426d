"""Pure-Python implementations of the time-tag kernels.

Used when the compiled ``_ckernels`` extension is unavailable (or disabled via
``EPRB_PURE_PYTHON=1``).  Signatures and results match the Cython versions
exactly; the test suite runs both and compares.

All time tags are int64 arrays sorted non-decreasing.
"""

import numpy as np


def candidate_pairs(t1, t2, window):
    """All (i, j) with |t1[i] - t2[j]| <= window, ordered by i then j."""
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    lo = np.searchsorted(t2, t1 - window, side="left")
    hi = np.searchsorted(t2, t1 + window, side="right")
    n = hi - lo
    total = int(n.sum())
    i = np.repeat(np.arange(len(t1), dtype=np.int64), n)
    # offset of each candidate inside its row
    starts = np.cumsum(n) - n
    j = np.arange(total, dtype=np.int64) - np.repeat(starts, n) + np.repeat(lo, n)
    d = t1[i] - t2[j]
    return i, j, d


def greedy_accept(i, j, n1, n2):
    """Accept candidates in the given order unless an endpoint is taken."""
    used1 = bytearray(n1)
    used2 = bytearray(n2)
    keep = np.zeros(len(i), dtype=bool)
    for k, (a, b) in enumerate(zip(i.tolist(), j.tolist())):
        if used1[a] or used2[b]:
            continue
        used1[a] = 1
        used2[b] = 1
        keep[k] = True
    return keep


def sequential_match(t1, t2, window):
    t1 = np.asarray(t1, dtype=np.int64).tolist()
    t2 = np.asarray(t2, dtype=np.int64).tolist()
    n2 = len(t2)
    out_i = []
    out_j = []
    p = 0
    for i, t in enumerate(t1):
        while p < n2 and t2[p] < t - window:
            p += 1
        if p < n2 and t2[p] <= t + window:
            out_i.append(i)
            out_j.append(p)
            p += 1
    return np.array(out_i, dtype=np.int64), np.array(out_j, dtype=np.int64)


def diff_histogram(t1, t2, bin_ps, range_ps):
    """Counts of t1 - t2 in bins of width bin_ps centred on multiples of bin_ps.

    Only differences with |d| <= range_ps are counted.  Bin k (stored at index
    k + K) holds k*bin - bin/2 <= d < k*bin + bin/2.
    """
    half = (2 * range_ps + bin_ps) // (2 * bin_ps)
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    t1l = np.asarray(t1, dtype=np.int64).tolist()
    t2l = np.asarray(t2, dtype=np.int64).tolist()
    n2 = len(t2l)
    lo = 0
    for t in t1l:
        while lo < n2 and t2l[lo] < t - range_ps:
            lo += 1
        j = lo
        while j < n2 and t2l[j] <= t + range_ps:
            d = t - t2l[j]
            counts[(2 * d + bin_ps) // (2 * bin_ps) + half] += 1
            j += 1
    return counts

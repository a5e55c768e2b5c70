# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled backend for the placement-search hot kernels.

Bit-for-bit twin of _kernels_py: same curve-evaluation branches, same
expression order in the interpolation arithmetic, same ascending-step
accumulation, same first-wins tie-breaking in the pair scan. Compiled with
-ffp-contract=off so no FMA contraction can perturb the float results.
"""

from libc.stdint cimport int64_t
from libc.math cimport INFINITY

import numpy as np

BACKEND = "cython"


cdef double _eval_one(const int64_t* xs, const double* ys, Py_ssize_t size,
                      int64_t dense_limit, int64_t n) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = size, mid, idx
    cdef int64_t x0, x1
    cdef double y0, y1
    if n <= 0:
        return 0.0
    while lo < hi:
        mid = (lo + hi) // 2
        if xs[mid] < n:
            lo = mid + 1
        else:
            hi = mid
    idx = lo
    if idx < size and xs[idx] == n:
        return ys[idx]
    if n <= dense_limit:
        return ys[idx]
    if idx == size:
        if size == 1:
            x0 = 0
            y0 = 0.0
        else:
            x0 = xs[size - 2]
            y0 = ys[size - 2]
        x1 = xs[size - 1]
        y1 = ys[size - 1]
    elif idx == 0:
        x0 = 0
        y0 = 0.0
        x1 = xs[0]
        y1 = ys[0]
    else:
        x0 = xs[idx - 1]
        y0 = ys[idx - 1]
        x1 = xs[idx]
        y1 = ys[idx]
    return y0 + (y1 - y0) * <double>(n - x0) / <double>(x1 - x0)


def eval_curve_packed(const int64_t[::1] xs_flat, const double[::1] ys_flat,
                      const int64_t[::1] offsets, const int64_t[::1] dense_limits,
                      Py_ssize_t gpu, counts):
    """Evaluate GPU `gpu`'s curve from the packed profile arrays."""
    ns_arr = np.ascontiguousarray(np.asarray(counts, dtype=np.int64).ravel())
    out_arr = np.empty(ns_arr.shape[0], dtype=np.float64)
    cdef const int64_t[::1] ns = ns_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t start = offsets[gpu]
    cdef Py_ssize_t size = offsets[gpu + 1] - start
    cdef int64_t limit = dense_limits[gpu]
    cdef Py_ssize_t k
    with nogil:
        for k in range(ns.shape[0]):
            out[k] = _eval_one(&xs_flat[start], &ys_flat[start], size, limit, ns[k])
    return out_arr.reshape(np.shape(counts))


cdef void _fill_pair_other_max(const double[:, ::1] lat, double[:, :, ::1] pother) noexcept nogil:
    cdef Py_ssize_t steps = lat.shape[0], num_gpus = lat.shape[1]
    cdef Py_ssize_t a, b, g, t
    cdef double mx
    for a in range(num_gpus):
        for b in range(num_gpus):
            for t in range(steps):
                mx = -INFINITY
                for g in range(num_gpus):
                    if g != a and g != b and lat[t, g] > mx:
                        mx = lat[t, g]
                pother[a, b, t] = mx


def swap_candidate_score(const int64_t[:, ::1] tokens, const int64_t[::1] assignment,
                         const int64_t[:, ::1] loads, const double[:, ::1] lat,
                         const int64_t[::1] xs_flat, const double[::1] ys_flat,
                         const int64_t[::1] offsets, const int64_t[::1] dense_limits,
                         Py_ssize_t i, Py_ssize_t j):
    """Total score after swapping experts i and j, from cached loads/latencies."""
    cdef Py_ssize_t steps = tokens.shape[0], num_gpus = lat.shape[1]
    cdef Py_ssize_t a = assignment[i], b = assignment[j]
    cdef Py_ssize_t t, g
    cdef double total = 0.0, la, lb, m
    cdef Py_ssize_t sa = offsets[a], sb = offsets[b]
    cdef Py_ssize_t na = offsets[a + 1] - sa, nb = offsets[b + 1] - sb
    with nogil:
        for t in range(steps):
            la = _eval_one(&xs_flat[sa], &ys_flat[sa], na, dense_limits[a],
                           loads[t, a] - tokens[t, i] + tokens[t, j])
            lb = _eval_one(&xs_flat[sb], &ys_flat[sb], nb, dense_limits[b],
                           loads[t, b] - tokens[t, j] + tokens[t, i])
            m = -INFINITY
            for g in range(num_gpus):
                if g != a and g != b and lat[t, g] > m:
                    m = lat[t, g]
            if la > m:
                m = la
            if lb > m:
                m = lb
            total = total + m
    return float(total)


def best_swap(const int64_t[:, ::1] tokens, const int64_t[::1] assignment,
              const int64_t[:, ::1] loads, const double[:, ::1] lat,
              const int64_t[::1] xs_flat, const double[::1] ys_flat,
              const int64_t[::1] offsets, const int64_t[::1] dense_limits):
    """Scan all cross-GPU expert pairs; return (found, i, j, candidate_score)."""
    cdef Py_ssize_t steps = tokens.shape[0], num_experts = tokens.shape[1]
    cdef Py_ssize_t num_gpus = loads.shape[1]
    pother_arr = np.empty((num_gpus, num_gpus, steps), dtype=np.float64)
    cdef double[:, :, ::1] pother = pother_arr
    cdef Py_ssize_t i, j, t, a, b
    cdef Py_ssize_t best_i = -1, best_j = -1
    cdef double best = INFINITY, cand, la, lb, m
    with nogil:
        _fill_pair_other_max(lat, pother)
        for i in range(num_experts):
            a = assignment[i]
            for j in range(i + 1, num_experts):
                b = assignment[j]
                if b == a:
                    continue
                cand = 0.0
                for t in range(steps):
                    la = _eval_one(&xs_flat[offsets[a]], &ys_flat[offsets[a]],
                                   offsets[a + 1] - offsets[a], dense_limits[a],
                                   loads[t, a] - tokens[t, i] + tokens[t, j])
                    lb = _eval_one(&xs_flat[offsets[b]], &ys_flat[offsets[b]],
                                   offsets[b + 1] - offsets[b], dense_limits[b],
                                   loads[t, b] - tokens[t, j] + tokens[t, i])
                    m = pother[a, b, t]
                    if la > m:
                        m = la
                    if lb > m:
                        m = lb
                    cand = cand + m
                if cand < best:
                    best = cand
                    best_i = i
                    best_j = j
    if best_i < 0:
        return False, -1, -1, float("inf")
    return True, int(best_i), int(best_j), float(best)

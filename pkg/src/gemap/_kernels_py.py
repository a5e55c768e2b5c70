"""Pure-numpy backend for the placement-search hot kernels.

The swap scan evaluates every cross-GPU expert pair by adjusting only the two
affected GPUs' loads against cached per-step latencies (incremental-delta
scoring). The compiled backend in _kernels.pyx mirrors this arithmetic
operation for operation; both must return bit-identical results, which the
test suite enforces. Candidate totals are accumulated over steps in ascending
step order, never reassociated.
"""

from __future__ import annotations

import numpy as np

from .profiles import eval_curve_many

BACKEND = "python"


def eval_curve_packed(xs_flat, ys_flat, offsets, dense_limits, gpu, counts):
    """Evaluate GPU `gpu`'s curve from the packed profile arrays."""
    lo, hi = int(offsets[gpu]), int(offsets[gpu + 1])
    return eval_curve_many(xs_flat[lo:hi], ys_flat[lo:hi], int(dense_limits[gpu]), counts)


def _pair_other_max(lat: np.ndarray) -> np.ndarray:
    """pother[a, b, t] = max latency among GPUs other than a and b (-inf if none)."""
    num_gpus = lat.shape[1]
    steps = lat.shape[0]
    pother = np.full((num_gpus, num_gpus, steps), -np.inf)
    for a in range(num_gpus):
        for b in range(num_gpus):
            mask = np.ones(num_gpus, dtype=bool)
            mask[a] = False
            mask[b] = False
            if mask.any():
                pother[a, b] = lat[:, mask].max(axis=1)
    return pother


def swap_candidate_score(tokens, assignment, loads, lat, xs_flat, ys_flat, offsets, dense_limits, i, j):
    """Total score after swapping experts i and j, from cached loads/latencies."""
    a = int(assignment[i])
    b = int(assignment[j])
    new_a = loads[:, a] - tokens[:, i] + tokens[:, j]
    new_b = loads[:, b] - tokens[:, j] + tokens[:, i]
    lat_a = eval_curve_packed(xs_flat, ys_flat, offsets, dense_limits, a, new_a)
    lat_b = eval_curve_packed(xs_flat, ys_flat, offsets, dense_limits, b, new_b)
    num_gpus = lat.shape[1]
    mask = np.ones(num_gpus, dtype=bool)
    mask[a] = False
    mask[b] = False
    if mask.any():
        other = lat[:, mask].max(axis=1)
    else:
        other = np.full(lat.shape[0], -np.inf)
    step_cost = np.maximum(np.maximum(lat_a, lat_b), other)
    total = 0.0
    for t in range(step_cost.shape[0]):
        total = total + step_cost[t]
    return float(total)


def best_swap(tokens, assignment, loads, lat, xs_flat, ys_flat, offsets, dense_limits):
    """Scan all cross-GPU expert pairs; return (found, i, j, candidate_score).

    Ties on the candidate score resolve to the first pair in (i, j)
    lexicographic order, matching the compiled backend's scan order.
    """
    steps, num_experts = tokens.shape
    num_gpus = loads.shape[1]
    pother = _pair_other_max(lat)
    by_gpu = [np.flatnonzero(assignment == g) for g in range(num_gpus)]
    wo = loads[:, assignment] - tokens  # load of expert i's GPU without i

    cand = np.zeros((num_experts, num_experts))
    row_gpu = np.asarray(assignment, dtype=np.int64)
    for t in range(steps):
        new_load = np.empty((num_experts, num_experts), dtype=np.float64)
        for g in range(num_gpus):
            rows = by_gpu[g]
            if rows.size == 0:
                continue
            counts = wo[t, rows][:, None] + tokens[t][None, :]
            new_load[rows, :] = eval_curve_packed(xs_flat, ys_flat, offsets, dense_limits, g, counts)
        other = pother[row_gpu[:, None], row_gpu[None, :], t]
        cand += np.maximum(np.maximum(new_load, new_load.T), other)

    valid = np.zeros((num_experts, num_experts), dtype=bool)
    valid[np.triu_indices(num_experts, k=1)] = True
    valid &= row_gpu[:, None] != row_gpu[None, :]
    if not valid.any():
        return False, -1, -1, float("inf")
    masked = np.where(valid, cand, np.inf)
    flat = int(np.argmin(masked))  # first occurrence wins on ties
    i, j = divmod(flat, num_experts)
    return True, int(i), int(j), float(masked[i, j])

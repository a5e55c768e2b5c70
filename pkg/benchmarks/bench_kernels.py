#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Builds a realistic instance (128 experts, 4 GPUs, 16-step trace), times the
hot operations on each available backend, and verifies the backends agree
bit for bit on every result they produce.

Usage: python benchmarks/bench_kernels.py [--experts N] [--gpus G] [--repeat R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import gemap
from gemap import kernels
from gemap.search import _Instance, _refine_assignment


def build_instance(num_experts: int, num_gpus: int, steps: int, seed: int):
    spec = gemap.SyntheticTraceSpec(
        num_experts=num_experts,
        num_steps=steps,
        tokens_per_step=64 * num_experts,
        consistent_experts=tuple(range(0, num_experts, max(1, num_experts // 5)))[:5],
        consistent_probability=0.85,
        temporal_groups=(gemap.TemporalGroup((1, 3), 0.17, 3.0),),
        rng_seed=seed,
    )
    trace = gemap.generate_trace(spec)
    profile = gemap.generate_profile(
        gemap.VariabilitySetupSpec(
            num_gpus=num_gpus, setup="moderate", tile_size=64, max_tokens=64 * num_experts, rng_seed=seed
        )
    )
    return trace, profile


def time_op(fn, repeat: int):
    best = float("inf")
    result = None
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--experts", type=int, default=128)
    parser.add_argument("--gpus", type=int, default=4)
    parser.add_argument("--steps", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    trace, profile = build_instance(args.experts, args.gpus, args.steps, args.seed)
    inst = _Instance(trace, profile)
    assignment = gemap.linear_mapping(args.experts, args.gpus).assignment.astype(np.int64)
    loads = inst.load_matrix(assignment)
    counts = np.tile(loads[:, 0], 64)
    config = gemap.SearchConfig(restarts=4, rng_seed=args.seed)

    names = kernels.available_backends()
    print(f"instance: E={args.experts} G={args.gpus} T={args.steps}; backends: {', '.join(names)}")
    print(f"{'operation':<24}" + "".join(f"{name:>14}" for name in names) + f"{'speedup':>10}")

    rows = {
        "curve eval (1k points)": lambda be: be.eval_curve_packed(*inst.curve_args(), 0, counts),
        "best-swap scan": lambda be: be.best_swap(
            inst.tokens, assignment, loads, inst.latency_matrix(be, loads), *inst.curve_args()
        ),
        "refine to convergence": lambda be: _refine_assignment(inst, be, assignment.copy(), config)[1],
    }
    for label, op in rows.items():
        timings = []
        results = []
        for name in names:
            backend = kernels.get_backend(name)
            elapsed, result = time_op(lambda: op(backend), args.repeat)
            timings.append(elapsed)
            results.append(result)
        for other in results[1:]:
            first = results[0]
            if isinstance(first, np.ndarray):
                assert np.array_equal(first, other), f"{label}: backends disagree"
            else:
                assert first == other, f"{label}: backends disagree"
        speedup = timings[0] / timings[-1] if len(timings) > 1 else 1.0
        cells = "".join(f"{t * 1e3:>12.3f}ms" for t in timings)
        print(f"{label:<24}{cells}{speedup:>9.1f}x")

    print("results identical across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

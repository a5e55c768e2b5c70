from __future__ import annotations

import bisect
import itertools
from pathlib import Path

import numpy as np
import pytest

from gemap import CostCurve, ExpertMapping, ExpertTrace, VariabilityProfile

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


# ---------------------------------------------------------------------------
# Independent reference evaluator. This is the oracle for the production
# scorer: a plain double loop with its own bisect-based curve lookup, sharing
# no code with the package internals.


def reference_curve_cost(samples: list[tuple[int, float]], dense_limit: int, n: int) -> float:
    if n <= 0:
        return 0.0
    xs = [s[0] for s in samples]
    ys = [s[1] for s in samples]
    idx = bisect.bisect_left(xs, n)
    if idx < len(xs) and xs[idx] == n:
        return ys[idx]
    if n <= dense_limit:
        return ys[idx]
    if idx == len(xs):
        if len(xs) == 1:
            x0, y0 = 0, 0.0
        else:
            x0, y0 = xs[-2], ys[-2]
        x1, y1 = xs[-1], ys[-1]
    elif idx == 0:
        x0, y0 = 0, 0.0
        x1, y1 = xs[0], ys[0]
    else:
        x0, y0 = xs[idx - 1], ys[idx - 1]
        x1, y1 = xs[idx], ys[idx]
    return y0 + (y1 - y0) * (n - x0) / (x1 - x0)


def reference_score(trace: ExpertTrace, profile: VariabilityProfile, assignment) -> float:
    total = 0.0
    for t in range(trace.num_steps):
        worst = 0.0
        for g in range(profile.num_gpus):
            load = 0
            for e in range(trace.num_experts):
                if assignment[e] == g:
                    load += int(trace.tokens[t, e])
            curve = profile.curves[g]
            samples = list(zip(curve.token_counts.tolist(), curve.latencies.tolist()))
            cost = reference_curve_cost(samples, curve.dense_limit, load)
            if cost > worst:
                worst = cost
        total = total + worst
    return total


def enumerate_balanced_optimum(trace: ExpertTrace, profile: VariabilityProfile) -> tuple[float, tuple[int, ...]]:
    """Brute force over every balanced two-GPU assignment using the reference
    evaluator; only meant for small instances."""
    num_experts = trace.num_experts
    assert profile.num_gpus == 2
    half = num_experts // 2
    best_score = None
    best_assignment = None
    for chosen in itertools.combinations(range(num_experts), half):
        assignment = [1] * num_experts
        for e in chosen:
            assignment[e] = 0
        score = reference_score(trace, profile, assignment)
        if best_score is None or score < best_score:
            best_score = score
            best_assignment = tuple(assignment)
    return best_score, best_assignment


# ---------------------------------------------------------------------------
# Instance builders


def linear_cost_curve(max_tokens: int = 4096) -> CostCurve:
    """Curve with cost(n) = n exactly for 0 <= n <= max_tokens (and beyond,
    via extrapolation): two samples, sparse everywhere."""
    return CostCurve.from_pairs([(1, 1.0), (max_tokens, float(max_tokens))], tile_size=1, dense_limit=0)


def identical_linear_profile(num_gpus: int, max_tokens: int = 4096) -> VariabilityProfile:
    return VariabilityProfile(tuple(linear_cost_curve(max_tokens) for _ in range(num_gpus)), label="unit-slope")


def random_staircase_profile(rng: np.random.Generator, num_gpus: int, tile: int = 16, tiles: int = 32) -> VariabilityProfile:
    """Strictly increasing per-tile lookup tables covering tiles*tile tokens."""
    curves = []
    xs = np.arange(1, tiles + 1, dtype=np.int64) * tile
    for _ in range(num_gpus):
        ys = np.cumsum(rng.uniform(0.05, 0.5, tiles))
        curves.append(CostCurve(xs, ys, tile, int(xs[-1])))
    return VariabilityProfile(tuple(curves), label="random-staircase")


def random_trace(rng: np.random.Generator, num_steps: int, num_experts: int, high: int = 50) -> ExpertTrace:
    tokens = rng.integers(0, high, (num_steps, num_experts))
    if not tokens.any():
        tokens[0, 0] = 1
    return ExpertTrace(tokens)


def balanced_random_mapping(rng: np.random.Generator, num_experts: int, num_gpus: int) -> ExpertMapping:
    assignment = np.repeat(np.arange(num_gpus, dtype=np.int64), num_experts // num_gpus)
    rng.shuffle(assignment)
    return ExpertMapping(assignment, num_gpus)

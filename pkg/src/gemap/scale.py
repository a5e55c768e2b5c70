"""Monte-Carlo model of performance variability at fleet scale.

Draw N per-GPU throughputs from a distribution and measure the expected
(fastest - slowest) / fastest gap. All deployment sizes share one stream of
draws (each size-N sample is a prefix of the size-N' sample for N' > N), so
the gap is non-decreasing in N on every sample path, making the growth-with-
scale claim exact rather than statistical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

KINDS = ("empirical", "uniform", "normal", "two_point")

_POSITIVE_FLOOR = 1e-12  # normal draws are clamped here to keep gaps defined


@dataclass(frozen=True)
class ThroughputDistribution:
    """Normalized per-GPU throughput distribution (nominal = 1.0)."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        p = self.params
        if self.kind == "uniform":
            if len(p) != 2 or not 0.0 < p[0] <= p[1]:
                raise ValidationError("uniform needs 0 < lo <= hi")
        elif self.kind == "normal":
            if len(p) != 2 or p[0] <= 0.0 or p[1] < 0.0:
                raise ValidationError("normal needs mean > 0 and stddev >= 0")
        elif self.kind == "two_point":
            if len(p) != 3 or p[0] <= 0.0 or p[2] <= 0.0 or not 0.0 <= p[1] <= 1.0:
                raise ValidationError("two_point needs positive values and probability in [0, 1]")
        else:
            if len(p) == 0:
                raise ValidationError("empirical needs at least one throughput value")
            if any(v <= 0.0 for v in p):
                raise ValidationError("empirical throughputs must be strictly positive")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ThroughputDistribution":
        return cls("uniform", (lo, hi))

    @classmethod
    def normal(cls, mean: float, stddev: float) -> "ThroughputDistribution":
        return cls("normal", (mean, stddev))

    @classmethod
    def two_point(cls, v1: float, p: float, v2: float) -> "ThroughputDistribution":
        return cls("two_point", (v1, p, v2))

    @classmethod
    def empirical(cls, values) -> "ThroughputDistribution":
        return cls("empirical", tuple(values))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], shape)
        if self.kind == "normal":
            draws = rng.normal(self.params[0], self.params[1], shape)
            return np.maximum(draws, _POSITIVE_FLOOR)
        if self.kind == "two_point":
            v1, p, v2 = self.params
            return np.where(rng.random(shape) < p, v1, v2)
        return rng.choice(np.asarray(self.params), size=shape)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


@dataclass(frozen=True)
class ScaleStudyResult:
    sizes: tuple[int, ...]
    expected_gap: tuple[float, ...]
    num_samples: int
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "expected_gap": list(self.expected_gap),
            "num_samples": self.num_samples,
            "rng_seed": self.rng_seed,
        }

    def csv_rows(self) -> list[tuple[int, float]]:
        return list(zip(self.sizes, self.expected_gap))


def run_study(
    dist: ThroughputDistribution, sizes, samples: int, seed: int
) -> ScaleStudyResult:
    """Expected slowest-to-fastest gap per deployment size, common random numbers."""
    sizes = tuple(int(n) for n in sizes)
    if len(sizes) == 0:
        raise ValidationError("sizes must be non-empty")
    if any(n < 1 for n in sizes):
        raise ValidationError("every size must be >= 1")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError("sizes must be strictly increasing")
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    draws = dist.sample(rng, (samples, max(sizes)))
    gaps = []
    for n in sizes:
        prefix = draws[:, :n]
        fastest = prefix.max(axis=1)
        slowest = prefix.min(axis=1)
        gaps.append(float(((fastest - slowest) / fastest).mean()))
    for a, b in zip(gaps, gaps[1:]):
        if b < a:  # impossible under common random numbers; fail loudly if so
            raise AssertionError(f"gap decreased from {a} to {b}")
    return ScaleStudyResult(sizes, tuple(gaps), samples, seed)


def expected_gap(dist: ThroughputDistribution, n: int, samples: int, seed: int) -> float:
    """Mean over Monte-Carlo draws of (max - min) / max across n GPUs."""
    return run_study(dist, (n,), samples, seed).expected_gap[0]

"""Per-GPU latency cost curves with tile-aware sampling.

A cost curve maps a token count to the latency of one MoE layer on one GPU.
MoE kernels batch tokens into fixed-size tiles, so latency is flat inside a
tile and jumps at tile boundaries. Curves are therefore sampled densely at
tile boundaries near the origin (staircase/ceiling lookup) and sparsely
further out (linear interpolation), which keeps profiles small without losing
the staircase where it matters.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import readonly
from .errors import ParseError, ValidationError

# Dense region length and sparse sampling stride, in tiles.
DENSE_TILES_DEFAULT = 32
SPARSE_STRIDE_TILES = 16

# Measured latencies are noisy: dips below the running maximum up to this
# relative tolerance are clamped; anything worse is rejected.
DIP_TOLERANCE = 0.02

# Search cap for equal-latency load matching on curves with flat tails.
_MAX_TOKENS_SEARCH = 1 << 40

SETUPS = ("low", "moderate", "high", "explicit")

# Characterized slowest/fastest throughput relative to the fleet average.
SLOW_FACTOR = 0.88
FAST_FACTOR = 1.11


@dataclass(frozen=True, eq=False)
class CostCurve:
    """Sampled token-count -> latency (ms) curve for one GPU.

    token_counts must be strictly increasing with the first sample at >= 1.
    Latencies are positive and non-decreasing (small measurement dips are
    clamped up to the running maximum at construction). dense_limit marks the
    end of the tile-granular region: at or below it, lookups use the
    staircase rule (latency of the nearest sample at or above n); beyond it,
    lookups interpolate linearly between bracketing samples. To keep the
    curve monotone across that boundary, dense_limit must be 0 or coincide
    with a sampled token count.
    """

    token_counts: np.ndarray
    latencies: np.ndarray
    tile_size: int
    dense_limit: int

    def __post_init__(self):
        xs = np.asarray(self.token_counts, dtype=np.int64).copy()
        ys = np.asarray(self.latencies, dtype=np.float64).copy()
        if xs.ndim != 1 or ys.ndim != 1 or xs.size != ys.size:
            raise ValidationError("token_counts and latencies must be 1-d and equal length")
        if xs.size == 0:
            raise ValidationError("curve needs at least one sample")
        if xs[0] < 1:
            raise ValidationError("first sample must be at token count >= 1")
        if np.any(np.diff(xs) <= 0):
            raise ValidationError("token counts must be strictly increasing")
        if np.any(ys <= 0.0):
            raise ValidationError("latencies must be strictly positive")
        if self.tile_size < 1:
            raise ValidationError("tile_size must be >= 1")
        running = ys[0]
        for k in range(1, ys.size):
            if ys[k] < running * (1.0 - DIP_TOLERANCE):
                raise ValidationError(
                    f"latency at {int(xs[k])} tokens dips more than {DIP_TOLERANCE:.0%} below an earlier sample"
                )
            if ys[k] < running:
                ys[k] = running
            else:
                running = ys[k]
        if self.dense_limit != 0 and int(self.dense_limit) not in xs:
            raise ValidationError("dense_limit must be 0 or one of the sampled token counts")
        object.__setattr__(self, "token_counts", readonly(xs))
        object.__setattr__(self, "latencies", readonly(ys))
        object.__setattr__(self, "dense_limit", int(self.dense_limit))
        object.__setattr__(self, "tile_size", int(self.tile_size))

    @classmethod
    def from_pairs(cls, samples, tile_size: int, dense_limit: int) -> "CostCurve":
        xs = [s[0] for s in samples]
        ys = [s[1] for s in samples]
        return cls(np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.float64), tile_size, dense_limit)

    @property
    def num_samples(self) -> int:
        return int(self.token_counts.size)

    @property
    def max_sampled_tokens(self) -> int:
        return int(self.token_counts[-1])

    def cost(self, n: int) -> float:
        """Latency in ms to process n tokens; total over n >= 0.

        n = 0 costs nothing. In the dense region the lookup is the staircase
        ceiling rule; in the sparse region it interpolates between bracketing
        samples (from the origin below the first sample) and extrapolates
        linearly from the last two samples beyond the end.
        """
        if n <= 0:
            return 0.0
        xs = self.token_counts
        ys = self.latencies
        idx = bisect.bisect_left(xs, n)
        if idx < xs.size and xs[idx] == n:
            return float(ys[idx])
        if n <= self.dense_limit:
            return float(ys[idx])
        if idx == xs.size:
            if xs.size == 1:
                x0, y0 = 0, 0.0
            else:
                x0, y0 = int(xs[-2]), float(ys[-2])
            x1, y1 = int(xs[-1]), float(ys[-1])
        elif idx == 0:
            x0, y0 = 0, 0.0
            x1, y1 = int(xs[0]), float(ys[0])
        else:
            x0, y0 = int(xs[idx - 1]), float(ys[idx - 1])
            x1, y1 = int(xs[idx]), float(ys[idx])
        return y0 + (y1 - y0) * (n - x0) / (x1 - x0)

    def cost_many(self, counts) -> np.ndarray:
        return eval_curve_many(self.token_counts, self.latencies, self.dense_limit, counts)

    def to_dict(self) -> dict:
        return {
            "dense_limit": self.dense_limit,
            "samples": [[int(x), float(y)] for x, y in zip(self.token_counts, self.latencies)],
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, CostCurve):
            return NotImplemented
        return (
            self.tile_size == other.tile_size
            and self.dense_limit == other.dense_limit
            and bool(np.array_equal(self.token_counts, other.token_counts))
            and bool(np.array_equal(self.latencies, other.latencies))
        )


def eval_curve_many(token_counts: np.ndarray, latencies: np.ndarray, dense_limit: int, counts) -> np.ndarray:
    """Vectorized curve evaluation; identical semantics to CostCurve.cost."""
    xs = np.asarray(token_counts, dtype=np.int64)
    ys = np.asarray(latencies, dtype=np.float64)
    ns = np.asarray(counts, dtype=np.int64)
    shape = ns.shape
    ns = ns.ravel()
    size = xs.size

    idx = np.searchsorted(xs, ns, side="left")
    in_range = idx < size
    safe_idx = np.minimum(idx, size - 1)
    hit = in_range & (xs[safe_idx] == ns)
    dense = ns <= dense_limit

    lo = idx - 1
    hi = idx.copy()
    extrap = idx == size
    if size >= 2:
        lo = np.where(extrap, size - 2, lo)
        hi = np.where(extrap, size - 1, hi)
    else:
        lo = np.where(extrap, -1, lo)
        hi = np.where(extrap, 0, hi)
    below = lo < 0
    x0 = np.where(below, 0, xs[np.maximum(lo, 0)])
    y0 = np.where(below, 0.0, ys[np.maximum(lo, 0)])
    x1 = xs[hi]
    y1 = ys[hi]
    interp = y0 + (y1 - y0) * (ns - x0) / (x1 - x0)

    out = np.where(hit | dense, ys[safe_idx], interp)
    out[ns <= 0] = 0.0
    return out.reshape(shape)


@dataclass(frozen=True, eq=False)
class VariabilityProfile:
    """One cost curve per GPU, all sampled at the same tile size."""

    curves: tuple[CostCurve, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if len(self.curves) < 1:
            raise ValidationError("profile needs at least one GPU curve")
        tiles = {c.tile_size for c in self.curves}
        if len(tiles) != 1:
            raise ValidationError(f"curves disagree on tile size: {sorted(tiles)}")

    @property
    def num_gpus(self) -> int:
        return len(self.curves)

    @property
    def tile_size(self) -> int:
        return self.curves[0].tile_size

    def __eq__(self, other) -> bool:
        if not isinstance(other, VariabilityProfile):
            return NotImplemented
        return self.label == other.label and self.curves == other.curves


@dataclass(frozen=True)
class VariabilitySetupSpec:
    """Parameters for synthesizing a profile for an emulated GPU fleet.

    Per-tile latency for GPU g with speed factor s is
    fixed_overhead + base_latency * ceil(n / tile_size) / s. The high setup
    makes GPU 0 the single straggler at factor 0.88; moderate draws factors
    uniformly from [0.88, 1.11] with the given seed; low is a uniform fleet;
    explicit uses the provided factors.
    """

    num_gpus: int
    setup: str = "low"
    speed_factors: tuple[float, ...] | None = None
    base_latency: float = 1.0
    fixed_overhead: float = 0.0
    tile_size: int = 64
    max_tokens: int = 4096
    dense_tiles: int = DENSE_TILES_DEFAULT
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_gpus < 1:
            raise ValidationError("num_gpus must be >= 1")
        if self.setup not in SETUPS:
            raise ValidationError(f"setup must be one of {SETUPS}, got {self.setup!r}")
        if self.speed_factors is not None:
            object.__setattr__(self, "speed_factors", tuple(float(f) for f in self.speed_factors))
        if self.setup == "explicit":
            if self.speed_factors is None or len(self.speed_factors) != self.num_gpus:
                raise ValidationError("explicit setup requires one speed factor per GPU")
        elif self.speed_factors is not None:
            raise ValidationError(f"{self.setup!r} setup does not take explicit speed factors")
        if self.speed_factors is not None and any(f <= 0.0 for f in self.speed_factors):
            raise ValidationError("speed factors must be strictly positive")
        if self.base_latency <= 0.0 or self.fixed_overhead < 0.0:
            raise ValidationError("base_latency must be > 0 and fixed_overhead >= 0")
        if self.tile_size < 1:
            raise ValidationError("tile_size must be >= 1")
        if self.max_tokens < self.tile_size:
            raise ValidationError("max_tokens must be at least one tile")
        if self.dense_tiles < 1:
            raise ValidationError("dense_tiles must be >= 1")

    def resolve_speed_factors(self) -> np.ndarray:
        if self.setup == "low":
            return np.ones(self.num_gpus)
        if self.setup == "high":
            factors = np.ones(self.num_gpus)
            factors[0] = SLOW_FACTOR
            return factors
        if self.setup == "moderate":
            rng = np.random.default_rng(self.rng_seed)
            return rng.uniform(SLOW_FACTOR, FAST_FACTOR, self.num_gpus)
        return np.asarray(self.speed_factors, dtype=np.float64)


def generate_profile(spec: VariabilitySetupSpec) -> VariabilityProfile:
    """Synthesize tile-boundary-sampled curves for the spec's fleet."""
    factors = spec.resolve_speed_factors()
    tile = spec.tile_size
    boundaries = _sample_points(tile, spec.dense_tiles, spec.max_tokens)
    dense_limit = boundaries["dense_end"]
    xs = np.asarray(boundaries["points"], dtype=np.int64)
    tiles_per_point = (xs + tile - 1) // tile
    curves = []
    for g in range(spec.num_gpus):
        ys = spec.fixed_overhead + spec.base_latency * tiles_per_point / factors[g]
        curves.append(CostCurve(xs, ys, tile, dense_limit))
    return VariabilityProfile(tuple(curves), label=f"synthetic-{spec.setup}")


def _sample_points(tile: int, dense_tiles: int, max_tokens: int) -> dict:
    last_tile_boundary = ((max_tokens + tile - 1) // tile) * tile
    dense_end = min(dense_tiles * tile, last_tile_boundary)
    points = list(range(tile, dense_end + 1, tile))
    stride = SPARSE_STRIDE_TILES * tile
    x = dense_end + stride
    while x <= max_tokens:
        points.append(x)
        x += stride
    if points[-1] < max_tokens:
        points.append(max_tokens)
    return {"points": points, "dense_end": dense_end}


def equal_latency_load(curve_a: CostCurve, curve_b: CostCurve, n_a: int) -> int:
    """Largest n_b whose cost on curve_b stays within curve_a's cost of n_a.

    This is the proportional-load relationship between a pair of GPUs: a
    faster GPU absorbs more tokens in the time the slower one takes. Found by
    monotone search; saturates at a large cap if curve_b has a flat tail.
    """
    if n_a < 1:
        raise ValidationError("n_a must be >= 1")
    target = curve_a.cost(n_a)
    if curve_b.cost(1) > target:
        return 0
    lo = 1
    hi = 2
    while hi < _MAX_TOKENS_SEARCH and curve_b.cost(hi) <= target:
        lo = hi
        hi *= 2
    if hi >= _MAX_TOKENS_SEARCH:
        return lo
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if curve_b.cost(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# File format


def save_profile(profile: VariabilityProfile, path) -> None:
    payload = {
        "num_gpus": profile.num_gpus,
        "tile_size": profile.tile_size,
        "label": profile.label,
        "curves": [curve.to_dict() for curve in profile.curves],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_profile(path) -> VariabilityProfile:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: expected a JSON object")
    try:
        num_gpus = int(payload["num_gpus"])
        tile_size = int(payload["tile_size"])
        label = str(payload.get("label", ""))
        raw_curves = payload["curves"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing or malformed num_gpus/tile_size/curves") from exc
    if not isinstance(raw_curves, list) or len(raw_curves) != num_gpus:
        found = len(raw_curves) if isinstance(raw_curves, list) else "no"
        raise ValidationError(f"{path}: num_gpus is {num_gpus} but {found} curves present")
    curves = []
    for g, raw in enumerate(raw_curves):
        try:
            dense_limit = int(raw["dense_limit"])
            samples = [(int(x), float(y)) for x, y in raw["samples"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: curve {g}: malformed dense_limit/samples") from exc
        try:
            curves.append(CostCurve.from_pairs(samples, tile_size, dense_limit))
        except ValidationError as exc:
            raise ValidationError(f"{path}: curve {g}: {exc}") from exc
    return VariabilityProfile(tuple(curves), label=label)

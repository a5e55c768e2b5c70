"""Expert-to-GPU mappings, straggler scoring, and trace replay.

The quality of a mapping is the sum over trace steps of the straggler GPU's
latency: each step costs the maximum per-GPU latency for the token loads the
mapping induces, because the layer's synchronization barrier waits for the
slowest GPU. Scores are accumulated in step order in double precision so
reports are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import ordered_sum, readonly
from .errors import DimensionError, ParseError, ValidationError
from .profiles import VariabilityProfile
from .trace import ExpertTrace

PERCENTILES = (50, 90, 95, 99)


@dataclass(frozen=True, eq=False)
class ExpertMapping:
    """Assignment of every expert to exactly one GPU, equal experts per GPU."""

    assignment: np.ndarray
    num_gpus: int

    def __post_init__(self):
        arr = np.asarray(self.assignment, dtype=np.int64).copy()
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError("assignment must be a non-empty 1-d sequence")
        if self.num_gpus < 1:
            raise ValidationError("num_gpus must be >= 1")
        if arr.size % self.num_gpus != 0:
            raise ValidationError(
                f"{arr.size} experts cannot be split evenly across {self.num_gpus} GPUs"
            )
        if np.any(arr < 0) or np.any(arr >= self.num_gpus):
            raise ValidationError("assignment entries must be valid GPU indices")
        per_gpu = arr.size // self.num_gpus
        counts = np.bincount(arr, minlength=self.num_gpus)
        if np.any(counts != per_gpu):
            raise ValidationError(
                f"every GPU must host exactly {per_gpu} experts, got counts {counts.tolist()}"
            )
        object.__setattr__(self, "assignment", readonly(arr))

    @property
    def num_experts(self) -> int:
        return int(self.assignment.size)

    @property
    def experts_per_gpu(self) -> int:
        return self.num_experts // self.num_gpus

    def experts_on(self, gpu: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == gpu)

    def to_dict(self) -> dict:
        return {
            "num_experts": self.num_experts,
            "num_gpus": self.num_gpus,
            "assignment": self.assignment.tolist(),
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpertMapping):
            return NotImplemented
        return self.num_gpus == other.num_gpus and bool(np.array_equal(self.assignment, other.assignment))


@dataclass(frozen=True)
class StepCost:
    """Per-GPU token loads and latencies for one trace step."""

    step: int
    per_gpu_tokens: tuple[int, ...]
    per_gpu_latency: tuple[float, ...]
    straggler_gpu: int
    straggler_latency: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "per_gpu_tokens": list(self.per_gpu_tokens),
            "per_gpu_latency": list(self.per_gpu_latency),
            "straggler_gpu": self.straggler_gpu,
            "straggler_latency": self.straggler_latency,
        }


@dataclass(frozen=True)
class ReplayReport:
    """Full replay of a trace under one mapping."""

    total_score: float
    step_costs: tuple[StepCost, ...]
    mean_step_latency: float
    percentiles: dict[str, float]
    per_gpu_total_tokens: tuple[int, ...]
    per_gpu_busy_time: tuple[float, ...]

    def to_dict(self, include_steps: bool = False) -> dict:
        payload = {
            "total_score": self.total_score,
            "num_steps": len(self.step_costs),
            "mean_step_latency": self.mean_step_latency,
            "percentiles": dict(self.percentiles),
            "per_gpu_total_tokens": list(self.per_gpu_total_tokens),
            "per_gpu_busy_time": list(self.per_gpu_busy_time),
        }
        if include_steps:
            payload["step_costs"] = [sc.to_dict() for sc in self.step_costs]
        return payload


def _check_dimensions(trace: ExpertTrace, profile: VariabilityProfile, mapping: ExpertMapping) -> None:
    if mapping.num_experts != trace.num_experts:
        raise DimensionError(
            f"mapping covers {mapping.num_experts} experts but trace has {trace.num_experts}"
        )
    if mapping.num_gpus != profile.num_gpus:
        raise DimensionError(
            f"mapping targets {mapping.num_gpus} GPUs but profile has {profile.num_gpus}"
        )


def gpu_loads(trace: ExpertTrace, mapping: ExpertMapping, step: int) -> np.ndarray:
    """Token count routed to each GPU at one step under the mapping."""
    if mapping.num_experts != trace.num_experts:
        raise DimensionError(
            f"mapping covers {mapping.num_experts} experts but trace has {trace.num_experts}"
        )
    if not 0 <= step < trace.num_steps:
        raise ValidationError(f"step {step} out of range for {trace.num_steps}-step trace")
    loads = np.zeros(mapping.num_gpus, dtype=np.int64)
    np.add.at(loads, mapping.assignment, trace.tokens[step])
    return loads


def _load_matrix(trace: ExpertTrace, mapping: ExpertMapping) -> np.ndarray:
    loads = np.zeros((trace.num_steps, mapping.num_gpus), dtype=np.int64)
    for g in range(mapping.num_gpus):
        experts = mapping.experts_on(g)
        if experts.size:
            loads[:, g] = trace.tokens[:, experts].sum(axis=1)
    return loads


def _latency_matrix(loads: np.ndarray, profile: VariabilityProfile) -> np.ndarray:
    lat = np.empty(loads.shape, dtype=np.float64)
    for g, curve in enumerate(profile.curves):
        lat[:, g] = curve.cost_many(loads[:, g])
    return lat


def score_mapping(trace: ExpertTrace, profile: VariabilityProfile, mapping: ExpertMapping) -> float:
    """Total straggler latency of the mapping over the whole trace."""
    _check_dimensions(trace, profile, mapping)
    lat = _latency_matrix(_load_matrix(trace, mapping), profile)
    return ordered_sum(lat.max(axis=1))


def replay(trace: ExpertTrace, profile: VariabilityProfile, mapping: ExpertMapping) -> ReplayReport:
    """Replay the trace step by step and report the latency distribution."""
    _check_dimensions(trace, profile, mapping)
    loads = _load_matrix(trace, mapping)
    lat = _latency_matrix(loads, profile)
    step_max = lat.max(axis=1)
    stragglers = lat.argmax(axis=1)  # argmax takes the lowest index on ties

    step_costs = tuple(
        StepCost(
            step=t,
            per_gpu_tokens=tuple(int(v) for v in loads[t]),
            per_gpu_latency=tuple(float(v) for v in lat[t]),
            straggler_gpu=int(stragglers[t]),
            straggler_latency=float(step_max[t]),
        )
        for t in range(trace.num_steps)
    )
    total = ordered_sum(step_max)
    percentiles = {
        f"p{p}": nearest_rank_percentile(step_max, p) for p in PERCENTILES
    }
    return ReplayReport(
        total_score=total,
        step_costs=step_costs,
        mean_step_latency=total / trace.num_steps,
        percentiles=percentiles,
        per_gpu_total_tokens=tuple(int(v) for v in loads.sum(axis=0)),
        per_gpu_busy_time=tuple(ordered_sum(lat[:, g]) for g in range(mapping.num_gpus)),
    )


def nearest_rank_percentile(values, percent: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value, no interpolation."""
    arr = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValidationError("percentile of empty sequence")
    rank = int(np.ceil(percent / 100.0 * arr.size))
    rank = max(rank, 1)
    return float(arr[rank - 1])


# ---------------------------------------------------------------------------
# File format


def save_mapping(mapping: ExpertMapping, path, policy: str | None = None) -> None:
    payload = mapping.to_dict()
    if policy is not None:
        payload["policy"] = policy
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_mapping(path) -> ExpertMapping:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    try:
        num_experts = int(payload["num_experts"])
        num_gpus = int(payload["num_gpus"])
        assignment = payload["assignment"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing or malformed num_experts/num_gpus/assignment") from exc
    if not isinstance(assignment, list) or len(assignment) != num_experts:
        raise ValidationError(f"{path}: assignment length does not match num_experts")
    return ExpertMapping(np.asarray(assignment, dtype=np.int64), num_gpus)

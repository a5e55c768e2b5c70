"""Expert utilization traces: ingestion, statistics, synthetic generation.

A trace is the per-step, per-expert routed-token count matrix observed at the
MoE router. Everything downstream (scoring, search, baselines) consumes this
one structure.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import readonly
from .errors import GenerationError, ParseError, ValidationError

TRACE_CSV_HEADER = ("step", "expert", "tokens")


@dataclass(frozen=True, eq=False)
class ExpertTrace:
    """Non-negative integer token counts, shape (num_steps, num_experts)."""

    tokens: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.tokens)
        if arr.ndim != 2:
            raise ValidationError(f"trace matrix must be 2-d, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"trace needs at least one step and one expert, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.floor(arr)):
                raise ValidationError("token counts must be integers")
        arr = arr.astype(np.int64, copy=True)
        if np.any(arr < 0):
            t, e = np.argwhere(arr < 0)[0]
            raise ValidationError(f"negative token count at step {t}, expert {e}")
        if not np.any(arr > 0):
            raise ValidationError("trace is all zeros")
        object.__setattr__(self, "tokens", readonly(arr))

    @property
    def num_steps(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_experts(self) -> int:
        return self.tokens.shape[1]

    def step_total(self, step: int) -> int:
        return int(self.tokens[step].sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpertTrace):
            return NotImplemented
        return self.tokens.shape == other.tokens.shape and bool(np.array_equal(self.tokens, other.tokens))


@dataclass(frozen=True, eq=False)
class TraceStats:
    """Per-expert utilization statistics derived from one trace.

    mean_utilization sums to 1; active_fraction is the share of steps where
    the expert saw any tokens; correlation is the symmetric matrix of pairwise
    Pearson coefficients over the per-step token series.
    """

    mean_utilization: np.ndarray
    active_fraction: np.ndarray
    correlation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean_utilization", readonly(np.asarray(self.mean_utilization, dtype=np.float64)))
        object.__setattr__(self, "active_fraction", readonly(np.asarray(self.active_fraction, dtype=np.float64)))
        object.__setattr__(self, "correlation", readonly(np.asarray(self.correlation, dtype=np.float64)))

    @property
    def num_experts(self) -> int:
        return self.mean_utilization.shape[0]


def compute_stats(trace: ExpertTrace) -> TraceStats:
    """Mean utilization, activity fraction, and pairwise Pearson correlation.

    A zero-variance series has no measurable linear relationship, so its
    off-diagonal correlation entries are 0 rather than undefined; the diagonal
    is always exactly 1.
    """
    tokens = trace.tokens
    aggregate = tokens.sum(axis=0)
    total = int(aggregate.sum())
    mean_utilization = aggregate / total
    active_fraction = (tokens > 0).sum(axis=0) / trace.num_steps

    dev = tokens - tokens.mean(axis=0)
    norms = np.sqrt((dev * dev).sum(axis=0))
    e = trace.num_experts
    corr = np.eye(e)
    for a in range(e):
        for b in range(a + 1, e):
            denom = norms[a] * norms[b]
            if denom == 0.0:
                value = 0.0
            else:
                value = float(np.dot(dev[:, a], dev[:, b]) / denom)
                value = min(1.0, max(-1.0, value))
            corr[a, b] = value
            corr[b, a] = value
    return TraceStats(mean_utilization, active_fraction, corr)


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True)
class TemporalGroup:
    """Experts that burst together: active jointly with probability
    burst_probability, each member then weighted burst_multiplier x the base
    per-active-expert share."""

    experts: tuple[int, ...]
    burst_probability: float = 0.17
    burst_multiplier: float = 3.0


@dataclass(frozen=True)
class SyntheticTraceSpec:
    num_experts: int
    num_steps: int
    tokens_per_step: int
    consistent_experts: tuple[int, ...] = ()
    consistent_probability: float = 0.85
    temporal_groups: tuple[TemporalGroup, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "consistent_experts", tuple(self.consistent_experts))
        object.__setattr__(
            self,
            "temporal_groups",
            tuple(
                g if isinstance(g, TemporalGroup) else TemporalGroup(tuple(g))
                for g in self.temporal_groups
            ),
        )
        if self.num_experts < 1 or self.num_steps < 1:
            raise ValidationError("num_experts and num_steps must be >= 1")
        if self.tokens_per_step < 1:
            raise ValidationError("tokens_per_step must be >= 1")
        if not 0.0 < self.consistent_probability <= 1.0:
            raise ValidationError("consistent_probability must be in (0, 1]")
        seen: set[int] = set()
        for e in self.consistent_experts:
            if not 0 <= e < self.num_experts:
                raise ValidationError(f"consistent expert {e} out of range")
            if e in seen:
                raise ValidationError(f"expert {e} listed more than once")
            seen.add(e)
        for group in self.temporal_groups:
            if not 0.0 < group.burst_probability <= 1.0:
                raise ValidationError("burst_probability must be in (0, 1]")
            if group.burst_multiplier < 1.0:
                raise ValidationError("burst_multiplier must be >= 1")
            for e in group.experts:
                if not 0 <= e < self.num_experts:
                    raise ValidationError(f"temporal expert {e} out of range")
                if e in seen:
                    raise ValidationError(f"expert {e} listed more than once")
                seen.add(e)

    @property
    def background_experts(self) -> tuple[int, ...]:
        designated = set(self.consistent_experts)
        for group in self.temporal_groups:
            designated.update(group.experts)
        return tuple(e for e in range(self.num_experts) if e not in designated)


def generate_trace(spec: SyntheticTraceSpec) -> ExpertTrace:
    """Generate a trace with consistent and correlated-temporal experts.

    Per step: each consistent expert is independently active with probability
    consistent_probability at weight 1; each temporal group is jointly active
    with its burst probability, members at weight burst_multiplier; background
    experts are always active at weight 1. The step budget is split in
    proportion to weight; the integer residue goes to active experts one token
    each in ascending expert order. Deterministic in rng_seed: one uniform
    draw per consistent expert then one per group, in listed order, per step.
    """
    rng = np.random.default_rng(spec.rng_seed)
    background = list(spec.background_experts)
    tokens = np.zeros((spec.num_steps, spec.num_experts), dtype=np.int64)
    budget = spec.tokens_per_step

    for t in range(spec.num_steps):
        weights = np.zeros(spec.num_experts)
        for e in spec.consistent_experts:
            if rng.random() < spec.consistent_probability:
                weights[e] = 1.0
        for group in spec.temporal_groups:
            if rng.random() < group.burst_probability:
                for e in group.experts:
                    weights[e] = group.burst_multiplier
        weights[background] = 1.0
        total_weight = weights.sum()
        if total_weight == 0.0:
            raise GenerationError(
                f"no active experts at step {t}: add background experts or raise probabilities"
            )
        base = np.floor(weights * budget / total_weight).astype(np.int64)
        active = np.flatnonzero(weights > 0)
        residue = budget - int(base.sum())
        k = 0
        while residue > 0:
            base[active[k % active.size]] += 1
            residue -= 1
            k += 1
        while residue < 0:  # float-rounding guard; not reachable in practice
            base[active[k % active.size]] -= 1
            residue += 1
            k += 1
        tokens[t] = base
    return ExpertTrace(tokens)


# ---------------------------------------------------------------------------
# File formats


def load_trace(path, format: str | None = None) -> ExpertTrace:
    """Load a trace from JSON (canonical) or long-form CSV."""
    path = Path(path)
    fmt = format or _sniff_format(path)
    if fmt == "json":
        return _load_trace_json(path)
    if fmt == "csv":
        return _load_trace_csv(path)
    raise ValidationError(f"unknown trace format {fmt!r}")


def render_trace(trace: ExpertTrace, format: str = "json") -> str:
    if format == "json":
        payload = {
            "num_experts": trace.num_experts,
            "num_steps": trace.num_steps,
            "tokens": trace.tokens.tolist(),
        }
        return json.dumps(payload, indent=2) + "\n"
    if format == "csv":
        # Long form: zero cells omitted. JSON is the lossless round-trip
        # format; CSV dimensions are re-inferred from the largest indices.
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_CSV_HEADER)
        for t, e in np.argwhere(trace.tokens > 0):
            writer.writerow([int(t), int(e), int(trace.tokens[t, e])])
        return buf.getvalue()
    raise ValidationError(f"unknown trace format {format!r}")


def save_trace(trace: ExpertTrace, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _sniff_format(path)
    path.write_text(render_trace(trace, fmt), encoding="utf-8")


def _sniff_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("json", "csv"):
        return suffix
    raise ValidationError(f"cannot infer trace format from {path.name!r}; pass format explicitly")


def _load_trace_json(path: Path) -> ExpertTrace:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: expected a JSON object")
    try:
        num_experts = int(payload["num_experts"])
        num_steps = int(payload["num_steps"])
        rows = payload["tokens"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing or malformed num_experts/num_steps/tokens") from exc
    if not isinstance(rows, list) or len(rows) != num_steps:
        raise ValidationError(f"{path}: expected {num_steps} token rows, found {len(rows) if isinstance(rows, list) else 'none'}")
    for t, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != num_experts:
            raise ValidationError(f"{path}: row {t} has {len(row) if isinstance(row, list) else 'no'} entries, expected {num_experts}")
        for e, value in enumerate(row):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"{path}: token count at step {t}, expert {e} is not an integer")
    return ExpertTrace(np.array(rows, dtype=np.int64))


def _load_trace_csv(path: Path) -> ExpertTrace:
    cells: dict[tuple[int, int], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != TRACE_CSV_HEADER:
            raise ParseError(f"{path}: line 1: expected header 'step,expert,tokens'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                step, expert, count = (int(field) for field in row)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-integer field") from None
            if step < 0 or expert < 0:
                raise ValidationError(f"{path}: line {lineno}: negative step or expert index")
            if count < 0:
                raise ValidationError(f"{path}: line {lineno}: negative token count")
            if (step, expert) in cells:
                raise ParseError(f"{path}: line {lineno}: duplicate (step, expert) pair")
            cells[(step, expert)] = count
    if not cells:
        raise ValidationError(f"{path}: no data rows")
    num_steps = max(step for step, _ in cells) + 1
    num_experts = max(expert for _, expert in cells) + 1
    tokens = np.zeros((num_steps, num_experts), dtype=np.int64)
    for (step, expert), count in cells.items():
        tokens[step, expert] = count
    return ExpertTrace(tokens)

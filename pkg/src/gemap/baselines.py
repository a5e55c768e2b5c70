"""Reference mapping policies: contiguous linear blocks and an
aggregate-load balancer. Both are deliberately blind to GPU variability;
they only look at expert indices or summed token counts."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .mapping import ExpertMapping
from .trace import TraceStats


def linear_mapping(num_experts: int, num_gpus: int) -> ExpertMapping:
    """Contiguous index blocks of num_experts / num_gpus experts per GPU."""
    if num_experts < 1 or num_gpus < 1 or num_experts % num_gpus != 0:
        raise ValidationError(
            f"{num_experts} experts cannot be split into contiguous blocks across {num_gpus} GPUs"
        )
    assignment = np.arange(num_experts, dtype=np.int64) * num_gpus // num_experts
    return ExpertMapping(assignment, num_gpus)


def eplb_mapping(stats: TraceStats, num_gpus: int) -> ExpertMapping:
    """Longest-processing-time balancing of aggregate token counts.

    Experts sorted by aggregate utilization descending (ties: lowest expert
    index first) are placed one by one on the GPU with the smallest running
    aggregate among GPUs with capacity left (ties: lowest GPU index). No
    latency curve is ever consulted.
    """
    num_experts = stats.num_experts
    if num_gpus < 1 or num_experts % num_gpus != 0:
        raise ValidationError(
            f"{num_experts} experts cannot be split evenly across {num_gpus} GPUs"
        )
    capacity = num_experts // num_gpus
    weights = stats.mean_utilization
    order = np.lexsort((np.arange(num_experts), -weights))
    assignment = np.empty(num_experts, dtype=np.int64)
    totals = np.zeros(num_gpus)
    counts = np.zeros(num_gpus, dtype=np.int64)
    for e in order:
        best_gpu = -1
        best_total = np.inf
        for g in range(num_gpus):
            if counts[g] < capacity and totals[g] < best_total:
                best_total = totals[g]
                best_gpu = g
        assignment[e] = best_gpu
        totals[best_gpu] += weights[e]
        counts[best_gpu] += 1
    return ExpertMapping(assignment, num_gpus)

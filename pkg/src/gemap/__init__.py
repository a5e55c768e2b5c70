"""gemap: variability-aware expert-to-GPU mapping for MoE serving.

Scores expert placements against per-GPU token-count-to-latency cost curves,
searches for mappings that minimize the summed straggler latency over a
replayed utilization trace, and compares the result against linear and
aggregate-load-balancing baselines.
"""

__version__ = "0.1.0"

from .baselines import eplb_mapping, linear_mapping
from .errors import (
    DimensionError,
    GemapError,
    GenerationError,
    ParseError,
    ValidationError,
)
from .mapping import (
    ExpertMapping,
    ReplayReport,
    StepCost,
    gpu_loads,
    load_mapping,
    replay,
    save_mapping,
    score_mapping,
)
from .profiles import (
    CostCurve,
    VariabilityProfile,
    VariabilitySetupSpec,
    equal_latency_load,
    generate_profile,
    load_profile,
    save_profile,
)
from .scale import ScaleStudyResult, ThroughputDistribution, expected_gap, run_study
from .search import (
    RestartRecord,
    SearchConfig,
    SearchResult,
    initial_mapping,
    refine,
    search,
)
from .trace import (
    ExpertTrace,
    SyntheticTraceSpec,
    TemporalGroup,
    TraceStats,
    compute_stats,
    generate_trace,
    load_trace,
    save_trace,
)

__all__ = [
    "__version__",
    "CostCurve",
    "DimensionError",
    "ExpertMapping",
    "ExpertTrace",
    "GemapError",
    "GenerationError",
    "ParseError",
    "ReplayReport",
    "RestartRecord",
    "ScaleStudyResult",
    "SearchConfig",
    "SearchResult",
    "StepCost",
    "SyntheticTraceSpec",
    "TemporalGroup",
    "ThroughputDistribution",
    "TraceStats",
    "ValidationError",
    "VariabilityProfile",
    "VariabilitySetupSpec",
    "compute_stats",
    "eplb_mapping",
    "equal_latency_load",
    "expected_gap",
    "generate_profile",
    "generate_trace",
    "gpu_loads",
    "initial_mapping",
    "linear_mapping",
    "load_mapping",
    "load_profile",
    "load_trace",
    "refine",
    "replay",
    "run_study",
    "save_mapping",
    "save_profile",
    "save_trace",
    "score_mapping",
    "search",
]

"""Command-line interface.

Commands: gen-trace, gen-profile, optimize, score, replay, compare,
baseline {linear|eplb}, scale-study, multi-layer, stats.

Exit codes: 0 success, 1 runtime failure, 2 input or validation error.
Machine-readable outputs are byte-stable for a fixed seed: volatile fields
(wall-clock duration) are only emitted with --verbose, and randomized
commands that are not given a seed pick one and print it on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .baselines import eplb_mapping, linear_mapping
from .errors import GemapError
from .mapping import load_mapping, replay, save_mapping, score_mapping
from .profiles import (
    DENSE_TILES_DEFAULT,
    VariabilitySetupSpec,
    generate_profile,
    load_profile,
    save_profile,
)
from .scale import ThroughputDistribution, run_study
from .search import SearchConfig, search
from .trace import (
    SyntheticTraceSpec,
    TemporalGroup,
    compute_stats,
    generate_trace,
    load_trace,
    render_trace,
    save_trace,
)

DEFAULT_TRACE_STEPS = 16  # trace window length that captures both expert kinds


class _CliError(Exception):
    """Usage-level error: reported and mapped to exit code 2."""


# ---------------------------------------------------------------------------
# Small helpers


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise _CliError(f"{what}: expected comma-separated integers, got {text!r}") from None


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise _CliError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _parse_temporal_group(text: str) -> TemporalGroup:
    """Parse 'i,j,...[:burst_probability[:burst_multiplier]]'."""
    parts = text.split(":")
    experts = _parse_int_list(parts[0], "--temporal")
    if not experts:
        raise _CliError("--temporal: group needs at least one expert index")
    try:
        prob = float(parts[1]) if len(parts) > 1 and parts[1] else 0.17
        mult = float(parts[2]) if len(parts) > 2 and parts[2] else 3.0
    except ValueError:
        raise _CliError(f"--temporal: malformed group spec {text!r}") from None
    if len(parts) > 3:
        raise _CliError(f"--temporal: malformed group spec {text!r}")
    return TemporalGroup(experts, prob, mult)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    seed = secrets.randbelow(2**31)
    print(f"gemap: no --seed given, using seed {seed}", file=sys.stderr)
    return seed


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _info(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _manifest(args, command: str, inputs: dict, config: dict, seed: int | None, started: float | None) -> dict:
    manifest = {
        "command": command,
        "tool": "gemap",
        "version": __version__,
        "inputs": inputs,
        "config": config,
    }
    if seed is not None:
        manifest["seed"] = seed
    if args.verbose and started is not None:
        manifest["duration_ms"] = int((time.perf_counter() - started) * 1000)
    return manifest


def _search_config(args, seed: int) -> SearchConfig:
    return SearchConfig(
        restarts=args.restarts,
        noise_fraction=args.noise,
        convergence_threshold=args.threshold,
        rng_seed=seed,
        seed_with_baselines=not args.no_baseline_seeds,
        max_swaps_per_restart=args.max_swaps,
    )


def _config_echo(config: SearchConfig) -> dict:
    return {
        "restarts": config.restarts,
        "noise_fraction": config.noise_fraction,
        "convergence_threshold": config.convergence_threshold,
        "rng_seed": config.rng_seed,
        "seed_with_baselines": config.seed_with_baselines,
        "max_swaps_per_restart": config.max_swaps_per_restart,
    }


# ---------------------------------------------------------------------------
# Commands


def _cmd_gen_trace(args) -> int:
    started = time.perf_counter()
    if args.steps < 1:
        raise _CliError("--steps must be >= 1")
    if args.experts < 1:
        raise _CliError("--experts must be >= 1")
    seed = _resolve_seed(args)
    spec = SyntheticTraceSpec(
        num_experts=args.experts,
        num_steps=args.steps,
        tokens_per_step=args.tokens_per_step,
        consistent_experts=_parse_int_list(args.consistent, "--consistent") if args.consistent else (),
        consistent_probability=args.p_consistent,
        temporal_groups=tuple(_parse_temporal_group(t) for t in args.temporal or ()),
        rng_seed=seed,
    )
    trace = generate_trace(spec)
    if args.output:
        save_trace(trace, args.output, format=args.format)
    else:
        sys.stdout.write(render_trace(trace, args.format))
    config = {
        "experts": args.experts,
        "steps": args.steps,
        "tokens_per_step": args.tokens_per_step,
        "consistent": args.consistent,
        "p_consistent": args.p_consistent,
        "temporal": list(args.temporal or ()),
        "format": args.format,
    }
    _info(args, _dump_json(_manifest(args, "gen-trace", {}, config, seed, started)).rstrip())
    return 0


def _cmd_gen_profile(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args) if args.setup == "moderate" else (args.seed or 0)
    factors = None
    if args.speed_factors:
        factors = _parse_float_list(args.speed_factors, "--speed-factors")
    spec = VariabilitySetupSpec(
        num_gpus=args.gpus,
        setup=args.setup,
        speed_factors=factors,
        base_latency=args.base_latency,
        fixed_overhead=args.overhead,
        tile_size=args.tile,
        max_tokens=args.max_tokens,
        dense_tiles=args.dense_tiles,
        rng_seed=seed,
    )
    profile = generate_profile(spec)
    if args.output:
        save_profile(profile, args.output)
    else:
        payload = {
            "num_gpus": profile.num_gpus,
            "tile_size": profile.tile_size,
            "label": profile.label,
            "curves": [c.to_dict() for c in profile.curves],
        }
        sys.stdout.write(_dump_json(payload))
    config = {
        "gpus": args.gpus,
        "setup": args.setup,
        "speed_factors": args.speed_factors,
        "base_latency": args.base_latency,
        "overhead": args.overhead,
        "tile": args.tile,
        "max_tokens": args.max_tokens,
        "dense_tiles": args.dense_tiles,
    }
    _info(args, _dump_json(_manifest(args, "gen-profile", {}, config, seed, started)).rstrip())
    return 0


def _cmd_optimize(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args)
    trace = load_trace(args.trace)
    profile = load_profile(args.profile)
    config = _search_config(args, seed)
    result = search(trace, profile, config)

    stats = compute_stats(trace)
    linear = linear_mapping(trace.num_experts, profile.num_gpus)
    eplb = eplb_mapping(stats, profile.num_gpus)
    linear_score = score_mapping(trace, profile, linear)
    eplb_score = score_mapping(trace, profile, eplb)
    comparison = {
        "linear_score": linear_score,
        "eplb_score": eplb_score,
        "optimized_score": result.best_score,
        "reduction_vs_linear_pct": 100.0 * (linear_score - result.best_score) / linear_score,
        "reduction_vs_eplb_pct": 100.0 * (eplb_score - result.best_score) / eplb_score,
    }
    if args.mapping_out:
        save_mapping(result.best_mapping, args.mapping_out, policy="optimized")
    payload = {
        "manifest": _manifest(
            args,
            "optimize",
            {"trace": args.trace, "profile": args.profile},
            _config_echo(config),
            seed,
            started,
        ),
        "result": result.to_dict() | {"comparison": comparison},
    }
    _emit(_dump_json(payload), args.output)
    return 0


def _load_inputs(args):
    return load_trace(args.trace), load_profile(args.profile)


def _cmd_score(args) -> int:
    started = time.perf_counter()
    trace, profile = _load_inputs(args)
    mapping = load_mapping(args.mapping)
    total = score_mapping(trace, profile, mapping)
    payload = {
        "manifest": _manifest(
            args,
            "score",
            {"trace": args.trace, "profile": args.profile, "mapping": args.mapping},
            {},
            None,
            started,
        ),
        "result": {"total_score": total},
    }
    _emit(_dump_json(payload), args.output)
    return 0


def _cmd_replay(args) -> int:
    started = time.perf_counter()
    trace, profile = _load_inputs(args)
    mapping = load_mapping(args.mapping)
    report = replay(trace, profile, mapping)
    payload = {
        "manifest": _manifest(
            args,
            "replay",
            {"trace": args.trace, "profile": args.profile, "mapping": args.mapping},
            {},
            None,
            started,
        ),
        "result": report.to_dict(include_steps=args.verbose),
    }
    _emit(_dump_json(payload), args.output)
    return 0


def _cmd_compare(args) -> int:
    started = time.perf_counter()
    trace, profile = _load_inputs(args)
    rows = []
    first_score = None
    for path in args.mappings:
        mapping = load_mapping(path)
        report = replay(trace, profile, mapping)
        if first_score is None:
            first_score = report.total_score
        rows.append(
            {
                "mapping": path,
                "total_score": report.total_score,
                "mean_step_latency": report.mean_step_latency,
                "percentiles": report.percentiles,
                "reduction_vs_first_pct": 100.0 * (first_score - report.total_score) / first_score,
            }
        )
    payload = {
        "manifest": _manifest(
            args,
            "compare",
            {"trace": args.trace, "profile": args.profile, "mappings": list(args.mappings)},
            {},
            None,
            started,
        ),
        "result": {"mappings": rows},
    }
    _emit(_dump_json(payload), args.output)
    return 0


def _cmd_baseline(args) -> int:
    started = time.perf_counter()
    trace = load_trace(args.trace)
    if args.policy == "linear":
        mapping = linear_mapping(trace.num_experts, args.gpus)
    else:
        mapping = eplb_mapping(compute_stats(trace), args.gpus)
    if args.output:
        save_mapping(mapping, args.output, policy=args.policy)
    else:
        sys.stdout.write(_dump_json(mapping.to_dict() | {"policy": args.policy}))
    _info(
        args,
        _dump_json(
            _manifest(args, "baseline", {"trace": args.trace}, {"policy": args.policy, "gpus": args.gpus}, None, started)
        ).rstrip(),
    )
    return 0


def _cmd_scale_study(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args)
    dist = ThroughputDistribution(args.dist, _parse_float_list(args.params, "--params"))
    sizes = _parse_int_list(args.sizes, "--sizes")
    result = run_study(dist, sizes, args.samples, seed)
    payload = {
        "manifest": _manifest(
            args,
            "scale-study",
            {},
            {"dist": dist.to_dict(), "sizes": list(sizes), "samples": args.samples},
            seed,
            started,
        ),
        "result": result.to_dict(),
    }
    _emit(_dump_json(payload), args.output)
    if args.csv_out:
        with open(args.csv_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "expected_gap"])
            for n, gap in result.csv_rows():
                writer.writerow([n, repr(gap)])
    return 0


def _cmd_multi_layer(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args)
    profile = load_profile(args.profile)
    trace_dir = Path(args.trace_dir)
    if not trace_dir.is_dir():
        raise _CliError(f"--trace-dir {args.trace_dir!r} is not a directory")
    paths = sorted(p for p in trace_dir.iterdir() if p.suffix.lower() in (".json", ".csv"))
    if not paths:
        raise _CliError(f"no trace files (*.json, *.csv) in {args.trace_dir!r}")

    # Validate every layer before writing anything: all layers or none.
    traces = []
    for path in paths:
        trace = load_trace(path)
        if trace.num_experts % profile.num_gpus != 0:
            raise _CliError(
                f"{path.name}: {trace.num_experts} experts do not divide across {profile.num_gpus} GPUs"
            )
        traces.append(trace)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _search_config(args, seed)
    layers = []
    aggregate = 0.0
    for path, trace in zip(paths, traces):
        result = search(trace, profile, config)
        mapping_path = out_dir / f"{path.stem}.mapping.json"
        save_mapping(result.best_mapping, mapping_path, policy="optimized")
        layers.append(
            {
                "trace": str(path),
                "mapping": str(mapping_path),
                "best_score": result.best_score,
                "provenance": result.provenance,
            }
        )
        aggregate = aggregate + result.best_score
    payload = {
        "manifest": _manifest(
            args,
            "multi-layer",
            {"trace_dir": args.trace_dir, "profile": args.profile},
            _config_echo(config),
            seed,
            started,
        ),
        "result": {"layers": layers, "aggregate_score": aggregate},
    }
    _emit(_dump_json(payload), args.output)
    return 0


def _cmd_stats(args) -> int:
    started = time.perf_counter()
    trace = load_trace(args.trace)
    stats = compute_stats(trace)
    payload = {
        "manifest": _manifest(args, "stats", {"trace": args.trace}, {}, None, started),
        "result": {
            "num_experts": trace.num_experts,
            "num_steps": trace.num_steps,
            "mean_utilization": stats.mean_utilization.tolist(),
            "active_fraction": stats.active_fraction.tolist(),
            "correlation": stats.correlation.tolist(),
        },
    }
    _emit(_dump_json(payload), args.output)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(parser: argparse.ArgumentParser, seed: bool = False, fmt: bool = False) -> None:
    parser.add_argument("--output", help="write the result here instead of stdout")
    parser.add_argument("--verbose", action="store_true", help="include per-step details and timings")
    parser.add_argument("--quiet", action="store_true", help="suppress informational stderr output")
    if seed:
        parser.add_argument("--seed", type=int, help="RNG seed; chosen and printed when omitted")
    if fmt:
        parser.add_argument("--format", choices=("json", "csv"), default="json")


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--restarts", type=int, default=SearchConfig().restarts)
    parser.add_argument("--noise", type=float, default=SearchConfig().noise_fraction)
    parser.add_argument("--threshold", type=float, default=SearchConfig().convergence_threshold)
    parser.add_argument("--max-swaps", type=int, default=None, help="cap on swaps per restart (default 10x experts)")
    parser.add_argument(
        "--no-baseline-seeds",
        action="store_true",
        help="do not refine from the linear/eplb seeds (pure restart search)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gemap",
        description="Variability-aware expert-to-GPU mapping over replayed utilization traces.",
    )
    parser.add_argument("--version", action="version", version=f"gemap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic expert utilization trace")
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--steps", type=int, default=DEFAULT_TRACE_STEPS)
    p.add_argument("--tokens-per-step", type=int, default=1024)
    p.add_argument("--consistent", help="comma-separated expert indices active most steps")
    p.add_argument("--p-consistent", type=float, default=0.85)
    p.add_argument(
        "--temporal",
        action="append",
        help="expert group 'i,j[:burst_prob[:multiplier]]'; repeatable",
    )
    _add_common(p, seed=True, fmt=True)
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("gen-profile", help="generate a synthetic variability profile")
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--setup", choices=("low", "moderate", "high", "explicit"), default="low")
    p.add_argument("--speed-factors", help="comma-separated per-GPU factors (explicit setup)")
    p.add_argument("--base-latency", type=float, default=1.0, help="ms per tile at factor 1.0")
    p.add_argument("--overhead", type=float, default=0.0, help="fixed ms per step")
    p.add_argument("--tile", type=int, default=64)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--dense-tiles", type=int, default=DENSE_TILES_DEFAULT)
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_gen_profile)

    p = sub.add_parser("optimize", help="search for a low-straggler mapping")
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--mapping-out", help="also write the best mapping to this path")
    _add_search_flags(p)
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("score", help="total straggler latency of a mapping")
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--mapping", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("replay", help="per-step replay report for a mapping")
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--mapping", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("compare", help="replay several mappings and report reductions")
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("mappings", nargs="+", help="mapping files; reductions are relative to the first")
    _add_common(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("baseline", help="emit a baseline mapping")
    p.add_argument("policy", choices=("linear", "eplb"))
    p.add_argument("--trace", required=True)
    p.add_argument("--gpus", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("scale-study", help="expected slowest-to-fastest gap vs fleet size")
    p.add_argument("--dist", choices=("uniform", "normal", "two_point", "empirical"), required=True)
    p.add_argument("--params", required=True, help="distribution parameters, comma-separated")
    p.add_argument("--sizes", default="1,2,4,8,16,32,64")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--csv-out", help="also write plot data 'n,expected_gap' here")
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_scale_study)

    p = sub.add_parser("multi-layer", help="independent search per layer trace in a directory")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--output-dir", required=True, help="directory for per-layer mapping files")
    _add_search_flags(p)
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_multi_layer)

    p = sub.add_parser("stats", help="trace statistics including the correlation matrix")
    p.add_argument("--trace", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (_CliError, GemapError) as exc:
        print(f"gemap: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gemap: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to exit code 1
        print(f"gemap: internal failure: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

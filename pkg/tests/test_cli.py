import json

import numpy as np
import pytest

from gemap import load_mapping, load_profile, load_trace
from gemap.cli import main


def run_cli(*argv):
    return main(list(argv))


def read_json(path):
    return json.loads(path.read_text())


class TestGenTrace:
    def test_writes_trace_with_default_window(self, tmp_path):
        out = tmp_path / "t.json"
        assert run_cli("gen-trace", "--experts", "16", "--seed", "3", "--output", str(out), "--quiet") == 0
        trace = load_trace(out)
        assert trace.num_steps == 16
        assert trace.num_experts == 16

    def test_zero_steps_is_usage_error(self, tmp_path):
        code = run_cli("gen-trace", "--experts", "4", "--steps", "0", "--seed", "1", "--quiet")
        assert code == 2

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = ["gen-trace", "--experts", "8", "--steps", "12", "--consistent", "1,2",
                "--temporal", "3,4", "--seed", "9", "--quiet"]
        assert run_cli(*args, "--output", str(a)) == 0
        assert run_cli(*args, "--output", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_csv_format(self, tmp_path):
        out = tmp_path / "t.csv"
        assert run_cli("gen-trace", "--experts", "4", "--steps", "2", "--seed", "0",
                       "--format", "csv", "--output", str(out), "--quiet") == 0
        assert out.read_text().startswith("step,expert,tokens")
        assert load_trace(out).num_experts == 4

    def test_missing_seed_selects_and_prints_one(self, tmp_path, capsys):
        out = tmp_path / "t.json"
        assert run_cli("gen-trace", "--experts", "4", "--output", str(out)) == 0
        err = capsys.readouterr().err
        assert "seed" in err


class TestGenProfile:
    def test_high_setup(self, tmp_path):
        out = tmp_path / "p.json"
        assert run_cli("gen-profile", "--gpus", "4", "--setup", "high", "--output", str(out), "--quiet") == 0
        profile = load_profile(out)
        assert profile.num_gpus == 4
        assert profile.curves[0].cost(64) > profile.curves[1].cost(64)

    def test_explicit_factors(self, tmp_path):
        out = tmp_path / "p.json"
        assert run_cli("gen-profile", "--gpus", "2", "--setup", "explicit",
                       "--speed-factors", "1.0,1.14", "--output", str(out), "--quiet") == 0
        assert load_profile(out).num_gpus == 2

    def test_explicit_requires_factors(self):
        assert run_cli("gen-profile", "--gpus", "2", "--setup", "explicit", "--quiet") == 2


@pytest.fixture
def bundle(tmp_path, data_dir):
    """Paths for the golden trace/profile/mapping fixture."""
    return {
        "trace": str(data_dir / "lockstep_trace.json"),
        "profile": str(data_dir / "lockstep_profile.json"),
        "mapping": str(data_dir / "lockstep_mapping.json"),
        "tmp": tmp_path,
    }


class TestOptimize:
    def test_beats_or_matches_reference_mapping(self, bundle):
        out = bundle["tmp"] / "report.json"
        mapping_out = bundle["tmp"] / "best.json"
        code = run_cli("optimize", "--trace", bundle["trace"], "--profile", bundle["profile"],
                       "--seed", "5", "--output", str(out), "--mapping-out", str(mapping_out), "--quiet")
        assert code == 0
        report = read_json(out)
        assert report["result"]["best_score"] <= 13.0
        assert report["result"]["comparison"]["reduction_vs_linear_pct"] >= 0.0
        assert report["result"]["comparison"]["reduction_vs_eplb_pct"] >= 0.0
        assert load_mapping(mapping_out).num_experts == 4

    def test_deterministic_output(self, bundle):
        a = bundle["tmp"] / "a.json"
        b = bundle["tmp"] / "b.json"
        args = ["optimize", "--trace", bundle["trace"], "--profile", bundle["profile"],
                "--restarts", "1", "--no-baseline-seeds", "--seed", "7", "--quiet"]
        assert run_cli(*args, "--output", str(a)) == 0
        assert run_cli(*args, "--output", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_dimension_mismatch_exits_2(self, bundle, tmp_path):
        # three-GPU profile cannot split four experts evenly
        bad_profile = tmp_path / "bad.json"
        assert run_cli("gen-profile", "--gpus", "3", "--output", str(bad_profile), "--quiet") == 0
        code = run_cli("optimize", "--trace", bundle["trace"], "--profile", str(bad_profile),
                       "--seed", "1", "--quiet")
        assert code == 2


class TestScoreReplayCompare:
    def test_score(self, bundle, capsys):
        assert run_cli("score", "--trace", bundle["trace"], "--profile", bundle["profile"],
                       "--mapping", bundle["mapping"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["result"]["total_score"] == 13.0

    def test_replay_verbose_includes_steps(self, bundle, capsys):
        assert run_cli("replay", "--trace", bundle["trace"], "--profile", bundle["profile"],
                       "--mapping", bundle["mapping"], "--verbose") == 0
        payload = json.loads(capsys.readouterr().out)
        steps = payload["result"]["step_costs"]
        assert [s["straggler_latency"] for s in steps] == [5.0, 4.0, 4.0]
        assert payload["result"]["percentiles"]["p50"] == 4.0

    def test_replay_default_omits_steps(self, bundle, capsys):
        assert run_cli("replay", "--trace", bundle["trace"], "--profile", bundle["profile"],
                       "--mapping", bundle["mapping"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert "step_costs" not in payload["result"]

    def test_compare_self_is_zero_reduction(self, bundle, capsys):
        assert run_cli("compare", "--trace", bundle["trace"], "--profile", bundle["profile"],
                       bundle["mapping"], bundle["mapping"]) == 0
        payload = json.loads(capsys.readouterr().out)
        rows = payload["result"]["mappings"]
        assert rows[0]["reduction_vs_first_pct"] == 0.0
        assert rows[1]["reduction_vs_first_pct"] == 0.0


class TestBaselineCommand:
    def test_linear(self, bundle, capsys):
        assert run_cli("baseline", "linear", "--trace", bundle["trace"], "--gpus", "2", "--quiet") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["assignment"] == [0, 0, 1, 1]
        assert payload["policy"] == "linear"

    def test_eplb_writes_file(self, bundle):
        out = bundle["tmp"] / "eplb.json"
        assert run_cli("baseline", "eplb", "--trace", bundle["trace"], "--gpus", "2",
                       "--output", str(out), "--quiet") == 0
        assert load_mapping(out).num_gpus == 2
        assert read_json(out)["policy"] == "eplb"


class TestScaleStudy:
    def test_csv_and_json(self, tmp_path):
        out = tmp_path / "s.json"
        csv_out = tmp_path / "s.csv"
        assert run_cli("scale-study", "--dist", "two_point", "--params", "1.0,0.5,0.9",
                       "--sizes", "1,2,4", "--samples", "20000", "--seed", "2",
                       "--output", str(out), "--csv-out", str(csv_out), "--quiet") == 0
        payload = read_json(out)
        gaps = payload["result"]["expected_gap"]
        assert gaps[0] == 0.0
        assert gaps == sorted(gaps)
        lines = csv_out.read_text().strip().splitlines()
        assert lines[0] == "n,expected_gap"
        assert len(lines) == 4

    def test_single_size_row(self, tmp_path, capsys):
        assert run_cli("scale-study", "--dist", "uniform", "--params", "0.88,1.11",
                       "--sizes", "1", "--samples", "100", "--seed", "1", "--quiet") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["result"]["expected_gap"] == [0.0]


class TestMultiLayer:
    def test_identical_layers_identical_scores(self, bundle, tmp_path):
        layer_dir = tmp_path / "layers"
        layer_dir.mkdir()
        trace_text = open(bundle["trace"]).read()
        (layer_dir / "layer0.json").write_text(trace_text)
        (layer_dir / "layer1.json").write_text(trace_text)
        out_dir = tmp_path / "maps"
        report_path = tmp_path / "agg.json"
        code = run_cli("multi-layer", "--trace-dir", str(layer_dir), "--profile", bundle["profile"],
                       "--output-dir", str(out_dir), "--seed", "4", "--restarts", "2",
                       "--output", str(report_path), "--quiet")
        assert code == 0
        report = read_json(report_path)
        layers = report["result"]["layers"]
        assert len(layers) == 2
        assert layers[0]["best_score"] == layers[1]["best_score"]
        assert report["result"]["aggregate_score"] == pytest.approx(sum(l["best_score"] for l in layers))
        assert (out_dir / "layer0.mapping.json").exists()

        # each layer equals an individual search with the same config and seed
        import gemap

        trace = load_trace(bundle["trace"])
        profile = load_profile(bundle["profile"])
        single = gemap.search(trace, profile, gemap.SearchConfig(restarts=2, rng_seed=4))
        assert layers[0]["best_score"] == single.best_score

    def test_incompatible_layer_aborts_without_output(self, bundle, tmp_path):
        layer_dir = tmp_path / "layers"
        layer_dir.mkdir()
        (layer_dir / "layer0.json").write_text(open(bundle["trace"]).read())
        bad = {"num_experts": 3, "num_steps": 1, "tokens": [[1, 2, 3]]}
        (layer_dir / "layer1.json").write_text(json.dumps(bad))
        out_dir = tmp_path / "maps"
        code = run_cli("multi-layer", "--trace-dir", str(layer_dir), "--profile", bundle["profile"],
                       "--output-dir", str(out_dir), "--seed", "4", "--quiet")
        assert code == 2
        assert not out_dir.exists()


class TestStats:
    def test_stats_payload(self, bundle, capsys):
        assert run_cli("stats", "--trace", bundle["trace"]) == 0
        payload = json.loads(capsys.readouterr().out)
        result = payload["result"]
        assert result["num_experts"] == 4
        assert abs(sum(result["mean_utilization"]) - 1.0) < 1e-9
        corr = np.array(result["correlation"])
        assert np.array_equal(corr, corr.T)
        assert np.all(np.diag(corr) == 1.0)


class TestErrorPaths:
    def test_missing_file_exits_2(self, tmp_path):
        assert run_cli("score", "--trace", str(tmp_path / "none.json"),
                       "--profile", str(tmp_path / "none.json"),
                       "--mapping", str(tmp_path / "none.json"), "--quiet") == 2

    def test_malformed_json_exits_2(self, tmp_path, bundle):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("stats", "--trace", str(bad), "--quiet") == 2

    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("frobnicate")
        assert excinfo.value.code == 2

import numpy as np
import pytest

from gemap import (
    ExpertTrace,
    ValidationError,
    compute_stats,
    eplb_mapping,
    linear_mapping,
)

from conftest import random_trace


def aggregate_loads(trace, mapping):
    per_expert = trace.tokens.sum(axis=0)
    loads = np.zeros(mapping.num_gpus, dtype=np.int64)
    np.add.at(loads, mapping.assignment, per_expert)
    return loads


class TestLinearMapping:
    def test_contiguous_blocks(self):
        assert linear_mapping(8, 2).assignment.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_identity_when_equal(self):
        assert linear_mapping(4, 4).assignment.tolist() == [0, 1, 2, 3]

    def test_sixteen_by_four(self):
        expected = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]
        assert linear_mapping(16, 4).assignment.tolist() == expected

    def test_non_divisible_rejected(self):
        with pytest.raises(ValidationError):
            linear_mapping(6, 4)


class TestEplbMapping:
    def test_lpt_hand_instance(self):
        # aggregates 4,3,2,1 across one step; LPT lands on a 5/5 split
        trace = ExpertTrace(np.array([[4, 3, 2, 1]]))
        mapping = eplb_mapping(compute_stats(trace), 2)
        loads = aggregate_loads(trace, mapping)
        assert sorted(loads.tolist()) == [5, 5]
        # e0 heaviest goes to gpu 0; e1 to gpu 1; e2 joins gpu 1; e3 fills gpu 0
        assert mapping.assignment.tolist() == [0, 1, 1, 0]

    def test_equal_aggregates_balanced(self):
        trace = ExpertTrace(np.full((3, 8), 5))
        mapping = eplb_mapping(compute_stats(trace), 4)
        assert len(set(aggregate_loads(trace, mapping).tolist())) == 1

    def test_skewed_trace_beats_linear_max_load(self):
        # one expert holds half the tokens and its linear block also holds the
        # second heaviest: LPT separates them
        tokens = np.array([[50, 30, 2, 2, 4, 4, 4, 4]])
        trace = ExpertTrace(tokens)
        eplb = eplb_mapping(compute_stats(trace), 4)
        linear = linear_mapping(8, 4)
        assert aggregate_loads(trace, eplb).max() < aggregate_loads(trace, linear).max()

    def test_skewed_trace_beats_linear_score_on_identical_gpus(self):
        from gemap import score_mapping

        from conftest import identical_linear_profile

        tokens = np.array([[50, 30, 2, 2, 4, 4, 4, 4]] * 4)
        trace = ExpertTrace(tokens)
        profile = identical_linear_profile(4)
        eplb_score = score_mapping(trace, profile, eplb_mapping(compute_stats(trace), 4))
        linear_score = score_mapping(trace, profile, linear_mapping(8, 4))
        assert eplb_score <= linear_score

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        trace = random_trace(rng, 16, 12)
        stats = compute_stats(trace)
        first = eplb_mapping(stats, 4)
        second = eplb_mapping(stats, 4)
        assert first == second

    def test_lpt_vs_linear_max_load_statistics(self):
        # Capacity-constrained LPT is not a strict improvement on max load:
        # once the lighter GPU fills up, trailing experts are forced onto the
        # heavier one. On this seeded suite that happens in under 15% of
        # instances and costs at most a few percent, while the average max
        # load is clearly lower than linear's, so the dominance claim is a
        # statistical one, not a hard invariant.
        rng = np.random.default_rng(17)
        worse = 0
        ratios = []
        for _ in range(200):
            trace = random_trace(rng, 16, 8)
            stats = compute_stats(trace)
            eplb = eplb_mapping(stats, 2)
            linear = linear_mapping(8, 2)
            eplb_max = aggregate_loads(trace, eplb).max()
            linear_max = aggregate_loads(trace, linear).max()
            ratios.append(eplb_max / linear_max)
            if eplb_max > linear_max:
                worse += 1
        assert worse <= 30
        assert np.mean(ratios) < 1.0
        assert max(ratios) < 1.05

    def test_ignores_variability_profile(self):
        # EPLB never reads a profile, so there is nothing to vary: the
        # mapping is a pure function of the stats
        trace = ExpertTrace(np.array([[9, 1, 5, 5], [2, 8, 5, 5]]))
        stats = compute_stats(trace)
        assert eplb_mapping(stats, 2) == eplb_mapping(stats, 2)

    def test_non_divisible_rejected(self):
        trace = ExpertTrace(np.array([[1, 2, 3]]))
        with pytest.raises(ValidationError):
            eplb_mapping(compute_stats(trace), 2)

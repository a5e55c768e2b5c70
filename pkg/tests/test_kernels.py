"""Backend equivalence: the compiled kernels must match the numpy fallback
bit for bit on every operation, so backend choice can never change a result."""

import numpy as np
import pytest

from gemap import CostCurve, ExpertTrace, VariabilityProfile, kernels
from gemap.search import _Instance

from conftest import balanced_random_mapping, random_staircase_profile, random_trace

pytestmark = pytest.mark.skipif(
    "cython" not in kernels.available_backends(),
    reason="compiled kernels not built",
)


def random_sparse_profile(rng, num_gpus):
    """Curves mixing dense staircase, sparse interpolation, and extrapolation."""
    curves = []
    for _ in range(num_gpus):
        n = int(rng.integers(2, 30))
        xs = np.sort(rng.choice(np.arange(1, 3000), n, replace=False)).astype(np.int64)
        ys = np.cumsum(rng.uniform(0.01, 2.0, n))
        dense_limit = int(rng.choice(np.concatenate(([0], xs))))
        curves.append(CostCurve(xs, ys, 16, dense_limit))
    return VariabilityProfile(tuple(curves))


def instance_with_state(rng, num_gpus, experts_per_gpu, steps):
    num_experts = num_gpus * experts_per_gpu
    trace = random_trace(rng, steps, num_experts, high=400)
    profile = random_sparse_profile(rng, num_gpus)
    mapping = balanced_random_mapping(rng, num_experts, num_gpus)
    inst = _Instance(trace, profile)
    assignment = mapping.assignment.astype(np.int64).copy()
    loads = inst.load_matrix(assignment)
    return inst, assignment, loads


def test_eval_curve_packed_identical():
    py = kernels.get_backend("python")
    cy = kernels.get_backend("cython")
    rng = np.random.default_rng(100)
    for _ in range(50):
        inst, _, _ = instance_with_state(rng, int(rng.integers(2, 5)), 2, 4)
        counts = rng.integers(0, 6000, 128)
        for g in range(inst.num_gpus):
            a = py.eval_curve_packed(*inst.curve_args(), g, counts)
            b = cy.eval_curve_packed(*inst.curve_args(), g, counts)
            assert np.array_equal(a, b)


def test_eval_matches_cost_curve():
    cy = kernels.get_backend("cython")
    rng = np.random.default_rng(101)
    curve = CostCurve(np.array([7, 64, 301, 900]), np.array([0.5, 1.25, 2.0, 4.5]), 16, 64)
    profile = VariabilityProfile((curve,))
    trace = ExpertTrace(np.array([[1]]))
    inst = _Instance(trace, profile)
    ns = rng.integers(0, 1200, 500)
    got = cy.eval_curve_packed(*inst.curve_args(), 0, ns)
    want = np.array([curve.cost(int(n)) for n in ns])
    assert np.array_equal(got, want)


def test_best_swap_identical():
    py = kernels.get_backend("python")
    cy = kernels.get_backend("cython")
    rng = np.random.default_rng(102)
    for _ in range(100):
        num_gpus = int(rng.integers(2, 5))
        inst, assignment, loads = instance_with_state(rng, num_gpus, int(rng.integers(1, 5)), int(rng.integers(1, 12)))
        lat_py = inst.latency_matrix(py, loads)
        lat_cy = inst.latency_matrix(cy, loads)
        assert np.array_equal(lat_py, lat_cy)
        got_py = py.best_swap(inst.tokens, assignment, loads, lat_py, *inst.curve_args())
        got_cy = cy.best_swap(inst.tokens, assignment, loads, lat_cy, *inst.curve_args())
        assert got_py == got_cy


def test_swap_candidate_score_identical():
    py = kernels.get_backend("python")
    cy = kernels.get_backend("cython")
    rng = np.random.default_rng(103)
    for _ in range(100):
        num_gpus = int(rng.integers(2, 4))
        inst, assignment, loads = instance_with_state(rng, num_gpus, 3, 6)
        lat = inst.latency_matrix(py, loads)
        cross = [
            (i, j)
            for i in range(inst.num_experts)
            for j in range(i + 1, inst.num_experts)
            if assignment[i] != assignment[j]
        ]
        i, j = cross[int(rng.integers(0, len(cross)))]
        a = py.swap_candidate_score(inst.tokens, assignment, loads, lat, *inst.curve_args(), i, j)
        b = cy.swap_candidate_score(inst.tokens, assignment, loads, lat, *inst.curve_args(), i, j)
        assert a == b


def test_single_gpu_has_no_swaps():
    rng = np.random.default_rng(104)
    for name in kernels.available_backends():
        backend = kernels.get_backend(name)
        inst, assignment, loads = instance_with_state(rng, 1, 4, 4)
        lat = inst.latency_matrix(backend, loads)
        found, i, j, cand = backend.best_swap(inst.tokens, assignment, loads, lat, *inst.curve_args())
        assert not found


def test_backend_selection():
    assert kernels.get_backend("python").BACKEND == "python"
    assert kernels.get_backend("cython").BACKEND == "cython"
    assert kernels.get_backend(None).BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_search_identical_across_backends(monkeypatch):
    import gemap

    rng = np.random.default_rng(105)
    trace = random_trace(rng, 12, 16)
    profile = random_staircase_profile(rng, 4)
    config = gemap.SearchConfig(restarts=6, rng_seed=3)
    results = {}
    for name in ("python", "cython"):
        monkeypatch.setattr(kernels, "_active", kernels.get_backend(name))
        results[name] = gemap.search(trace, profile, config)
    assert results["python"].best_score == results["cython"].best_score
    assert results["python"].best_mapping == results["cython"].best_mapping
    assert [r.trajectory for r in results["python"].per_restart] == [
        r.trajectory for r in results["cython"].per_restart
    ]

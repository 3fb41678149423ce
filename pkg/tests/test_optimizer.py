import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrrdo.harness import ChromaOffsetPolicy, demo_corpus, harness_from_corpus
from hdrrdo.optimizer import (
    OptimizationTrace,
    SearchOptions,
    lambda_cost,
    line_minimize,
    offset_cost,
    optimize_lambda,
    optimize_offsets,
    powell_minimize,
)
from hdrrdo.rdcurve import RdCurve, RdPoint


# --- line search --------------------------------------------------------------


def test_line_minimize_parabola():
    cost = lambda x: (x[0] - 2.0) ** 2
    step = line_minimize(cost, [0.0], [1.0], SearchOptions(start=(0.0,)))
    assert step == pytest.approx(2.0, abs=1e-3)


def test_line_minimize_flat_cost_returns_zero():
    step = line_minimize(lambda x: 1.0, [0.0, 0.0], [1.0, 0.0], SearchOptions(start=(0.0, 0.0)))
    assert step == 0.0


def test_line_minimize_monotone_cost_stops_at_bound():
    opts = SearchOptions(start=(0.0,), bounds=((-5.0, 3.0),))
    step = line_minimize(lambda x: -x[0], [0.0], [1.0], opts)
    assert step == pytest.approx(3.0, abs=1e-9)


def test_line_minimize_rejects_zero_direction():
    with pytest.raises(ValueError):
        line_minimize(lambda x: 0.0, [0.0], [0.0], SearchOptions(start=(0.0,)))


# --- Powell -------------------------------------------------------------------


LOG_K_TARGET = (math.log(1.3), math.log(1.6))


def _quadratic(x):
    return (x[0] - LOG_K_TARGET[0]) ** 2 + (x[1] - LOG_K_TARGET[1]) ** 2


def test_powell_recovers_quadratic_minimum_within_budget():
    trace = powell_minimize(_quadratic, SearchOptions(start=(0.0, 0.0)))
    k = (math.exp(trace.best_point[0]), math.exp(trace.best_point[1]))
    assert abs(k[0] - 1.3) < 0.05
    assert abs(k[1] - 1.6) < 0.05
    assert trace.n_evaluations <= 60
    assert trace.reason == "tolerance"


def test_powell_started_at_minimum_converges_in_one_cycle():
    trace = powell_minimize(_quadratic, SearchOptions(start=LOG_K_TARGET))
    assert trace.cycles == 1
    assert trace.best_point == LOG_K_TARGET
    assert trace.best_cost == 0.0


def test_powell_respects_penalty_region():
    def cost(x):
        if x[0] > 0.5:
            return 1.0  # penalty plateau
        return (x[0] - 0.2) ** 2 + x[1] ** 2

    trace = powell_minimize(cost, SearchOptions(start=(0.0, 0.0)))
    assert trace.best_point[0] <= 0.5
    assert abs(trace.best_point[0] - 0.2) < 0.01


def test_powell_evaluation_budget_is_hard():
    trace = powell_minimize(_quadratic, SearchOptions(start=(0.0, 0.0), max_evaluations=7))
    assert trace.n_evaluations <= 7
    assert trace.reason == "max-iter"


def test_powell_best_cost_matches_recorded_minimum():
    trace = powell_minimize(_quadratic, SearchOptions(start=(0.0, 0.0)))
    costs = [c for _, c in trace.evaluations]
    assert trace.best_cost == min(costs)
    # earliest evaluation wins ties
    first_index = costs.index(trace.best_cost)
    assert trace.evaluations[first_index][0] == trace.best_point


@given(
    st.floats(0.05, 3.0),
    st.floats(0.05, 3.0),
    st.floats(-1.0, 1.0),
    st.floats(-1.0, 1.0),
)
@settings(max_examples=30, deadline=None)
def test_powell_never_beats_start_upwards(a, b, cx, cy):
    cost = lambda x: a * (x[0] - cx) ** 2 + b * (x[1] - cy) ** 2
    trace = powell_minimize(cost, SearchOptions(start=(0.0, 0.0)))
    assert trace.best_cost <= cost((0.0, 0.0)) + 1e-15


def test_powell_translation_invariance():
    shift = 0.37

    def shifted(x):
        return _quadratic((x[0] - shift, x[1] - shift))

    base = powell_minimize(_quadratic, SearchOptions(start=(0.0, 0.0)))
    moved = powell_minimize(shifted, SearchOptions(start=(shift, shift)))
    assert moved.n_evaluations == base.n_evaluations
    assert moved.cycles == base.cycles
    for (p_base, c_base), (p_moved, c_moved) in zip(base.evaluations, moved.evaluations):
        assert p_moved[0] - shift == pytest.approx(p_base[0], abs=1e-9)
        assert p_moved[1] - shift == pytest.approx(p_base[1], abs=1e-9)
        assert c_moved == pytest.approx(c_base, abs=1e-12)


def test_trace_jsonl_roundtrip():
    trace = powell_minimize(_quadratic, SearchOptions(start=(0.0, 0.0)))
    trace.total_encodes = 42
    again = OptimizationTrace.from_jsonl(trace.to_jsonl())
    assert again.best_point == trace.best_point
    assert again.best_cost == trace.best_cost
    assert again.reason == trace.reason
    assert again.cycles == trace.cycles
    assert again.total_encodes == 42
    assert again.evaluations == trace.evaluations


# --- lambda cost ---------------------------------------------------------------


def test_lambda_cost_baseline_point_is_exactly_zero(tmp_path):
    harness = harness_from_corpus(demo_corpus(1), cache_dir=tmp_path)
    assert lambda_cost(harness, "mock-00", 1.0, 1.0, "de100") == 0.0


def test_lambda_cost_planted_optimum_is_negative(tmp_path):
    harness = harness_from_corpus(demo_corpus(1), cache_dir=tmp_path)
    assert lambda_cost(harness, "mock-00", 1.3, 1.6, "de100") < 0.0


def test_lambda_cost_no_overlap_returns_penalty():
    class DisjointHarness:
        def rd_curve(self, clip_id, metric, k1, k2, qps, chroma_policy, adapter, preset):
            lo = 30.0 if k1 == 1.0 and k2 == 1.0 else 60.0
            points = [RdPoint(1e6, lo, 63), RdPoint(2e6, lo + 5.0, 27)]
            return RdCurve.from_points(points)

    cost = lambda_cost(DisjointHarness(), "c", 1.2, 1.2, "m", penalty=1.0)
    assert cost == 1.0


def test_optimize_lambda_recovers_planted_and_counts_encodes(tmp_path):
    harness = harness_from_corpus(demo_corpus(1), cache_dir=tmp_path)
    (k1, k2), trace = optimize_lambda(harness, "mock-00", "de100")
    assert abs(k1 - 1.3) < 0.05 and abs(k2 - 1.6) < 0.05
    assert trace.best_cost < 0.0
    assert trace.n_evaluations <= 100
    assert trace.total_encodes == 5 * (trace.n_evaluations + 1)
    # trace points are reported as multipliers, all positive
    assert all(p[0] > 0 and p[1] > 0 for p, _ in trace.evaluations)


def test_optimize_lambda_replay_from_cache_is_identical(tmp_path):
    harness = harness_from_corpus(demo_corpus(1), cache_dir=tmp_path)
    _, first = optimize_lambda(harness, "mock-00", "de100")
    invocations = harness.adapters["mock"].invocations
    _, second = optimize_lambda(harness, "mock-00", "de100")
    assert harness.adapters["mock"].invocations == invocations  # no new encodes
    assert second.to_jsonl() == first.to_jsonl()


# --- chroma offset cost ---------------------------------------------------------


def test_offset_cost_zero_offsets_cost_zero(tmp_path):
    corpus = demo_corpus(2, chroma=True)
    harness = harness_from_corpus(corpus, cache_dir=tmp_path)
    assert offset_cost(harness, sorted(corpus), 0.0, 0.0) == 0.0


def test_offset_cost_minimal_at_planted_pair(tmp_path):
    corpus = demo_corpus(2, chroma=True)  # planted at (-0.49, 9.26)
    harness = harness_from_corpus(corpus, cache_dir=tmp_path)
    clips = sorted(corpus)
    planted = offset_cost(harness, clips, -0.49, 9.26)
    assert planted < 0.0
    for k, l in ((-0.46, 9.26), (-0.6, 9.26), (-0.49, 10.5), (-0.49, 8.0)):
        assert offset_cost(harness, clips, k, l) > planted


def test_offset_cost_itu_default_is_finite(tmp_path):
    corpus = demo_corpus(1, chroma=True)
    harness = harness_from_corpus(corpus, cache_dir=tmp_path)
    cost = offset_cost(harness, sorted(corpus), -0.46, 9.26)
    assert math.isfinite(cost)


def test_optimize_offsets_recovers_planted_pair(tmp_path):
    corpus = demo_corpus(2, chroma=True)
    harness = harness_from_corpus(corpus, cache_dir=tmp_path)
    (k_offset, l_offset), trace = optimize_offsets(harness, sorted(corpus))
    assert k_offset == pytest.approx(-0.49, abs=0.02)
    assert l_offset == pytest.approx(9.26, abs=0.2)
    assert trace.best_cost <= 0.0

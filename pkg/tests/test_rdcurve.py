import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hdrrdo.rdcurve import (
    BdRateResult,
    CurveError,
    NoOverlapError,
    RdCurve,
    RdPoint,
    bd_rate,
    overlap_range,
    pchip_eval,
    pchip_fit,
)


def make_curve(rates, qualities, qps=None, **kw):
    qps = qps or list(range(63, 63 - len(rates), -1))
    return RdCurve.from_points(
        [RdPoint(r, q, qp) for r, q, qp in zip(rates, qualities, qps)], **kw
    )


def random_curve(rng, q_lo=30.0, q_hi=60.0):
    n = int(rng.integers(4, 8))
    q = np.sort(rng.uniform(q_lo, q_hi, n))
    q += np.arange(n) * 1e-3  # guarantee strict increase
    log_r = np.cumsum(rng.uniform(0.05, 0.9, n)) + rng.uniform(10.0, 14.0)
    return make_curve(np.exp(log_r), q)


# --- point and curve validation ---------------------------------------------


def test_rdpoint_validation():
    with pytest.raises(CurveError):
        RdPoint(0.0, 40.0, 30)
    with pytest.raises(CurveError):
        RdPoint(1e6, 40.0, 64)
    assert RdPoint(1e6, 40.0, 30).log_rate == pytest.approx(math.log(1e6))


def test_curve_sorts_by_quality():
    curve = make_curve([1e6, 4e6, 2e6], [50.0, 30.0, 40.0])
    assert list(curve.qualities) == [30.0, 40.0, 50.0]


def test_curve_collapses_capped_duplicates():
    points = [
        RdPoint(1e6, 100.0, 27),
        RdPoint(2e6, 100.0, 20),
        RdPoint(5e5, 60.0, 49),
    ]
    with pytest.warns(UserWarning, match="duplicate"):
        curve = RdCurve.from_points(points)
    assert len(curve.points) == 2
    assert curve.points[-1].rate_bps == 2e6  # highest-rate point won


def test_curve_needs_two_distinct_points():
    with pytest.raises(CurveError):
        RdCurve.from_points([RdPoint(1e6, 40.0, 30)])


def test_curve_csv_roundtrip():
    curve = make_curve([1e6, 2e6, 4e6], [30.0, 40.0, 50.0], metric="psnr-y")
    parsed = RdCurve.from_csv(curve.to_csv())
    assert parsed.qualities.tolist() == curve.qualities.tolist()
    assert parsed.log_rates.tolist() == curve.log_rates.tolist()
    assert parsed.metric == "psnr-y"


def test_curve_csv_rejects_missing_header():
    with pytest.raises(CurveError):
        RdCurve.from_csv("1,2,3\n")


def test_curve_dict_roundtrip():
    curve = make_curve([1e6, 2e6], [30.0, 40.0], clip_id="c", metric="m")
    again = RdCurve.from_dict(curve.to_dict())
    assert again == curve


# --- PCHIP ------------------------------------------------------------------


def test_pchip_reproduces_linear_data():
    q = np.array([10.0, 20.0, 30.0, 40.0])
    r = 2.0 * q + 3.0
    interp = pchip_fit(q, r)
    x = np.linspace(10.0, 40.0, 100)
    assert np.abs(pchip_eval(interp, x) - (2.0 * x + 3.0)).max() < 1e-12


def test_pchip_exact_at_knots():
    q = np.array([1.0, 2.0, 5.0, 6.0])
    r = np.array([0.3, 1.9, 2.2, 7.0])
    interp = pchip_fit(q, r)
    assert np.abs(pchip_eval(interp, q) - r).max() < 1e-12


def test_pchip_rejects_non_monotone_knots():
    with pytest.raises(CurveError):
        pchip_fit([1.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(CurveError):
        pchip_fit([2.0, 1.0], [1.0, 2.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_pchip_preserves_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    q = np.cumsum(rng.uniform(0.5, 4.0, n))
    r = np.cumsum(rng.uniform(0.01, 1.0, n))
    dense = pchip_eval(pchip_fit(q, r), np.linspace(q[0], q[-1], 1000))
    assert np.all(np.diff(dense) >= 0.0)


# --- overlap ----------------------------------------------------------------


def test_overlap_identical_ranges():
    a = make_curve([1e6, 2e6], [30.0, 50.0])
    assert overlap_range(a, a) == (30.0, 50.0)


def test_overlap_partial():
    a = make_curve([1e6, 2e6], [30.0, 50.0])
    b = make_curve([1e6, 2e6], [40.0, 70.0])
    assert overlap_range(a, b) == (40.0, 50.0)


def test_overlap_disjoint_raises():
    a = make_curve([1e6, 2e6], [30.0, 40.0])
    b = make_curve([1e6, 2e6], [50.0, 60.0])
    with pytest.raises(NoOverlapError):
        overlap_range(a, b)


# --- BD-Rate ----------------------------------------------------------------


def test_bd_rate_identity_is_exactly_zero():
    curve = make_curve([1e6, 2e6, 4e6, 8e6], [30.0, 37.0, 44.0, 50.0])
    assert bd_rate(curve, curve).delta == 0.0


def test_bd_rate_constant_log_offset():
    qualities = [30.0, 37.0, 44.0, 50.0, 55.0]
    rates = [1e6, 2e6, 4e6, 8e6, 1.6e7]
    anchor = make_curve(rates, qualities)
    test = make_curve([r * 1.05 for r in rates], qualities)
    result = bd_rate(anchor, test)
    assert result.delta == pytest.approx(0.05, abs=1e-9)
    assert result.percent == pytest.approx(5.0, abs=1e-7)


def test_bd_rate_two_point_linear_closed_form():
    # With two knots PCHIP is the straight line, so the integrand is linear
    # and its mean is the midpoint value of the endpoint differences.
    anchor = make_curve([1e6, 4e5], [30.0, 50.0], qps=[27, 63])
    test = make_curve([1.5e6, 3e5], [35.0, 55.0], qps=[27, 63])
    q1, q2 = 35.0, 50.0

    def line(q, q_pts, r_pts):
        slope = (r_pts[1] - r_pts[0]) / (q_pts[1] - q_pts[0])
        return r_pts[0] + slope * (q - q_pts[0])

    def diff(q):
        return line(q, [35.0, 55.0], [math.log(1.5e6), math.log(3e5)]) - line(
            q, [30.0, 50.0], [math.log(1e6), math.log(4e5)]
        )

    expected = math.expm1((diff(q1) + diff(q2)) / 2.0)
    result = bd_rate(anchor, test)
    assert result.overlap == (q1, q2)
    assert result.delta == pytest.approx(expected, abs=1e-6)


def test_bd_rate_negative_means_savings():
    qualities = [30.0, 40.0, 50.0]
    anchor = make_curve([2e6, 4e6, 8e6], qualities)
    test = make_curve([1e6, 2e6, 4e6], qualities)
    assert bd_rate(anchor, test).delta == pytest.approx(-0.5, abs=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_bd_rate_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = random_curve(rng), random_curve(rng)
    ab = bd_rate(a, b).delta
    ba = bd_rate(b, a).delta
    assert (1.0 + ab) * (1.0 + ba) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
@settings(max_examples=40, deadline=None)
def test_bd_rate_invariant_to_rate_scaling(seed, factor):
    rng = np.random.default_rng(seed)
    a, b = random_curve(rng), random_curve(rng)
    scaled_a = make_curve([p.rate_bps * factor for p in a.points], a.qualities)
    scaled_b = make_curve([p.rate_bps * factor for p in b.points], b.qualities)
    assert bd_rate(scaled_a, scaled_b).delta == pytest.approx(
        bd_rate(a, b).delta, abs=1e-9
    )


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_bd_rate_quadrature_matches_adaptive_oracle(seed):
    # Compare the mean log-rate difference, the integration target itself.
    rng = np.random.default_rng(seed)
    a, b = random_curve(rng), random_curve(rng)
    result = bd_rate(a, b)
    q1, q2 = result.overlap
    fa = pchip_fit(a.qualities, a.log_rates)
    fb = pchip_fit(b.qualities, b.log_rates)
    kinks = sorted(q for q in set(a.qualities) | set(b.qualities) if q1 < q < q2)
    integral, _ = quad(
        lambda q: fb(q) - fa(q), q1, q2,
        points=kinks or None, limit=300, epsabs=1e-11, epsrel=1e-11,
    )
    mean_from_delta = math.log1p(result.delta)
    assert mean_from_delta == pytest.approx(integral / (q2 - q1), abs=1e-8)


def test_bd_rate_result_fields():
    curve = make_curve([1e6, 2e6], [30.0, 40.0], clip_id="clip", metric="m")
    result = bd_rate(curve, curve)
    assert isinstance(result, BdRateResult)
    assert result.delta > -1.0
    assert result.anchor_tag == result.test_tag

"""Rate-quality operating points and the Bjontegaard delta rate.

BD-Rate is computed in the log-rate domain: both curves are interpolated
as log(rate) over quality with the shape-preserving PCHIP scheme, their
difference is averaged over the shared quality range, and the delta is
exp(mean difference) - 1. Negative values mean the test curve saves
bitrate against the anchor.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import PchipInterpolator

DEFAULT_QPS = (27, 39, 49, 59, 63)

_GL_NODES, _GL_WEIGHTS = leggauss(64)


class CurveError(ValueError):
    """Invalid rate-quality data."""


class NoOverlapError(CurveError):
    """The two curves share no quality range."""


@dataclass(frozen=True)
class RdPoint:
    """One operating point: bitrate in bits/second, metric score, quantiser."""

    rate_bps: float
    quality: float
    qp: int

    def __post_init__(self):
        if self.rate_bps <= 0.0:
            raise CurveError(f"rate must be positive, got {self.rate_bps}")
        if not 0 <= self.qp <= 63:
            raise CurveError(f"qp {self.qp} outside [0, 63]")

    @property
    def log_rate(self) -> float:
        return math.log(self.rate_bps)


@dataclass(frozen=True)
class RdCurve:
    """Operating points for one clip and configuration under one metric."""

    points: tuple[RdPoint, ...]
    clip_id: str = ""
    config: str = ""
    metric: str = ""

    @staticmethod
    def from_points(
        points: Iterable[RdPoint], clip_id: str = "", config: str = "", metric: str = ""
    ) -> "RdCurve":
        """Sort by quality and validate; duplicate qualities (typically from
        the 100 dB cap) collapse to the highest-rate point with a warning."""
        ordered = sorted(points, key=lambda p: (p.quality, p.rate_bps))
        deduped: list[RdPoint] = []
        dropped = 0
        for point in ordered:
            if deduped and point.quality == deduped[-1].quality:
                deduped[-1] = point  # highest rate wins (sorted ascending)
                dropped += 1
            else:
                deduped.append(point)
        if dropped:
            warnings.warn(f"collapsed {dropped} duplicate-quality point(s)", stacklevel=2)
        if len(deduped) < 2:
            raise CurveError(f"need at least 2 distinct-quality points, got {len(deduped)}")
        return RdCurve(tuple(deduped), clip_id=clip_id, config=config, metric=metric)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    @property
    def log_rates(self) -> np.ndarray:
        return np.array([p.log_rate for p in self.points])

    def tag(self) -> str:
        return f"{self.clip_id}/{self.config}/{self.metric}"

    def to_csv(self) -> str:
        lines = ["qp,bitrate_bps,quality,metric"]
        for p in self.points:
            lines.append(f"{p.qp},{p.rate_bps!r},{p.quality!r},{self.metric}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str | Path, clip_id: str = "", config: str = "") -> "RdCurve":
        if isinstance(text, Path):
            text = text.read_text()
        rows = [line.split(",") for line in text.strip().splitlines()]
        if not rows or rows[0][:3] != ["qp", "bitrate_bps", "quality"]:
            raise CurveError("missing qp,bitrate_bps,quality header")
        metric = ""
        points = []
        for row in rows[1:]:
            points.append(RdPoint(rate_bps=float(row[1]), quality=float(row[2]), qp=int(row[0])))
            if len(row) > 3:
                metric = row[3]
        return RdCurve.from_points(points, clip_id=clip_id, config=config, metric=metric)

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "config": self.config,
            "metric": self.metric,
            "points": [
                {"qp": p.qp, "bitrate_bps": p.rate_bps, "quality": p.quality}
                for p in self.points
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "RdCurve":
        points = [
            RdPoint(rate_bps=p["bitrate_bps"], quality=p["quality"], qp=p["qp"])
            for p in data["points"]
        ]
        return RdCurve.from_points(
            points, clip_id=data.get("clip_id", ""), config=data.get("config", ""),
            metric=data.get("metric", ""),
        )


@dataclass(frozen=True)
class BdRateResult:
    """BD-Rate outcome: delta as a fraction plus the quality range used."""

    delta: float
    overlap: tuple[float, float]
    anchor_tag: str = ""
    test_tag: str = ""

    @property
    def percent(self) -> float:
        return 100.0 * self.delta


def pchip_fit(qualities: Sequence[float], log_rates: Sequence[float]) -> PchipInterpolator:
    """Shape-preserving cubic Hermite interpolant (Fritsch-Carlson slopes)."""
    q = np.asarray(qualities, dtype=np.float64)
    r = np.asarray(log_rates, dtype=np.float64)
    if q.ndim != 1 or len(q) < 2:
        raise CurveError("need at least 2 knots")
    if np.any(np.diff(q) <= 0.0):
        raise CurveError("knot qualities must be strictly increasing")
    return PchipInterpolator(q, r, extrapolate=True)


def pchip_eval(interp: PchipInterpolator, quality) -> np.ndarray | float:
    out = interp(quality)
    return float(out) if np.ndim(quality) == 0 else np.asarray(out, dtype=np.float64)


def overlap_range(anchor: RdCurve, test: RdCurve) -> tuple[float, float]:
    """Shared quality interval [Q1, Q2]; raises NoOverlapError when empty."""
    q1 = max(anchor.qualities.min(), test.qualities.min())
    q2 = min(anchor.qualities.max(), test.qualities.max())
    if q1 >= q2:
        raise NoOverlapError(
            f"no quality overlap between {anchor.tag()} and {test.tag()} ({q1} >= {q2})"
        )
    return float(q1), float(q2)


def bd_rate(anchor: RdCurve, test: RdCurve) -> BdRateResult:
    """Bjontegaard delta rate of test against anchor.

    The integrand (test log rate minus anchor log rate) is integrated with
    64-node Gauss-Legendre quadrature per segment of the union of both
    knot grids, which is exact for the piecewise-cubic interpolants.
    """
    q1, q2 = overlap_range(anchor, test)
    f_anchor = pchip_fit(anchor.qualities, anchor.log_rates)
    f_test = pchip_fit(test.qualities, test.log_rates)

    knots = np.unique(np.concatenate([[q1], anchor.qualities, test.qualities, [q2]]))
    knots = knots[(knots >= q1) & (knots <= q2)]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        x = mid + half * _GL_NODES
        total += half * float(np.dot(_GL_WEIGHTS, f_test(x) - f_anchor(x)))
    mean_diff = total / (q2 - q1)
    return BdRateResult(
        delta=math.expm1(mean_diff),
        overlap=(q1, q2),
        anchor_tag=anchor.tag(),
        test_tag=test.tag(),
    )

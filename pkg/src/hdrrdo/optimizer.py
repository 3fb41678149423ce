"""Powell direct search and the rate-distortion cost functions it drives.

The lambda-multiplier search runs in (ln k1, ln k2) so positivity needs no
constraint handling; the chroma-offset search runs directly in
(k_offset, l_offset). Infeasible evaluations (curves with no quality
overlap) cost a fixed penalty so the search stays numeric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .harness import ChromaOffsetPolicy, CodecHarness, HarnessError
from .rdcurve import DEFAULT_QPS, CurveError, NoOverlapError, RdCurve, bd_rate

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_SHRINK_STEPS = (1.0, 0.5, 0.25)


class _BudgetExhausted(Exception):
    pass


@dataclass
class SearchOptions:
    """Direct-search configuration.

    ``step`` is the initial per-axis move (scalar or one value per axis),
    ``cost_tol`` the absolute cost improvement per cycle below which the
    search stops, and ``penalty`` the cost assigned to infeasible points.
    """

    start: tuple[float, ...] = (0.0, 0.0)
    step: float | tuple[float, ...] = 0.25
    cost_tol: float = 0.0005
    step_tol: float = 1e-3
    max_evaluations: int = 100
    max_cycles: int = 20
    bounds: tuple[tuple[float, float] | None, ...] | None = None
    penalty: float = 1.0

    def __post_init__(self):
        if self.cost_tol <= 0.0:
            raise ValueError("cost_tol must be positive")
        if self.max_cycles < 1 or self.max_evaluations < 1:
            raise ValueError("iteration budgets must be at least 1")

    def steps(self, n: int) -> np.ndarray:
        if np.isscalar(self.step):
            return np.full(n, float(self.step))
        return np.asarray(self.step, dtype=np.float64)


@dataclass
class OptimizationTrace:
    """Every evaluated point with its cost, plus convergence bookkeeping."""

    evaluations: list[tuple[tuple[float, ...], float]]
    best_point: tuple[float, ...]
    best_cost: float
    reason: str  # tolerance | max-iter | stall
    cycles: int
    total_encodes: int = 0

    @property
    def n_evaluations(self) -> int:
        return len(self.evaluations)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"point": list(point), "cost": cost}) for point, cost in self.evaluations
        ]
        lines.append(
            json.dumps(
                {
                    "best_point": list(self.best_point),
                    "best_cost": self.best_cost,
                    "reason": self.reason,
                    "cycles": self.cycles,
                    "evaluations": self.n_evaluations,
                    "total_encodes": self.total_encodes,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "OptimizationTrace":
        rows = [json.loads(line) for line in text.strip().splitlines()]
        summary = rows[-1]
        return OptimizationTrace(
            evaluations=[(tuple(r["point"]), r["cost"]) for r in rows[:-1]],
            best_point=tuple(summary["best_point"]),
            best_cost=summary["best_cost"],
            reason=summary["reason"],
            cycles=summary["cycles"],
            total_encodes=summary["total_encodes"],
        )


def _step_limits(
    origin: np.ndarray, direction: np.ndarray, bounds
) -> tuple[float, float]:
    t_lo, t_hi = -math.inf, math.inf
    if bounds:
        for i, axis_bounds in enumerate(bounds):
            if axis_bounds is None or direction[i] == 0.0:
                continue
            lo, hi = axis_bounds
            a = (lo - origin[i]) / direction[i]
            b = (hi - origin[i]) / direction[i]
            t_lo = max(t_lo, min(a, b))
            t_hi = min(t_hi, max(a, b))
    return min(t_lo, 0.0), max(t_hi, 0.0)


def _line_min(
    f: Callable[[np.ndarray], float],
    origin: np.ndarray,
    direction: np.ndarray,
    f0: float,
    opts: SearchOptions,
) -> tuple[float, float]:
    """Bracket by doubling, refine by golden section; earliest best wins."""
    direction = np.asarray(direction, dtype=np.float64)
    dnorm = float(np.linalg.norm(direction))
    if dnorm == 0.0:
        raise ValueError("direction must be non-zero")
    t_lo, t_hi = _step_limits(origin, direction, opts.bounds)
    seen: list[tuple[float, float]] = [(0.0, f0)]

    def g(t: float) -> float:
        value = f(origin + t * direction)
        seen.append((t, value))
        return value

    def clamp(t: float) -> float:
        return min(t_hi, max(t_lo, t))

    # Probe both signs at successively halved steps until something improves.
    start_t = start_f = None
    for scale in _SHRINK_STEPS:
        for sign in (1.0, -1.0):
            t = clamp(sign * scale)
            if t == 0.0:
                continue
            ft = g(t)
            if ft < f0:
                start_t, start_f = t, ft
                break
        if start_t is not None:
            break

    if start_t is None:
        return 0.0, f0

    prev_t, t, ft = 0.0, start_t, start_f
    while True:
        nxt = clamp(2.0 * t)
        if nxt == t:
            break  # boundary reached; refine between prev_t and t
        fn = g(nxt)
        if fn >= ft:
            t = nxt  # minimum bracketed inside (prev_t, nxt)
            break
        prev_t, t, ft = t, nxt, fn
    lo, hi = sorted((prev_t, t))

    xtol = opts.step_tol / dnorm
    if hi - lo > xtol:
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        f1, f2 = g(x1), g(x2)
        while hi - lo > xtol:
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _INVPHI * (hi - lo)
                f1 = g(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _INVPHI * (hi - lo)
                f2 = g(x2)

    best_t, best_f = seen[0]
    for t, value in seen[1:]:
        if value < best_f:
            best_t, best_f = t, value
    return best_t, best_f


def line_minimize(
    cost: Callable[[Sequence[float]], float],
    origin: Sequence[float],
    direction: Sequence[float],
    opts: SearchOptions | None = None,
) -> float:
    """Step along ``direction`` that minimises the cost from ``origin``."""
    opts = opts or SearchOptions(start=tuple(origin))
    origin = np.asarray(origin, dtype=np.float64)
    f = lambda x: float(cost(tuple(x)))
    t, _ = _line_min(f, origin, np.asarray(direction, dtype=np.float64), f(origin), opts)
    return t


def powell_minimize(
    cost: Callable[[tuple[float, ...]], float], opts: SearchOptions
) -> OptimizationTrace:
    """Powell's conjugate-direction search.

    Each cycle line-minimises along the current direction set, then along
    the net cycle displacement, replacing the direction of largest single
    decrease with that displacement. Stops when a cycle improves the cost
    by less than ``cost_tol``, when the evaluation or cycle budget runs
    out, or when a cycle produces no movement at all.
    """
    start = np.asarray(opts.start, dtype=np.float64)
    n = len(start)
    evaluations: list[tuple[tuple[float, ...], float]] = []

    def f(x: np.ndarray) -> float:
        if len(evaluations) >= opts.max_evaluations:
            raise _BudgetExhausted
        value = float(cost(tuple(float(v) for v in x)))
        evaluations.append((tuple(float(v) for v in x), value))
        return value

    directions = [opts.steps(n)[i] * np.eye(n)[i] for i in range(n)]
    x = start.copy()
    reason = "max-iter"
    cycles = 0
    try:
        fx = f(x)
        for _ in range(opts.max_cycles):
            cycles += 1
            cycle_start_cost = fx
            cycle_start_x = x.copy()
            decreases = []
            for direction in directions:
                t, ft = _line_min(f, x, direction, fx, opts)
                decreases.append(fx - ft)
                x = x + t * direction
                fx = ft
            displacement = x - cycle_start_x
            moved = float(np.linalg.norm(displacement)) > 0.0
            if moved:
                t, ft = _line_min(f, x, displacement, fx, opts)
                x = x + t * displacement
                fx = ft
                directions[int(np.argmax(decreases))] = displacement
            if cycle_start_cost - fx < opts.cost_tol:
                reason = "tolerance"
                break
            if not moved:
                reason = "stall"
                break
        else:
            reason = "max-iter"
    except _BudgetExhausted:
        reason = "max-iter"

    best_point, best_cost = evaluations[0]
    for point, value in evaluations[1:]:
        if value < best_cost:
            best_point, best_cost = point, value
    return OptimizationTrace(
        evaluations=evaluations,
        best_point=best_point,
        best_cost=best_cost,
        reason=reason,
        cycles=cycles,
    )


# ---------------------------------------------------------------------------
# Rate-distortion cost functions
# ---------------------------------------------------------------------------


def lambda_cost(
    harness: CodecHarness,
    clip_id: str,
    k1: float,
    k2: float,
    metric: str,
    qps: Sequence[int] = DEFAULT_QPS,
    chroma_policy: ChromaOffsetPolicy | None = None,
    adapter: str = "mock",
    preset: str = "ra-speed6",
    anchor: RdCurve | None = None,
    penalty: float = 1.0,
) -> float:
    """BD-Rate of (k1, k2) against the (1, 1) baseline; lower is better."""
    try:
        if anchor is None:
            anchor = harness.rd_curve(
                clip_id, metric, 1.0, 1.0, qps, chroma_policy, adapter, preset
            )
        test = harness.rd_curve(clip_id, metric, k1, k2, qps, chroma_policy, adapter, preset)
        return bd_rate(anchor, test).delta
    except NoOverlapError:
        return penalty
    except CurveError:
        return penalty
    except HarnessError as exc:
        raise HarnessError(f"clip {clip_id!r}: {exc}") from exc


def optimize_lambda(
    harness: CodecHarness,
    clip_id: str,
    metric: str,
    qps: Sequence[int] = DEFAULT_QPS,
    chroma_policy: ChromaOffsetPolicy | None = None,
    adapter: str = "mock",
    preset: str = "ra-speed6",
    opts: SearchOptions | None = None,
) -> tuple[tuple[float, float], OptimizationTrace]:
    """Tune the per-clip multiplier pair from the (1, 1) default.

    The search runs over (ln k1, ln k2); the returned best point and the
    trace's recorded points are the multipliers themselves.
    """
    opts = opts or SearchOptions(start=(0.0, 0.0))
    anchor = harness.rd_curve(clip_id, metric, 1.0, 1.0, qps, chroma_policy, adapter, preset)

    def cost(log_point: tuple[float, ...]) -> float:
        return lambda_cost(
            harness,
            clip_id,
            math.exp(log_point[0]),
            math.exp(log_point[1]),
            metric,
            qps,
            chroma_policy,
            adapter,
            preset,
            anchor=anchor,
            penalty=opts.penalty,
        )

    trace = powell_minimize(cost, opts)
    trace.evaluations = [
        ((math.exp(p[0]), math.exp(p[1])), c) for p, c in trace.evaluations
    ]
    trace.best_point = (math.exp(trace.best_point[0]), math.exp(trace.best_point[1]))
    # one curve per evaluation plus the baseline curve
    trace.total_encodes = len(qps) * (trace.n_evaluations + 1)
    return trace.best_point, trace


def offset_cost(
    harness: CodecHarness,
    corpus: Sequence[str],
    k_offset: float,
    l_offset: float,
    metrics: Sequence[str] = ("de100", "wpsnr-y"),
    qps: Sequence[int] = DEFAULT_QPS,
    adapter: str = "mock",
    penalty: float = 1.0,
) -> float:
    """Summed BD-Rate of offset-enabled encodes against the no-offset baseline.

    Evaluated over a corpus of still-image clips in the all-intra preset;
    the per-clip metric sum is averaged over the corpus.
    """
    policy = ChromaOffsetPolicy(k_offset=k_offset, l_offset=l_offset)
    total = 0.0
    for clip_id in corpus:
        for metric in metrics:
            try:
                baseline = harness.rd_curve(
                    clip_id, metric, 1.0, 1.0, qps, None, adapter, preset="all-intra"
                )
                test = harness.rd_curve(
                    clip_id, metric, 1.0, 1.0, qps, policy, adapter, preset="all-intra"
                )
                total += bd_rate(baseline, test).delta
            except (NoOverlapError, CurveError):
                total += penalty
    return total / len(corpus)


def optimize_offsets(
    harness: CodecHarness,
    corpus: Sequence[str],
    metrics: Sequence[str] = ("de100", "wpsnr-y"),
    qps: Sequence[int] = DEFAULT_QPS,
    adapter: str = "mock",
    opts: SearchOptions | None = None,
) -> tuple[tuple[float, float], OptimizationTrace]:
    """Search the chroma-offset line parameters over a still-image corpus."""
    opts = opts or SearchOptions(start=(-0.46, 9.26), step=(0.05, 0.5))

    def cost(point: tuple[float, ...]) -> float:
        return offset_cost(
            harness, corpus, point[0], point[1], metrics, qps, adapter, penalty=opts.penalty
        )

    trace = powell_minimize(cost, opts)
    trace.total_encodes = len(qps) * len(corpus) * len(metrics) * (trace.n_evaluations + 1)
    return (trace.best_point[0], trace.best_point[1]), trace

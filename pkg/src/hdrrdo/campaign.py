"""Corpus-level optimisation campaigns and their reports.

A campaign optimises the per-clip multiplier pair under each requested
optimisation metric, then scores every configuration under every
evaluation metric as a BD-Rate matrix (mean over clips). Chroma-offset
columns are evaluated against the offset-enabled baseline encoder, plain
columns against the plain baseline. Reports render as a winner-annotated
text table, a Spearman correlation matrix, and an SVG heatmap.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .harness import DEFAULT_CHROMA_POLICY, ChromaOffsetPolicy, CodecHarness
from .optimizer import OptimizationTrace, SearchOptions, optimize_lambda
from .rdcurve import DEFAULT_QPS, bd_rate


class CampaignError(ValueError):
    """Invalid campaign configuration."""


@dataclass(frozen=True)
class CampaignColumn:
    """One configuration column of the result matrix."""

    label: str
    opt_metric: str | None  # None for the unoptimised offset-enabled baseline
    chroma: bool

    @property
    def anchor_chroma(self) -> bool:
        """Offset columns other than Default+ are scored against the CO baseline."""
        return self.chroma and self.opt_metric is not None


@dataclass
class CampaignConfig:
    clips: list[str]
    opt_metrics: list[str]
    eval_metrics: list[str]
    output_dir: str | Path = "campaign-out"
    chroma_mode: str = "off"  # off | on | both
    adapter: str = "mock"
    qps: tuple[int, ...] = DEFAULT_QPS
    workers: int = 1
    max_evaluations: int = 100
    cost_tol: float = 0.0005

    def __post_init__(self):
        if not self.clips or not self.opt_metrics or not self.eval_metrics:
            raise CampaignError("clips and metric lists must be non-empty")
        if self.chroma_mode not in ("off", "on", "both"):
            raise CampaignError(f"bad chroma_mode {self.chroma_mode!r}")
        self.qps = tuple(self.qps)

    @staticmethod
    def from_json(source: str | Path | dict) -> "CampaignConfig":
        if isinstance(source, (str, Path)):
            source = json.loads(Path(source).read_text())
        known = {f for f in CampaignConfig.__dataclass_fields__}
        return CampaignConfig(**{k: v for k, v in source.items() if k in known})

    def columns(self) -> list[CampaignColumn]:
        cols: list[CampaignColumn] = []
        if self.chroma_mode in ("off", "both"):
            cols.extend(CampaignColumn(m, m, False) for m in self.opt_metrics)
        if self.chroma_mode in ("on", "both"):
            cols.append(CampaignColumn("Default+", None, True))
            cols.extend(CampaignColumn(f"{m}+", m, True) for m in self.opt_metrics)
        return cols

    def digest(self) -> str:
        payload = json.dumps(
            {
                "clips": self.clips,
                "opt_metrics": self.opt_metrics,
                "eval_metrics": self.eval_metrics,
                "chroma_mode": self.chroma_mode,
                "adapter": self.adapter,
                "qps": list(self.qps),
                "max_evaluations": self.max_evaluations,
                "cost_tol": self.cost_tol,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class RunStats:
    """Volatile run bookkeeping, kept out of the persisted payload."""

    new_encodes: int = 0
    evaluations: int = 0


@dataclass
class CampaignResult:
    config_digest: str
    version: str
    columns: list[str]
    eval_metrics: list[str]
    clips: list[str]
    best_points: dict  # clip -> column -> {"k1": .., "k2": ..}
    per_clip: dict  # clip -> column -> eval metric -> BD fraction
    matrix: dict  # eval metric -> column -> mean BD fraction
    failures: dict = field(default_factory=dict)
    stats: RunStats = field(default_factory=RunStats)

    def to_payload(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "version": self.version,
            "columns": self.columns,
            "eval_metrics": self.eval_metrics,
            "clips": self.clips,
            "best_points": self.best_points,
            "per_clip": self.per_clip,
            "matrix": self.matrix,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=1)

    @staticmethod
    def from_json(source: str | Path) -> "CampaignResult":
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            source = Path(source).read_text()
        data = json.loads(source)
        return CampaignResult(
            config_digest=data["config_digest"],
            version=data["version"],
            columns=data["columns"],
            eval_metrics=data["eval_metrics"],
            clips=data["clips"],
            best_points=data["best_points"],
            per_clip=data["per_clip"],
            matrix=data["matrix"],
            failures=data.get("failures", {}),
        )

    def to_table(self, annotations: Mapping[str, tuple[str, str]] | None = None) -> "CrossMetricTable":
        rows = []
        values = []
        for metric in self.eval_metrics:
            dr, plane = (annotations or {}).get(metric, ("", ""))
            rows.append((metric, dr, plane))
            values.append([100.0 * self.matrix[metric][col] for col in self.columns])
        return CrossMetricTable(rows=rows, columns=list(self.columns), values=values)


def _adapter_invocations(harness: CodecHarness, adapter: str) -> int:
    backend = harness.adapters[adapter]
    return getattr(backend, "invocations", 0)


def run_campaign(config: CampaignConfig, harness: CodecHarness) -> CampaignResult:
    """Optimise and evaluate every clip under every configuration column.

    Clips are independent and may run on a thread pool; results are merged
    in config order so the matrix does not depend on scheduling. Per-clip
    failures are recorded and the remaining clips still complete.
    """
    columns = config.columns()
    invocations_before = _adapter_invocations(harness, config.adapter)

    def evaluate_clip(clip_id: str) -> tuple[dict, dict, dict]:
        best_points: dict = {}
        scores: dict = {}
        traces: dict = {}
        plain_anchor = {
            m: harness.rd_curve(clip_id, m, 1.0, 1.0, config.qps, None, config.adapter)
            for m in config.eval_metrics
        }
        co_anchor = {}
        if any(col.chroma for col in columns):
            co_anchor = {
                m: harness.rd_curve(
                    clip_id, m, 1.0, 1.0, config.qps, DEFAULT_CHROMA_POLICY, config.adapter
                )
                for m in config.eval_metrics
            }
        for col in columns:
            policy = DEFAULT_CHROMA_POLICY if col.chroma else None
            if col.opt_metric is None:
                k1 = k2 = 1.0
            else:
                opts = SearchOptions(
                    start=(0.0, 0.0),
                    max_evaluations=config.max_evaluations,
                    cost_tol=config.cost_tol,
                )
                (k1, k2), trace = optimize_lambda(
                    harness,
                    clip_id,
                    col.opt_metric,
                    config.qps,
                    policy,
                    config.adapter,
                    opts=opts,
                )
                traces[col.label] = trace
            best_points[col.label] = {"k1": k1, "k2": k2}
            col_scores = {}
            anchors = co_anchor if col.anchor_chroma else plain_anchor
            for metric in config.eval_metrics:
                test = harness.rd_curve(
                    clip_id, metric, k1, k2, config.qps, policy, config.adapter
                )
                col_scores[metric] = bd_rate(anchors[metric], test).delta
            scores[col.label] = col_scores
        return best_points, scores, traces

    best_points: dict = {}
    per_clip: dict = {}
    failures: dict = {}
    all_traces: dict = {}

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {clip: pool.submit(evaluate_clip, clip) for clip in config.clips}
        outcomes = {clip: fut for clip, fut in futures.items()}
    else:
        outcomes = None

    for clip in config.clips:
        try:
            if outcomes is not None:
                points, scores, traces = outcomes[clip].result()
            else:
                points, scores, traces = evaluate_clip(clip)
            best_points[clip] = points
            per_clip[clip] = scores
            all_traces[clip] = traces
        except Exception as exc:  # noqa: BLE001 - campaign must keep going
            failures[clip] = f"{type(exc).__name__}: {exc}"

    matrix: dict = {}
    healthy = [c for c in config.clips if c not in failures]
    for metric in config.eval_metrics:
        matrix[metric] = {}
        for col in columns:
            cells = [per_clip[c][col.label][metric] for c in healthy]
            # fsum is correctly rounded, so the mean is clip-order invariant
            matrix[metric][col.label] = math.fsum(cells) / len(cells) if cells else math.nan

    evaluations = sum(
        t.n_evaluations for traces in all_traces.values() for t in traces.values()
    )
    result = CampaignResult(
        config_digest=config.digest(),
        version=__version__,
        columns=[c.label for c in columns],
        eval_metrics=list(config.eval_metrics),
        clips=list(config.clips),
        best_points=best_points,
        per_clip=per_clip,
        matrix=matrix,
        failures=failures,
        stats=RunStats(
            new_encodes=_adapter_invocations(harness, config.adapter) - invocations_before,
            evaluations=evaluations,
        ),
    )
    _persist(config, result, all_traces)
    return result


def _persist(config: CampaignConfig, result: CampaignResult, traces: dict) -> None:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json())
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    for clip, cols in traces.items():
        for label, trace in cols.items():
            safe = label.replace("+", "_co").replace("/", "_")
            (trace_dir / f"{clip}__{safe}.jsonl").write_text(trace.to_jsonl())


# ---------------------------------------------------------------------------
# Rank correlation
# ---------------------------------------------------------------------------


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either input has zero rank variance, where the
    coefficient is undefined.
    """
    if len(x) != len(y):
        raise ValueError("inputs must have equal length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = stats.spearmanr(x, y).statistic
    return float(rho)


@dataclass
class CorrelationMatrix:
    metrics: list[str]
    rho: np.ndarray

    def to_csv(self) -> str:
        lines = ["metric," + ",".join(self.metrics)]
        for name, row in zip(self.metrics, self.rho):
            cells = ["" if math.isnan(v) else f"{v:.6f}" for v in row]
            lines.append(name + "," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_svg(self) -> str:
        return _heatmap_svg(self.metrics, self.rho)


def correlation_matrix(result: CampaignResult) -> CorrelationMatrix:
    """Pairwise Spearman correlation of the per-clip BD-Rate gains.

    Each (clip, column) pair is one observation; each evaluation metric is
    one variable. The matrix is symmetric with a unit diagonal.
    """
    metrics = result.eval_metrics
    if len(metrics) < 2:
        raise CampaignError("need at least two evaluation metrics")
    healthy = [c for c in result.clips if c not in result.failures]
    vectors = {
        m: [result.per_clip[c][col][m] for c in healthy for col in result.columns]
        for m in metrics
    }
    n = len(metrics)
    rho = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            value = spearman(vectors[metrics[i]], vectors[metrics[j]])
            rho[i, j] = rho[j, i] = value
    return CorrelationMatrix(metrics=list(metrics), rho=rho)


def _heat_colour(value: float) -> str:
    if math.isnan(value):
        return "#d0d0d0"
    value = max(-1.0, min(1.0, value))
    if value >= 0:
        # white -> red
        frac = value
        r, g, b = 255, round(255 - 178 * frac), round(255 - 212 * frac)
    else:
        frac = -value
        r, g, b = round(255 - 222 * frac), round(255 - 153 * frac), round(255 - 83 * frac)
    return f"#{r:02x}{g:02x}{b:02x}"


def _heatmap_svg(labels: Sequence[str], values: np.ndarray, cell: int = 64) -> str:
    n = len(labels)
    margin = 110
    size = margin + n * cell + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'font-family="monospace" font-size="11">'
    ]
    for j, label in enumerate(labels):
        x = margin + j * cell + cell / 2
        parts.append(
            f'<text x="{x}" y="{margin - 8}" text-anchor="end" '
            f'transform="rotate(-45 {x} {margin - 8})">{label}</text>'
        )
    for i, label in enumerate(labels):
        y = margin + i * cell
        parts.append(f'<text x="{margin - 6}" y="{y + cell / 2 + 4}" text-anchor="end">{label}</text>')
        for j in range(n):
            v = float(values[i, j])
            x = margin + j * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_colour(v)}" stroke="#808080"/>'
            )
            text = "" if math.isnan(v) else f"{v:.2f}"
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle">{text}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Cross-metric table rendering
# ---------------------------------------------------------------------------


@dataclass
class CrossMetricTable:
    """Evaluation-metric rows against optimisation-configuration columns.

    Column labels ending in "+" are chroma-offset configurations. Values
    are BD-Rate percentages, lower is better.
    """

    rows: list[tuple[str, str, str]]  # (metric, dynamic range, plane)
    columns: list[str]
    values: list[list[float]]

    @staticmethod
    def is_co_column(label: str) -> bool:
        return label.endswith("+")

    def winners(self) -> list[tuple[int | None, int | None]]:
        """Per row: (best plain column index, best chroma-offset column index).

        Best means the lowest BD-Rate; ties go to the earliest column.
        """
        plain = [i for i, c in enumerate(self.columns) if not self.is_co_column(c)]
        offset = [i for i, c in enumerate(self.columns) if self.is_co_column(c)]
        out = []
        for row_values in self.values:
            best_plain = min(plain, key=lambda i: row_values[i]) if plain else None
            best_offset = min(offset, key=lambda i: row_values[i]) if offset else None
            out.append((best_plain, best_offset))
        return out

    def render(self) -> str:
        """Markdown-style table; the best plain cell per row is bold and the
        best chroma-offset cell is bold and underlined."""
        header = ["Metric", "DR", "Plane"] + list(self.columns)
        lines = ["| " + " | ".join(header) + " |"]
        lines.append("|" + "|".join("---" for _ in header) + "|")
        for (name, dr, plane), row_values, (best_plain, best_offset) in zip(
            self.rows, self.values, self.winners()
        ):
            cells = [name, dr, plane]
            for i, value in enumerate(row_values):
                text = f"{value:.3f}"
                if i == best_plain:
                    text = f"**{text}**"
                elif i == best_offset:
                    text = f"__**{text}**__"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": [list(r) for r in self.rows],
                "columns": self.columns,
                "values": self.values,
            },
            indent=1,
        )

    @staticmethod
    def from_json(source: str | Path) -> "CrossMetricTable":
        if isinstance(source, Path):
            source = source.read_text()
        data = json.loads(source)
        return CrossMetricTable(
            rows=[tuple(r) for r in data["rows"]],
            columns=data["columns"],
            values=data["values"],
        )

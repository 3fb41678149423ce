"""Command-line front end.

Subcommands: metrics, bdrate, optimize, offset-search, campaign, report.
Pass --json for machine-readable output on stdout. Exit status 0 on
success, 1 on runtime failure (partial campaign failures included), 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, campaign as campaign_mod, metrics as metrics_mod
from .harness import CACHE_ENV_VAR, harness_from_corpus
from .optimizer import SearchOptions, optimize_lambda, optimize_offsets
from .rdcurve import DEFAULT_QPS, RdCurve, bd_rate
from .y4m import read_y4m


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdrrdo",
        description="HDR rate-distortion lab: metrics, BD-Rate and multiplier tuning",
    )
    parser.add_argument("--version", action="version", version=f"hdrrdo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="score a test stream against a reference")
    p.add_argument("reference", help="reference .y4m")
    p.add_argument("test", help="test .y4m")
    p.add_argument("--set", dest="metric_set", help="comma-separated metric names")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("bdrate", help="BD-Rate between two rate-quality CSV curves")
    p.add_argument("anchor", help="anchor curve CSV (qp,bitrate_bps,quality,metric)")
    p.add_argument("test", help="test curve CSV")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("optimize", help="tune the per-clip multiplier pair")
    p.add_argument("--clip", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--corpus", help="mock corpus JSON; omit for the built-in demo corpus")
    p.add_argument("--cache", help=f"encode cache directory (default ${CACHE_ENV_VAR})")
    p.add_argument("--qps", help="comma-separated quantiser anchors")
    p.add_argument("--chroma-offsets", action="store_true")
    p.add_argument("--budget", type=int, default=100, help="cost evaluation budget")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("offset-search", help="tune the chroma-offset line parameters")
    p.add_argument("--corpus", help="mock corpus JSON; omit for the built-in demo corpus")
    p.add_argument("--clips", help="comma-separated clip ids (default: all in corpus)")
    p.add_argument("--cache")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("campaign", help="run a corpus x metric optimisation campaign")
    p.add_argument("--config", required=True, help="campaign config JSON")
    p.add_argument("--corpus", help="mock corpus JSON; omit for the built-in demo corpus")
    p.add_argument("--cache")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("report", help="render results from a campaign directory")
    p.add_argument("--result", required=True, help="campaign output directory")
    p.add_argument("--table", action="store_true", help="print the cross-metric table")
    p.add_argument("--heatmap", help="write the correlation heatmap SVG to this path")
    p.add_argument("--json", action="store_true")
    return parser


def _cmd_metrics(args) -> int:
    _, ref = read_y4m(Path(args.reference))
    _, test = read_y4m(Path(args.test))
    names = args.metric_set.split(",") if args.metric_set else None
    report = metrics_mod.compute_all(ref, test, metric_set=names)
    if args.json:
        print(report.to_json())
    else:
        for name, score in report.scores.items():
            print(f"{name:10s} {score.aggregate:.4f}")
    return 0


def _cmd_bdrate(args) -> int:
    anchor = RdCurve.from_csv(Path(args.anchor))
    test = RdCurve.from_csv(Path(args.test))
    result = bd_rate(anchor, test)
    if args.json:
        print(
            json.dumps(
                {
                    "bd_rate": result.delta,
                    "percent": result.percent,
                    "overlap": list(result.overlap),
                }
            )
        )
    else:
        print(f"BD-Rate: {result.percent:+.3f}% over quality [{result.overlap[0]:.3f}, {result.overlap[1]:.3f}]")
    return 0


def _parse_qps(text: str | None) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",")) if text else DEFAULT_QPS


def _cmd_optimize(args) -> int:
    harness = harness_from_corpus(args.corpus, cache_dir=args.cache)
    policy_on = bool(args.chroma_offsets)
    from .harness import DEFAULT_CHROMA_POLICY

    (k1, k2), trace = optimize_lambda(
        harness,
        args.clip,
        args.metric,
        qps=_parse_qps(args.qps),
        chroma_policy=DEFAULT_CHROMA_POLICY if policy_on else None,
        opts=SearchOptions(start=(0.0, 0.0), max_evaluations=args.budget),
    )
    payload = {
        "clip": args.clip,
        "metric": args.metric,
        "k1": k1,
        "k2": k2,
        "bd_rate": trace.best_cost,
        "evaluations": trace.n_evaluations,
        "cycles": trace.cycles,
        "encodes": trace.total_encodes,
        "reason": trace.reason,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print(
            f"{args.clip} [{args.metric}] best k1={k1:.4f} k2={k2:.4f} "
            f"bd={100 * trace.best_cost:+.3f}% after {trace.n_evaluations} evaluations"
        )
    return 0


def _cmd_offset_search(args) -> int:
    harness = harness_from_corpus(args.corpus, cache_dir=args.cache)
    adapter = harness.adapters["mock"]
    clips = args.clips.split(",") if args.clips else sorted(adapter.models)
    (k_offset, l_offset), trace = optimize_offsets(
        harness, clips, opts=SearchOptions(start=(-0.46, 9.26), step=(0.05, 0.5), max_evaluations=args.budget)
    )
    payload = {
        "k_offset": k_offset,
        "l_offset": l_offset,
        "cost": trace.best_cost,
        "evaluations": trace.n_evaluations,
        "reason": trace.reason,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print(f"best k_offset={k_offset:.4f} l_offset={l_offset:.4f} cost={trace.best_cost:+.5f}")
    return 0


def _cmd_campaign(args) -> int:
    config = campaign_mod.CampaignConfig.from_json(Path(args.config))
    harness = harness_from_corpus(args.corpus, cache_dir=args.cache)
    result = campaign_mod.run_campaign(config, harness)
    if args.json:
        print(result.to_json())
    else:
        print(result.to_table().render())
        print(f"output: {config.output_dir} (new encodes: {result.stats.new_encodes})")
    if result.failures:
        print(f"failed clips: {sorted(result.failures)}", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    result = campaign_mod.CampaignResult.from_json(Path(args.result) / "result.json")
    emitted = False
    if args.table or not args.heatmap:
        table = result.to_table()
        print(table.to_json() if args.json else table.render())
        emitted = True
    if args.heatmap:
        corr = campaign_mod.correlation_matrix(result)
        Path(args.heatmap).write_text(corr.to_svg())
        if not args.json:
            print(f"wrote {args.heatmap}")
        emitted = True
    return 0 if emitted else 2


_HANDLERS = {
    "metrics": _cmd_metrics,
    "bdrate": _cmd_bdrate,
    "optimize": _cmd_optimize,
    "offset-search": _cmd_offset_search,
    "campaign": _cmd_campaign,
    "report": _cmd_report,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"hdrrdo: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line interface.

One subcommand per pipeline stage plus ``run`` (all stages), ``replay``
(all stages against a recorded transcript), and ``stats`` (dataset
diversity summary).

Exit codes: 0 success, 2 bad input (config, task, corpus, arguments),
3 generation failure (backend errors, seed shortfall), 4 stage-order
violations.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analytics, consistency
from .config import load_config
from .errors import (
    EmptyCorpus,
    GatewayError,
    InstructForgeError,
    ParseError,
    SeedShortfall,
    StageOrderError,
    UnknownDocument,
    ValidationError,
)
from .gateway import HttpBackend, LlmGateway, ReplayBackend
from .pipeline import REPORT_FILE, STAGES, TIMINGS_FILE, PipelineRun, atomic_write_text
from .task import load_task

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GENERATION = 3
EXIT_ORDER = 4

TRANSCRIPT_FILE = "transcript.jsonl"


def _add_pipeline_args(parser: argparse.ArgumentParser, *, stage_like: bool = True) -> None:
    parser.add_argument("--task", required=True, help="task definition file")
    parser.add_argument("--config", help="pipeline config file (key = value lines)")
    parser.add_argument("--out", required=True, help="run directory for checkpoints and outputs")
    parser.add_argument("--corpus", help="corpus root directory for the retrieve stage")
    parser.add_argument(
        "--backend",
        choices=("live", "mock"),
        default="live",
        help="live = HTTP endpoint from environment; mock = replay a transcript",
    )
    parser.add_argument(
        "--transcript",
        help="transcript to replay with --backend mock (live runs record to OUT/transcript.jsonl)",
    )
    parser.add_argument("--seed", type=int, help="override the config rng_seed")
    parser.add_argument(
        "--tau",
        type=float,
        help="override the consensus threshold for filtering (0 disables filtering)",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config field (repeatable)",
    )
    parser.add_argument("--parallelism", type=int, default=1, help="concurrent gateway calls")
    parser.add_argument("--skip-expansion", action="store_true", help="skip keyword expansion")
    parser.add_argument("--skip-retrieval", action="store_true", help="skip corpus retrieval")
    parser.add_argument(
        "--no-cognitive-levels",
        action="store_true",
        help="generate instructions without question-type framing",
    )
    if stage_like:
        parser.add_argument(
            "--force",
            action="store_true",
            help="rerun a completed stage, discarding downstream checkpoints",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="instructforge",
        description="Synthesize an instruction-tuning dataset from a task definition.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_pipeline_args(stage_parser)

    run_parser = sub.add_parser("run", help="run every stage in order, resuming if possible")
    _add_pipeline_args(run_parser)

    replay_parser = sub.add_parser(
        "replay", help="run every stage against a recorded transcript"
    )
    _add_pipeline_args(replay_parser, stage_like=False)
    replay_parser.set_defaults(force=False)

    stats_parser = sub.add_parser("stats", help="diversity statistics for an exported dataset")
    stats_parser.add_argument("--dataset", required=True, help="dataset .jsonl file")
    stats_parser.add_argument(
        "--min-pair-frequency",
        type=int,
        default=1,
        help="ignore verb-noun pairs occurring fewer times than this",
    )
    stats_parser.add_argument("--sunburst", help="also write a verb,noun,count CSV here")
    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _build_run(args: argparse.Namespace) -> PipelineRun:
    overrides: dict[str, object] = _parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    config = load_config(args.config, overrides)
    task = load_task(args.task)
    out_dir = Path(args.out)

    replaying = args.command == "replay" or args.backend == "mock"
    if replaying:
        if not args.transcript:
            raise ValidationError("mock backend requires --transcript")
        backend = ReplayBackend(args.transcript)
        gateway = LlmGateway(backend)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        gateway = LlmGateway(HttpBackend(), transcript_path=out_dir / TRANSCRIPT_FILE)

    return PipelineRun(
        out_dir,
        task,
        config,
        gateway,
        corpus_dir=args.corpus,
        skip_expansion=args.skip_expansion,
        skip_retrieval=args.skip_retrieval,
        cognitive_levels=not args.no_cognitive_levels,
        tau_override=args.tau,
        parallelism=args.parallelism,
    )


def _merge_timings(run: PipelineRun) -> None:
    """Fold this process's stage timings into the sidecar file."""
    path = run.out_dir / TIMINGS_FILE
    merged: dict[str, float] = {}
    if path.is_file():
        merged.update(json.loads(path.read_text(encoding="utf-8")))
    merged.update({stage: round(seconds, 3) for stage, seconds in run.timings.items()})
    atomic_write_text(path, json.dumps(merged, indent=2) + "\n")


def _cmd_stage(args: argparse.Namespace) -> int:
    run = _build_run(args)
    with run.gateway:
        run.run_stage(args.command, force=args.force)
    _merge_timings(run)
    if args.command == "export":
        report = run.build_report()
        atomic_write_text(run.out_dir / REPORT_FILE, report.to_json())
        print(f"dataset: {run.checkpoint_path('export')}")
        print(f"report: {run.out_dir / REPORT_FILE}")
    stats = run.state.stage_stats[args.command]
    print(f"{args.command}: " + ", ".join(f"{k}={v}" for k, v in sorted(stats.items())))
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    run = _build_run(args)
    with run.gateway:
        report = run.run_all(force=args.force)
    _merge_timings(run)
    print(f"dataset: {run.checkpoint_path('export')} ({report.dataset_size} records)")
    print(f"report: {run.out_dir / REPORT_FILE}")
    print(f"llm calls: {report.llm_calls}")
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    rows = consistency.read_dataset(args.dataset)
    stats = analytics.compute_stats(rows, min_pair_frequency=args.min_pair_frequency)
    print(analytics.stats_table(stats))
    if args.sunburst:
        written = analytics.export_sunburst(stats, args.sunburst)
        print(f"sunburst rows: {written} -> {args.sunburst}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command in ("run", "replay"):
            return _cmd_run(args)
        return _cmd_stage(args)
    except StageOrderError as exc:
        log.error("%s", exc)
        return EXIT_ORDER
    except (GatewayError, SeedShortfall) as exc:
        log.error("%s", exc)
        return EXIT_GENERATION
    except (ParseError, ValidationError, EmptyCorpus, UnknownDocument, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except InstructForgeError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

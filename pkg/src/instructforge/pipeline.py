"""Resumable six-stage pipeline: seed, expand, retrieve, generate, filter, export.

Every stage reads its inputs from the previous stage's checkpoint and writes
its own atomically (temp file, then rename), so an interrupted run resumes
from the last completed stage and produces output identical to an
uninterrupted one. Per-stage randomness comes from streams derived by
hashing (root seed, stage name), which makes resumption order-independent.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import consistency, instructions, keywords, retrieval
from .config import PipelineConfig
from .errors import StageOrderError, ValidationError
from .gateway import LlmGateway
from .instructions import CognitiveLevel, GenerationJob, InstructionCandidate
from .task import TaskDefinition

log = logging.getLogger(__name__)

STAGES = ("seed", "expand", "retrieve", "generate", "filter", "export")

# Stage name -> label recorded in state.json once the stage has finished.
STAGE_LABELS = {
    "seed": "Seeded",
    "expand": "Expanded",
    "retrieve": "Retrieved",
    "generate": "Generated",
    "filter": "Filtered",
    "export": "Exported",
}

CHECKPOINT_FILES = {
    "seed": "keywords_seed.jsonl",
    "expand": "keywords_expanded.jsonl",
    "retrieve": "keywords_retrieved.jsonl",
    "generate": "candidates.jsonl",
    "filter": "records.jsonl",
    "export": "dataset.jsonl",
}

STATE_FILE = "state.json"
REPORT_FILE = "report.json"
TIMINGS_FILE = "timings.json"
FILTER_REPORT_FILE = "filter_report.json"


def stage_rng(seed: int, stage: str) -> random.Random:
    """Independent RNG stream per (seed, stage); stable across processes."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial checkpoint and a crash preserves the previous version."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


@dataclass
class PipelineState:
    """What has run so far; persisted as state.json in the run directory."""

    config_hash: str
    rng_seed: int
    completed: list[str] = field(default_factory=list)
    stage_stats: dict[str, dict] = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def stage_label(self) -> str:
        return STAGE_LABELS[self.completed[-1]] if self.completed else "Empty"

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "rng_seed": self.rng_seed,
            "completed": self.completed,
            "stage": self.stage_label,
            "checkpoints": {stage: CHECKPOINT_FILES[stage] for stage in self.completed},
            "stage_stats": self.stage_stats,
            "flags": self.flags,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineState":
        payload = json.loads(text)
        return cls(
            config_hash=payload["config_hash"],
            rng_seed=payload["rng_seed"],
            completed=list(payload["completed"]),
            stage_stats=dict(payload["stage_stats"]),
            flags=dict(payload.get("flags", {})),
        )


@dataclass(frozen=True)
class RunReport:
    """Deterministic run summary: counts and call totals, no wall times.

    Timing lives in a separate sidecar file because it differs between
    otherwise identical runs.
    """

    stages: dict[str, dict]
    llm_calls: int
    dataset_size: int
    config_hash: str
    rng_seed: int

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "rng_seed": self.rng_seed,
            "llm_calls": self.llm_calls,
            "dataset_size": self.dataset_size,
            "stages": self.stages,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def candidate_to_row(candidate: InstructionCandidate) -> dict:
    return {
        "job_id": candidate.job.job_id,
        "strategy": candidate.job.strategy,
        "keywords": list(candidate.job.keywords),
        "level": candidate.job.level.value,
        "instruction": candidate.text,
    }


def candidate_from_row(row: dict) -> InstructionCandidate:
    strategy = row["strategy"]
    level = CognitiveLevel(row["level"])
    if strategy == instructions.SINGLE:
        job = instructions.single_job(row["keywords"][0], level)
    else:
        job = instructions.pair_job(row["keywords"][0], row["keywords"][1], level)
    if job.job_id != row["job_id"]:
        raise ValidationError(f"checkpoint job_id mismatch for {row['job_id']!r}")
    return InstructionCandidate(text=row["instruction"], job=job, raw_completion=row["instruction"])


def record_to_row(record: consistency.InstructionRecord) -> dict:
    return {
        "instruction": record.instruction,
        "response": record.response,
        "answer_kind": record.consensus_answer.kind,
        "answer_value": record.consensus_answer.value,
        "consensus_fraction": record.consensus_fraction,
        "job_id": record.candidate.job.job_id,
        "strategy": record.candidate.job.strategy,
        "keywords": list(record.candidate.job.keywords),
        "level": record.candidate.job.level.value,
    }


def record_from_row(row: dict) -> consistency.InstructionRecord:
    candidate = candidate_from_row(
        {
            "job_id": row["job_id"],
            "strategy": row["strategy"],
            "keywords": row["keywords"],
            "level": row["level"],
            "instruction": row["instruction"],
        }
    )
    return consistency.InstructionRecord(
        instruction=row["instruction"],
        response=row["response"],
        consensus_answer=consistency.ExtractedAnswer(row["answer_kind"], row["answer_value"]),
        consensus_fraction=row["consensus_fraction"],
        candidate=candidate,
    )


def _rows_to_text(rows: list[dict]) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)


def _read_rows(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


class PipelineRun:
    """One run directory plus everything needed to advance it stage by stage."""

    def __init__(
        self,
        out_dir: str | Path,
        task: TaskDefinition,
        config: PipelineConfig,
        gateway: LlmGateway,
        *,
        corpus_dir: str | Path | None = None,
        skip_expansion: bool = False,
        skip_retrieval: bool = False,
        cognitive_levels: bool = True,
        tau_override: float | None = None,
        parallelism: int = 1,
    ) -> None:
        self.out_dir = Path(out_dir)
        self.task = task
        self.config = config
        self.gateway = gateway
        self.corpus_dir = Path(corpus_dir) if corpus_dir else None
        self.skip_expansion = skip_expansion
        self.skip_retrieval = skip_retrieval
        self.cognitive_levels = cognitive_levels
        self.tau_override = tau_override
        self.parallelism = parallelism
        self.timings: dict[str, float] = {}
        self.state = self._load_or_init_state()

    # -- state handling -----------------------------------------------------

    def _flags(self) -> dict:
        return {
            "skip_expansion": self.skip_expansion,
            "skip_retrieval": self.skip_retrieval,
            "cognitive_levels": self.cognitive_levels,
            "tau_override": self.tau_override,
        }

    def _load_or_init_state(self) -> PipelineState:
        state_path = self.out_dir / STATE_FILE
        if state_path.is_file():
            state = PipelineState.from_json(state_path.read_text(encoding="utf-8"))
            if state.config_hash != self.config.content_hash():
                raise ValidationError(
                    "config does not match the checkpointed run; "
                    "use a fresh output directory or the original config"
                )
            if state.rng_seed != self.config.rng_seed:
                raise ValidationError("rng_seed does not match the checkpointed run")
            return state
        return PipelineState(
            config_hash=self.config.content_hash(),
            rng_seed=self.config.rng_seed,
            flags=self._flags(),
        )

    def _save_state(self) -> None:
        self.state.flags = self._flags()
        atomic_write_text(self.out_dir / STATE_FILE, self.state.to_json())

    def checkpoint_path(self, stage: str) -> Path:
        return self.out_dir / CHECKPOINT_FILES[stage]

    def _invalidate_downstream(self, stage: str) -> None:
        position = STAGES.index(stage)
        for later in STAGES[position:]:
            if later in self.state.completed:
                self.state.completed.remove(later)
                self.state.stage_stats.pop(later, None)
            path = self.checkpoint_path(later)
            if path.exists():
                path.unlink()
        # The sidecar reports belong to filter/export and are rewritten by
        # those stages; stale copies are removed along with their stage.
        if "filter" not in self.state.completed:
            (self.out_dir / FILTER_REPORT_FILE).unlink(missing_ok=True)
        if "export" not in self.state.completed:
            (self.out_dir / REPORT_FILE).unlink(missing_ok=True)

    # -- stage running ------------------------------------------------------

    def run_stage(self, stage: str, force: bool = False) -> None:
        """Run one stage; predecessors must be complete.

        Rerunning a completed stage requires ``force``, which also discards
        every downstream checkpoint.
        """
        if stage not in STAGES:
            raise ValidationError(f"unknown stage: {stage!r}")
        position = STAGES.index(stage)
        missing = [name for name in STAGES[:position] if name not in self.state.completed]
        if missing:
            raise StageOrderError(
                f"cannot run {stage!r}: earlier stage(s) {missing} have not completed"
            )
        if stage in self.state.completed:
            if not force:
                raise StageOrderError(
                    f"stage {stage!r} already completed; pass force to rerun"
                )
            self._invalidate_downstream(stage)
        calls_before = self.gateway.stats.calls
        started = time.monotonic()
        stats = getattr(self, f"_stage_{stage}")()
        elapsed = time.monotonic() - started
        stats["llm_calls"] = self.gateway.stats.calls - calls_before
        self.state.completed.append(stage)
        self.state.stage_stats[stage] = stats
        self.timings[stage] = elapsed
        self._save_state()
        log.info("stage %s done in %.2fs: %s", stage, elapsed, stats)

    def run_all(self, force: bool = False) -> RunReport:
        """Run every stage in order, resuming past completed ones."""
        if force and self.state.completed:
            self._invalidate_downstream(STAGES[0])
        for stage in STAGES:
            if stage in self.state.completed:
                log.info("stage %s already complete, skipping", stage)
                continue
            self.run_stage(stage)
        report = self.build_report()
        atomic_write_text(self.out_dir / REPORT_FILE, report.to_json())
        atomic_write_text(
            self.out_dir / TIMINGS_FILE,
            json.dumps({k: round(v, 3) for k, v in self.timings.items()}, indent=2) + "\n",
        )
        return report

    def build_report(self) -> RunReport:
        if "export" not in self.state.completed:
            raise StageOrderError("report requires a completed export stage")
        total_calls = sum(
            stats.get("llm_calls", 0) for stats in self.state.stage_stats.values()
        )
        return RunReport(
            stages={name: dict(stats) for name, stats in self.state.stage_stats.items()},
            llm_calls=total_calls,
            dataset_size=self.state.stage_stats["export"]["dataset_size"],
            config_hash=self.state.config_hash,
            rng_seed=self.state.rng_seed,
        )

    # -- individual stages --------------------------------------------------

    def _rng(self, stage: str) -> random.Random:
        return stage_rng(self.config.rng_seed, stage)

    def _save_pool(self, pool: keywords.KeywordPool, stage: str) -> None:
        rows = [
            {
                "canonical": entry.keyword.canonical,
                "display": entry.keyword.display,
                "provenance": entry.provenance,
                "iteration": entry.iteration,
            }
            for entry in pool.entries()
        ]
        atomic_write_text(self.checkpoint_path(stage), _rows_to_text(rows))

    def _load_pool(self, stage: str) -> keywords.KeywordPool:
        pool = keywords.KeywordPool()
        for row in _read_rows(self.checkpoint_path(stage)):
            pool.add(
                keywords.Keyword(canonical=row["canonical"], display=row["display"]),
                row["provenance"],
                row["iteration"],
            )
        return pool

    def _stage_seed(self) -> dict:
        pool = keywords.seed_keywords(
            self.task,
            self.config.n_seed_keywords,
            self.gateway,
            temperature=self.config.generation_temperature,
            max_tokens=self.config.max_generation_tokens,
        )
        self._save_pool(pool, "seed")
        return {"keywords": len(pool)}

    def _stage_expand(self) -> dict:
        pool = self._load_pool("seed")
        before = len(pool)
        if self.skip_expansion:
            log.info("expansion skipped by flag")
        else:
            keywords.run_expansion(pool, self.task, self.config, self.gateway, self._rng("expand"))
        self._save_pool(pool, "expand")
        return {"new_keywords": len(pool) - before, "pool_size": len(pool)}

    def _stage_retrieve(self) -> dict:
        pool = self._load_pool("expand")
        before = len(pool)
        documents = 0
        if self.skip_retrieval:
            log.info("retrieval skipped by flag")
        else:
            if self.corpus_dir is None:
                raise ValidationError("retrieval requires a corpus directory (or skip_retrieval)")
            docs = retrieval.ingest_corpus(self.corpus_dir)
            documents = len(docs)
            index = retrieval.build_index(docs, k1=self.config.bm25_k1, b=self.config.bm25_b)
            retrieval.retrieval_augment(
                pool, self.task, index, self.config, self.gateway, self._rng("retrieve")
            )
        self._save_pool(pool, "retrieve")
        return {
            "new_keywords": len(pool) - before,
            "pool_size": len(pool),
            "documents": documents,
        }

    def _stage_generate(self) -> dict:
        pool = self._load_pool("retrieve")
        jobs = instructions.enumerate_jobs(pool, self.config, self._rng("generate"))
        candidates = instructions.generate_candidates(
            jobs,
            self.task,
            self.config,
            self.gateway,
            cognitive_levels=self.cognitive_levels,
            parallelism=self.parallelism,
        )
        rows = [candidate_to_row(candidate) for candidate in candidates]
        atomic_write_text(self.checkpoint_path("generate"), _rows_to_text(rows))
        return {
            "jobs": len(jobs),
            "candidates": len(candidates),
            "dropped": len(jobs) - len(candidates),
        }

    def _stage_filter(self) -> dict:
        candidates = [candidate_from_row(row) for row in _read_rows(self.checkpoint_path("generate"))]
        records, drops = consistency.filter_and_select(
            candidates,
            self.task,
            self.config,
            self.gateway,
            threshold=self.tau_override,
            parallelism=self.parallelism,
        )
        rows = [record_to_row(record) for record in records]
        atomic_write_text(self.checkpoint_path("filter"), _rows_to_text(rows))
        atomic_write_text(
            self.out_dir / FILTER_REPORT_FILE,
            json.dumps(drops, indent=2, sort_keys=True) + "\n",
        )
        return {"kept": len(records), **{f"dropped_{k}": v for k, v in drops.items()}}

    def _stage_export(self) -> dict:
        records = [record_from_row(row) for row in _read_rows(self.checkpoint_path("filter"))]
        rows_text = "".join(
            json.dumps(consistency.record_to_row(record), ensure_ascii=False) + "\n"
            for record in records
        )
        atomic_write_text(self.checkpoint_path("export"), rows_text)
        return {"dataset_size": len(records)}

"""Self-consistency filtering and dataset export.

Each candidate instruction is answered N times at sampling temperature; a
candidate survives only if the most common extracted answer reaches the
consensus threshold. The exported response is the earliest sample that gave
the consensus answer, so reasoning text and final answer always agree.
"""
from __future__ import annotations

import decimal
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .errors import GatewayError, ValidationError
from .gateway import GenerationRequest, LlmGateway
from .instructions import InstructionCandidate
from .task import (
    BOXED_LATEX,
    FINAL_ANSWER_LINE,
    MULTIPLE_CHOICE,
    YES_NO_MAYBE,
    AnswerFormat,
    TaskDefinition,
)

log = logging.getLogger(__name__)

OPTION = "option"
DECISION = "decision"
NUMERIC = "numeric"
EXPRESSION = "expression"
UNPARSEABLE = "unparseable"

DROP_REASONS = ("below_threshold", "unparseable_consensus", "backend", "truncated")


@dataclass(frozen=True)
class ExtractedAnswer:
    """A parsed final answer in canonical form.

    ``key`` is the string used for vote counting and tie-breaking; equal
    keys mean equal answers.
    """

    kind: str
    value: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (OPTION, DECISION, NUMERIC, EXPRESSION, UNPARSEABLE):
            raise ValidationError(f"unknown answer kind: {self.kind!r}")
        if self.kind == UNPARSEABLE and self.value:
            raise ValidationError("unparseable answers carry no value")

    @property
    def key(self) -> str:
        return f"{self.kind}:{self.value}"

    @property
    def is_unparseable(self) -> bool:
        return self.kind == UNPARSEABLE


UNPARSED = ExtractedAnswer(UNPARSEABLE)


def canonical_number(text: str) -> str | None:
    """Normalize a numeric string: strip currency/commas/space, drop the
    sign on zero and any trailing fractional zeros. None if not a number."""
    cleaned = re.sub(r"[,\s$€£¥]", "", text).rstrip(".")
    if not cleaned:
        return None
    try:
        value = decimal.Decimal(cleaned)
    except decimal.InvalidOperation:
        return None
    normalized = format(value.normalize(), "f")
    return "0" if normalized in ("-0", "+0") else normalized


def _extract_labeled_choice(raw: str, labels: Sequence[str]) -> str | None:
    """Find the last line carrying 'Answer: <label>'; label match is exact."""
    alternatives = "|".join(re.escape(label) for label in labels)
    pattern = re.compile(rf"(?i:answer)\s*:\s*<?({alternatives})>?")
    found: str | None = None
    for line in raw.splitlines():
        for match in pattern.finditer(line):
            found = match.group(1)
    return found


def extract_answer(raw: str, answer_format: AnswerFormat) -> ExtractedAnswer:
    """Parse a model reply under the task's answer grammar.

    Returns Unparseable exactly when no grammar rule matches; a matched
    final-answer line that is not numeric still parses, as an expression.
    """
    if answer_format.kind == MULTIPLE_CHOICE:
        label = _extract_labeled_choice(raw, answer_format.options)
        return ExtractedAnswer(OPTION, label) if label else UNPARSED
    if answer_format.kind == YES_NO_MAYBE:
        matches = re.findall(r"answer\s*:\s*<?(yes|no|maybe)>?", raw, re.IGNORECASE)
        return ExtractedAnswer(DECISION, matches[-1].lower()) if matches else UNPARSED
    if answer_format.kind == FINAL_ANSWER_LINE:
        matches = re.findall(r"final answer\s*:\s*(.+)", raw, re.IGNORECASE)
        if not matches:
            return UNPARSED
        tail = matches[-1].strip()
        number = canonical_number(tail)
        if number is not None:
            return ExtractedAnswer(NUMERIC, number)
        normalized = re.sub(r"\s+", " ", tail)
        return ExtractedAnswer(EXPRESSION, normalized) if normalized else UNPARSED
    if answer_format.kind == BOXED_LATEX:
        content = _last_boxed_content(raw)
        if content is None:
            return UNPARSED
        normalized = re.sub(r"\s+", " ", content).strip()
        return ExtractedAnswer(EXPRESSION, normalized) if normalized else UNPARSED
    raise ValidationError(f"unknown answer format: {answer_format.kind!r}")


def _last_boxed_content(raw: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}`` block, if any."""
    result: str | None = None
    for match in re.finditer(r"\\boxed\s*\{", raw):
        depth = 1
        start = match.end()
        for position in range(start, len(raw)):
            char = raw[position]
            if char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    result = raw[start:position]
                    break
    return result


@dataclass(frozen=True)
class ResponseSample:
    sample_index: int
    raw_text: str
    extracted: ExtractedAnswer


def extract_samples(texts: Sequence[str], answer_format: AnswerFormat) -> list[ResponseSample]:
    return [
        ResponseSample(index, text, extract_answer(text, answer_format))
        for index, text in enumerate(texts)
    ]


@dataclass(frozen=True)
class VoteResult:
    """Vote histogram over N samples plus the winning answer.

    An unparseable answer counts toward the denominator but can only win
    when every sample failed to parse; ties among parseable answers go to
    the lexicographically smallest canonical key, which keeps the result
    independent of sample order.
    """

    histogram: dict[ExtractedAnswer, int]
    consensus: ExtractedAnswer
    consensus_fraction: float
    n_samples: int


def compute_votes(samples: Sequence[ResponseSample]) -> VoteResult:
    if not samples:
        raise ValidationError("cannot vote over zero samples")
    histogram = Counter(sample.extracted for sample in samples)
    eligible = {answer: count for answer, count in histogram.items() if not answer.is_unparseable}
    if eligible:
        best_count = max(eligible.values())
        consensus = min(
            (answer for answer, count in eligible.items() if count == best_count),
            key=lambda answer: answer.key,
        )
    else:
        consensus = UNPARSED
    return VoteResult(
        histogram=dict(histogram),
        consensus=consensus,
        consensus_fraction=histogram[consensus] / len(samples),
        n_samples=len(samples),
    )


def render_response_prompt(instruction: str, task: TaskDefinition) -> str:
    """The instruction followed by the task's verbatim answer-format suffix."""
    return f"{instruction}\n\n{task.answer_format.suffix_text}"


@dataclass(frozen=True)
class InstructionRecord:
    """One retained instruction-response pair with its vote evidence."""

    instruction: str
    response: str
    consensus_answer: ExtractedAnswer
    consensus_fraction: float
    candidate: InstructionCandidate


def filter_and_select(
    candidates: Sequence[InstructionCandidate],
    task: TaskDefinition,
    config: PipelineConfig,
    gateway: LlmGateway,
    *,
    threshold: float | None = None,
    parallelism: int = 1,
) -> tuple[list[InstructionRecord], dict[str, int]]:
    """Vote every candidate and keep those that reach consensus.

    A candidate is retained iff its consensus fraction is at least the
    threshold and the consensus is parseable. ``threshold`` defaults to
    config.consistency_threshold; passing 0.0 disables thresholding while
    keeping the rest of the machinery (ablation support). Survivors past
    target_dataset_size are cut, preserving candidate order. Returns the
    records plus a drop-reason tally.
    """
    tau = config.consistency_threshold if threshold is None else threshold
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {tau!r}")
    requests = [
        GenerationRequest(
            prompt=render_response_prompt(candidate.text, task),
            temperature=config.generation_temperature,
            max_tokens=config.max_generation_tokens,
            n_samples=config.consistency_samples,
            request_tag=f"vote:{candidate.job.job_id}",
        )
        for candidate in candidates
    ]
    results = gateway.run_batch(requests, parallelism=parallelism)
    drops = {reason: 0 for reason in DROP_REASONS}
    records: list[InstructionRecord] = []
    for candidate, result in zip(candidates, results):
        if isinstance(result, GatewayError):
            drops["backend"] += 1
            continue
        samples = extract_samples(result.samples, task.answer_format)
        votes = compute_votes(samples)
        if votes.consensus.is_unparseable:
            drops["unparseable_consensus"] += 1
            continue
        if votes.consensus_fraction < tau:
            drops["below_threshold"] += 1
            continue
        response = next(
            sample.raw_text for sample in samples if sample.extracted == votes.consensus
        )
        records.append(
            InstructionRecord(
                instruction=candidate.text,
                response=response,
                consensus_answer=votes.consensus,
                consensus_fraction=votes.consensus_fraction,
                candidate=candidate,
            )
        )
    if len(records) > config.target_dataset_size:
        drops["truncated"] = len(records) - config.target_dataset_size
        records = records[: config.target_dataset_size]
    log.info("kept %d of %d candidates, drops=%s", len(records), len(candidates), drops)
    return records, drops


def record_to_row(record: InstructionRecord) -> dict:
    """The exported row shape; field order is part of the file format."""
    return {
        "instruction": record.instruction,
        "response": record.response,
        "answer": record.consensus_answer.value,
        "level": record.candidate.job.level.value,
        "keywords": list(record.candidate.job.keywords),
        "strategy": record.candidate.job.strategy,
        "consensus_fraction": record.consensus_fraction,
    }


def export_dataset(records: Sequence[InstructionRecord], path: str | Path) -> int:
    """Write records as UTF-8 JSON lines; returns the row count."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_row(record), ensure_ascii=False) + "\n")
    return len(records)


def read_dataset(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows

"""Instruction candidate generation across six cognitive levels.

Every keyword gets one single-keyword job per level; keyword pairs are
sampled into the four relational levels (Understand through Evaluate) until
the oversampled job budget is met. Oversampling exists because the
downstream consistency filter discards a sizable share of candidates.
"""
from __future__ import annotations

import enum
import hashlib
import logging
import math
import random
import re
from dataclasses import dataclass
from typing import Sequence

from .config import PipelineConfig
from .errors import GatewayError, ValidationError
from .gateway import GenerationRequest, LlmGateway
from .keywords import KeywordPool
from .task import TaskDefinition

log = logging.getLogger(__name__)

SINGLE = "single"
PAIR = "pair"

# Generate 1.5x the target so the consistency filter has slack to discard.
OVERSAMPLE_FACTOR = 1.5
# When the budget cannot hold every single-keyword job, keep this share of
# the budget for singles and fill the rest with pairs.
SINGLE_BUDGET_SHARE = 0.6


class CognitiveLevel(enum.Enum):
    REMEMBER = "Remember"
    UNDERSTAND = "Understand"
    APPLY = "Apply"
    ANALYZE = "Analyze"
    EVALUATE = "Evaluate"
    CREATE = "Create"

    @property
    def label(self) -> str:
        """Gerund form used in prompts, e.g. 'Applying'."""
        return _LABELS[self]

    @property
    def guidance(self) -> str:
        """One-sentence description of what questions at this level demand."""
        return _GUIDANCE[self]


_LABELS = {
    CognitiveLevel.REMEMBER: "Remembering",
    CognitiveLevel.UNDERSTAND: "Understanding",
    CognitiveLevel.APPLY: "Applying",
    CognitiveLevel.ANALYZE: "Analyzing",
    CognitiveLevel.EVALUATE: "Evaluating",
    CognitiveLevel.CREATE: "Creating",
}

_GUIDANCE = {
    CognitiveLevel.REMEMBER: (
        "Create instructions that emphasize recall of factual knowledge, "
        "definitions, basic concepts, recognition tasks, and core terminology "
        "related to the keyword."
    ),
    CognitiveLevel.UNDERSTAND: (
        "Design instructions that require conceptual understanding, explanation "
        "of relationships, interpretation, illustrative examples, and meaningful "
        "comparisons involving the keyword."
    ),
    CognitiveLevel.APPLY: (
        "Formulate instructions that demand practical use of methods, "
        "implementation of procedures, execution of calculations, and real-world "
        "application of the keyword."
    ),
    CognitiveLevel.ANALYZE: (
        "Develop instructions that involve breaking down complex ideas, "
        "identifying patterns, examining relationships, and conducting "
        "comparative or structural analysis of the keyword."
    ),
    CognitiveLevel.EVALUATE: (
        "Construct instructions that involve critical judgment, validation of "
        "techniques, assessment of alternatives, justification of decisions, "
        "and critique of methods related to the keyword."
    ),
    CognitiveLevel.CREATE: (
        "Design instructions that foster original thinking, synthesis of ideas, "
        "problem innovation, creative design, and novel applications of the "
        "keyword."
    ),
}

# Pairing two keywords only makes sense at levels that relate concepts;
# pure recall and open-ended creation stay single-keyword.
RELATIONAL_LEVELS = (
    CognitiveLevel.UNDERSTAND,
    CognitiveLevel.APPLY,
    CognitiveLevel.ANALYZE,
    CognitiveLevel.EVALUATE,
)

_SINGLE_PROMPT = """Task Description: {description}

Keyword: {keyword}

Question Type: {label} - {guidance}

Generate a high-quality question that precisely targets the keyword and question type described above. Ensure the keyword is the central focus and use appropriate domain terminology. The question should be clear, unambiguous, and suitable for instruction tuning.

Directly output the question. Do not include the answer or any other text.

Generated Question:"""

_PAIR_PROMPT = """Task Description: {description}

Keywords: {first}, {second}

Question Type: {label} - {guidance}

Generate a high-quality question that explores relationships between both keywords while following the task requirements. Focus on multi-concept integration and comparative reasoning. The question should be clear, unambiguous, and suitable for instruction tuning.

Directly output the question. Do not include the answer or any other text.

Generated Question:"""

_GENERIC_PROMPT = """Task Description: {description}

Keyword{plural}: {keywords}

Generate a high-quality question about the keyword{plural}. The question should be clear, unambiguous, and suitable for instruction tuning.

Directly output the question. Do not include the answer or any other text.

Generated Question:"""


def _job_id(strategy: str, keywords: tuple[str, ...], level: CognitiveLevel) -> str:
    material = "|".join((strategy, *keywords, level.value))
    return hashlib.sha256(material.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class GenerationJob:
    """One planned instruction: a strategy, its keywords, and a level."""

    strategy: str
    keywords: tuple[str, ...]
    level: CognitiveLevel
    job_id: str

    def __post_init__(self) -> None:
        if self.strategy not in (SINGLE, PAIR):
            raise ValidationError(f"unknown strategy: {self.strategy!r}")
        if self.strategy == SINGLE and len(self.keywords) != 1:
            raise ValidationError("single jobs take exactly one keyword")
        if self.strategy == PAIR:
            if len(self.keywords) != 2 or self.keywords[0] == self.keywords[1]:
                raise ValidationError("pair jobs take two distinct keywords")
            if self.keywords[0] > self.keywords[1]:
                raise ValidationError("pair keywords must be in canonical order")
            if self.level not in RELATIONAL_LEVELS:
                raise ValidationError(
                    f"pair jobs are restricted to relational levels, got {self.level}"
                )


def single_job(keyword: str, level: CognitiveLevel) -> GenerationJob:
    keywords = (keyword,)
    return GenerationJob(SINGLE, keywords, level, _job_id(SINGLE, keywords, level))


def pair_job(first: str, second: str, level: CognitiveLevel) -> GenerationJob:
    keywords = (first, second) if first < second else (second, first)
    return GenerationJob(PAIR, keywords, level, _job_id(PAIR, keywords, level))


def _unrank_pair(rank: int, n: int) -> tuple[int, int]:
    """Map rank in [0, C(n,2)) to the rank-th (i, j) pair with i < j."""
    i = 0
    remaining = rank
    while remaining >= n - 1 - i:
        remaining -= n - 1 - i
        i += 1
    return i, i + 1 + remaining


def enumerate_jobs(
    pool: KeywordPool,
    config: PipelineConfig,
    rng: random.Random,
    oversample_factor: float = OVERSAMPLE_FACTOR,
) -> list[GenerationJob]:
    """Plan the job list for one run, shuffled into a random order.

    Singles are exhaustive (every keyword at every level) whenever the
    budget of ceil(target_dataset_size * oversample_factor) allows; pair
    jobs are sampled uniformly without replacement from all unordered
    keyword pairs crossed with the relational levels until the budget or
    the pair space runs out.
    """
    if len(pool) == 0:
        raise ValidationError("cannot enumerate jobs over an empty pool")
    if oversample_factor < 1.0:
        raise ValidationError(f"oversample_factor must be >= 1, got {oversample_factor}")
    canonicals = [keyword.canonical for keyword in pool.keywords()]
    budget = math.ceil(config.target_dataset_size * oversample_factor)
    singles = [single_job(kw, level) for kw in canonicals for level in CognitiveLevel]
    if len(singles) > budget:
        kept = int(budget * SINGLE_BUDGET_SHARE)
        singles = rng.sample(singles, kept)
    pair_budget = budget - len(singles)
    n = len(canonicals)
    pair_space = n * (n - 1) // 2 * len(RELATIONAL_LEVELS)
    pairs: list[GenerationJob] = []
    if pair_budget > 0 and pair_space > 0:
        for index in rng.sample(range(pair_space), min(pair_budget, pair_space)):
            pair_rank, level_index = divmod(index, len(RELATIONAL_LEVELS))
            i, j = _unrank_pair(pair_rank, n)
            pairs.append(pair_job(canonicals[i], canonicals[j], RELATIONAL_LEVELS[level_index]))
    jobs = singles + pairs
    rng.shuffle(jobs)
    log.info(
        "planned %d jobs (%d single, %d pair) for budget %d",
        len(jobs),
        len(singles),
        len(pairs),
        budget,
    )
    return jobs


def render_instruction_prompt(
    job: GenerationJob,
    task: TaskDefinition,
    cognitive_levels: bool = True,
) -> str:
    """Fill the generation template; ``cognitive_levels=False`` collapses
    every level into a generic question prompt (ablation support)."""
    if not cognitive_levels:
        return _GENERIC_PROMPT.format(
            description=task.description,
            plural="s" if job.strategy == PAIR else "",
            keywords=", ".join(job.keywords),
        )
    if job.strategy == SINGLE:
        return _SINGLE_PROMPT.format(
            description=task.description,
            keyword=job.keywords[0],
            label=job.level.label,
            guidance=job.level.guidance,
        )
    return _PAIR_PROMPT.format(
        description=task.description,
        first=job.keywords[0],
        second=job.keywords[1],
        label=job.level.label,
        guidance=job.level.guidance,
    )


@dataclass(frozen=True)
class InstructionCandidate:
    text: str
    job: GenerationJob
    raw_completion: str


def clean_completion(raw: str) -> str | None:
    """Normalize a raw completion into instruction text, or None to drop it.

    Strips whitespace, surrounding quote pairs, and leading labels such as
    'Generated Question:'.
    """
    text = raw.strip()
    for _ in range(3):
        before = text
        text = re.sub(
            r"^(?:generated\s+question|question|instruction)\s*:\s*",
            "",
            text,
            flags=re.IGNORECASE,
        ).strip()
        for open_quote, close_quote in (('"', '"'), ("'", "'"), ("“", "”")):
            if len(text) >= 2 and text.startswith(open_quote) and text.endswith(close_quote):
                text = text[1:-1].strip()
        if text == before:
            break
    return text or None


def generate_candidates(
    jobs: Sequence[GenerationJob],
    task: TaskDefinition,
    config: PipelineConfig,
    gateway: LlmGateway,
    *,
    cognitive_levels: bool = True,
    parallelism: int = 1,
) -> list[InstructionCandidate]:
    """One gateway call per job, preserving job order in the output.

    Jobs whose completion is empty after cleanup, or whose call failed,
    are dropped and counted in the log; len(jobs) - len(result) gives the
    total drop count.
    """
    requests = [
        GenerationRequest(
            prompt=render_instruction_prompt(job, task, cognitive_levels=cognitive_levels),
            temperature=config.generation_temperature,
            max_tokens=config.max_generation_tokens,
            n_samples=1,
            request_tag=f"inst:{job.job_id}",
        )
        for job in jobs
    ]
    results = gateway.run_batch(requests, parallelism=parallelism)
    candidates: list[InstructionCandidate] = []
    failed = 0
    empty = 0
    for job, result in zip(jobs, results):
        if isinstance(result, GatewayError):
            failed += 1
            continue
        text = clean_completion(result.samples[0])
        if text is None:
            empty += 1
            continue
        candidates.append(InstructionCandidate(text=text, job=job, raw_completion=result.samples[0]))
    if failed or empty:
        log.warning("dropped %d failed and %d empty candidates", failed, empty)
    log.info("generated %d candidates from %d jobs", len(candidates), len(jobs))
    return candidates

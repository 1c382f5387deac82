"""Keyword seeding and bi-directional expansion.

The pool starts from one seeding call against the task description, then
grows for a fixed number of iterations: each iteration shows the model a
small random sample of the pool and asks for prerequisite concepts (what a
learner needs first) and advanced concepts (what builds on the sample).
"""
from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .config import PipelineConfig
from .errors import GatewayError, SeedShortfall, ValidationError
from .gateway import GenerationRequest, LlmGateway
from .task import TaskDefinition

log = logging.getLogger(__name__)

CANONICAL_RE = re.compile(r"[a-z0-9]+(_[a-z0-9]+)*\Z")

PROVENANCES = ("seed", "prerequisite", "advanced", "retrieved")

_MAX_KEYWORD_WORDS = 6
_SEED_RETRIES = 3

_SEED_PROMPT = """Task Context: You are an expert in {domain}.

Task Description: {description}

Instructions: Generate {n} core keywords that represent the most essential concepts for this task.

Requirements:
- List exactly {n} core concepts separated by commas
- Use underscores for multi-word concepts (e.g., asset_valuation)
- Single words are acceptable (e.g., portfolio)
- Provide only the comma-separated list without any other text

Core Keywords:"""

_SEED_SHORTFALL_NOTE = (
    "\n\nThe previous list contained only {got} distinct usable keywords. "
    "Provide {n} distinct keywords in the format above."
)

_EXPANSION_PROMPT = """Task Context: You are an expert in {domain}.

Task Description: {description}

Sample Keywords: {samples}

Instructions: Based on the sample keywords, generate new concepts in two directions:

1. Prerequisite Concepts: What fundamental concepts, basic terminology, or foundational principles should learners understand BEFORE studying the sample keywords?

2. Advanced Concepts: What specialized subfields, cutting-edge developments, or expert-level topics BUILD UPON the sample keywords?

Requirements:
- Generate {d} concepts for each direction
- Use underscores for multi-word concepts
- Ensure concepts are different from the sample keywords
- Provide only two lines, formatted exactly as:
Prerequisite Concepts: <comma-separated list>
Advanced Concepts: <comma-separated list>"""


def canonicalize(text: str) -> str:
    """Lowercase, map spaces and hyphens to underscores, strip punctuation.

    Idempotent: applying it to its own output is a no-op.
    """
    lowered = text.lower()
    underscored = re.sub(r"[\s\-]+", "_", lowered.strip())
    cleaned = re.sub(r"[^a-z0-9_]", "", underscored)
    collapsed = re.sub(r"_+", "_", cleaned)
    return collapsed.strip("_")


@dataclass(frozen=True)
class Keyword:
    """A canonical key plus the surface form it was first seen as."""

    canonical: str
    display: str

    def __post_init__(self) -> None:
        if not CANONICAL_RE.match(self.canonical):
            raise ValidationError(f"not a canonical keyword: {self.canonical!r}")


def _strip_list_markup(fragment: str) -> str:
    fragment = re.sub(r"^\s*(?:[-*•]+|\d+[.)])\s*", "", fragment)
    # A short leading label such as "Core Keywords:" is noise, not content.
    fragment = re.sub(r"^[A-Za-z][A-Za-z ]{0,40}:\s*", "", fragment)
    return fragment.strip()


def parse_keyword_list(raw: str) -> list[Keyword]:
    """Split model output on commas and newlines into keywords.

    Tolerant by design: list markers and short labels are stripped, empty
    fragments and items longer than six words are dropped, duplicates keep
    their first occurrence.
    """
    out: list[Keyword] = []
    seen: set[str] = set()
    dropped = 0
    for fragment in re.split(r"[,\n]", raw):
        display = _strip_list_markup(fragment)
        canonical = canonicalize(display)
        if not canonical or canonical.count("_") + 1 > _MAX_KEYWORD_WORDS:
            dropped += int(bool(fragment.strip()))
            continue
        if canonical in seen:
            continue
        seen.add(canonical)
        out.append(Keyword(canonical=canonical, display=display))
    if dropped:
        log.debug("parse_keyword_list dropped %d unusable fragments", dropped)
    return out


@dataclass(frozen=True)
class PoolEntry:
    keyword: Keyword
    provenance: str
    iteration: int

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance: {self.provenance!r}")
        if self.iteration < 0:
            raise ValidationError("iteration must be >= 0")


class KeywordPool:
    """Insertion-ordered set of keywords keyed by canonical form.

    Entries are immutable once added; the pool only grows.
    """

    def __init__(self) -> None:
        self._entries: dict[str, PoolEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, item: object) -> bool:
        canonical = item.canonical if isinstance(item, Keyword) else item
        return canonical in self._entries

    def __iter__(self) -> Iterator[PoolEntry]:
        return iter(self._entries.values())

    def add(self, keyword: Keyword, provenance: str, iteration: int) -> bool:
        """Insert if new; return whether the pool grew."""
        if keyword.canonical in self._entries:
            return False
        self._entries[keyword.canonical] = PoolEntry(keyword, provenance, iteration)
        return True

    def keywords(self) -> list[Keyword]:
        return [entry.keyword for entry in self._entries.values()]

    def entries(self) -> list[PoolEntry]:
        return list(self._entries.values())

    def sample(self, rng: random.Random, k: int) -> list[Keyword]:
        """Sample k keywords without replacement, in stable pool order."""
        return rng.sample(self.keywords(), k)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self._entries.values():
                row = {
                    "canonical": entry.keyword.canonical,
                    "display": entry.keyword.display,
                    "provenance": entry.provenance,
                    "iteration": entry.iteration,
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KeywordPool":
        pool = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                pool.add(
                    Keyword(canonical=row["canonical"], display=row["display"]),
                    row["provenance"],
                    row["iteration"],
                )
        return pool


def seed_keywords(
    task: TaskDefinition,
    n: int,
    gateway: LlmGateway,
    *,
    temperature: float = 0.7,
    max_tokens: int = 2048,
) -> KeywordPool:
    """Ask for the n most essential task concepts; re-prompt on shortfall.

    Up to three re-prompts append a note stating how many usable keywords
    came back. Raises SeedShortfall if fewer than ceil(n/2) distinct
    keywords survive all attempts.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    base_prompt = _SEED_PROMPT.format(
        domain=task.domain_label, description=task.description, n=n
    )
    pool = KeywordPool()
    prompt = base_prompt
    for attempt in range(1 + _SEED_RETRIES):
        result = gateway.with_retry(
            GenerationRequest(
                prompt=prompt,
                temperature=temperature,
                max_tokens=max_tokens,
                n_samples=1,
                request_tag=f"seed:{attempt}",
            )
        )
        added = sum(
            pool.add(keyword, "seed", 0)
            for keyword in parse_keyword_list(result.samples[0])
        )
        log.debug("seed attempt %d added %d keywords (pool=%d)", attempt, added, len(pool))
        if len(pool) >= n:
            break
        if attempt > 0 and added == 0:
            # A retry that contributes nothing signals a dead or looping
            # backend; further retries cannot help.
            break
        prompt = base_prompt + _SEED_SHORTFALL_NOTE.format(got=len(pool), n=n)
    if len(pool) < math.ceil(n / 2):
        raise SeedShortfall(
            f"seeding produced {len(pool)} keywords, need at least {math.ceil(n / 2)}"
        )
    return pool


@dataclass(frozen=True)
class ExpansionStep:
    """Outcome of one expansion iteration."""

    iteration: int
    sampled: tuple[Keyword, ...]
    prerequisite_new: tuple[Keyword, ...]
    advanced_new: tuple[Keyword, ...]


def parse_expansion_response(raw: str) -> tuple[list[Keyword], list[Keyword]]:
    """Split a reply into its prerequisite and advanced keyword lists.

    Section headers are located case-insensitively; a missing section
    yields an empty list rather than an error.
    """
    markers = []
    for match in re.finditer(r"(prerequisite|advanced)[^:\n]*:", raw, re.IGNORECASE):
        markers.append((match.start(), match.end(), match.group(1).lower()))
    sections: dict[str, str] = {}
    for idx, (_, body_start, label) in enumerate(markers):
        body_end = markers[idx + 1][0] if idx + 1 < len(markers) else len(raw)
        if label not in sections:
            sections[label] = raw[body_start:body_end]
    prerequisites = parse_keyword_list(sections.get("prerequisite", ""))
    advanced = parse_keyword_list(sections.get("advanced", ""))
    return prerequisites, advanced


def expand_step(
    pool: KeywordPool,
    task: TaskDefinition,
    config: PipelineConfig,
    gateway: LlmGateway,
    rng: random.Random,
    iteration: int = 1,
) -> ExpansionStep:
    """Run one bi-directional expansion round; gateway errors propagate."""
    if len(pool) == 0:
        raise SeedShortfall("cannot expand an empty pool")
    k = min(config.expansion_sample_size, len(pool))
    sampled = pool.sample(rng, k)
    prompt = _EXPANSION_PROMPT.format(
        domain=task.domain_label,
        description=task.description,
        samples=", ".join(keyword.canonical for keyword in sampled),
        d=config.keywords_per_direction,
    )
    result = gateway.with_retry(
        GenerationRequest(
            prompt=prompt,
            temperature=config.generation_temperature,
            max_tokens=config.max_generation_tokens,
            n_samples=1,
            request_tag=f"expand:{iteration}",
        )
    )
    prerequisites, advanced = parse_expansion_response(result.samples[0])

    def fresh(keywords: Iterable[Keyword]) -> tuple[Keyword, ...]:
        picked = [kw for kw in keywords if kw.canonical not in pool]
        return tuple(picked[: config.keywords_per_direction])

    return ExpansionStep(
        iteration=iteration,
        sampled=tuple(sampled),
        prerequisite_new=fresh(prerequisites),
        advanced_new=fresh(advanced),
    )


def run_expansion(
    pool: KeywordPool,
    task: TaskDefinition,
    config: PipelineConfig,
    gateway: LlmGateway,
    rng: random.Random,
) -> KeywordPool:
    """Run exactly ``config.expansion_iterations`` rounds, merging after each.

    A failed round is logged and skipped; only an unusable (empty) pool
    aborts. The pool can grow by at most 2 * keywords_per_direction per
    round, so |pool| <= seeds + iterations * 2 * keywords_per_direction.
    """
    if len(pool) == 0:
        raise SeedShortfall("expansion requires a seeded pool")
    for iteration in range(1, config.expansion_iterations + 1):
        try:
            step = expand_step(pool, task, config, gateway, rng, iteration=iteration)
        except GatewayError as exc:
            log.warning("expansion iteration %d failed: %s", iteration, exc)
            continue
        added = 0
        for keyword in step.prerequisite_new:
            added += pool.add(keyword, "prerequisite", iteration)
        for keyword in step.advanced_new:
            added += pool.add(keyword, "advanced", iteration)
        log.debug(
            "expansion %d/%d: sampled=%d new=%d pool=%d",
            iteration,
            config.expansion_iterations,
            len(step.sampled),
            added,
            len(pool),
        )
    log.info("expansion finished with %d keywords", len(pool))
    return pool

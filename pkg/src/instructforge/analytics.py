"""Dataset diversity statistics via shallow verb-noun pair extraction.

No NLP dependency: a bundled lexicon of imperative verbs plus a small
stopword list drives pattern extraction. A verb is detected only at a
clause-initial position (sentence start, after punctuation, or after a
coordinating conjunction) and is paired with the head of the nearest
following noun run. Counts are meant for relative comparisons between
datasets, not linguistic ground truth.
"""
from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ValidationError

_WORD_OR_PUNCT = re.compile(r"[A-Za-z]+(?:['’][A-Za-z]+)?|[.,;:!?]")
_SENTENCE_BREAKS = frozenset(".;!?")
_COORDINATORS = frozenset({"and", "or", "then"})


class VerbNounPair(NamedTuple):
    verb: str
    noun: str


@dataclass(frozen=True)
class Lexicon:
    """Imperative-verb lemmas plus stopwords used as noun-run breakers."""

    verbs: frozenset[str]
    stopwords: frozenset[str]

    def lemma(self, word: str) -> str | None:
        """Map an inflected surface form to its lexicon lemma, if any."""
        if word in self.verbs:
            return word
        for candidate in _lemma_candidates(word):
            if candidate in self.verbs:
                return candidate
        return None


def _lemma_candidates(word: str) -> Iterable[str]:
    if word.endswith("ies") and len(word) > 4:
        yield word[:-3] + "y"
    if word.endswith("es") and len(word) > 3:
        yield word[:-2]
    if word.endswith("s") and len(word) > 2:
        yield word[:-1]
    if word.endswith("ied") and len(word) > 4:
        yield word[:-3] + "y"
    if word.endswith("ed") and len(word) > 3:
        stem = word[:-2]
        yield stem
        yield stem + "e"
        if len(stem) > 2 and stem[-1] == stem[-2]:
            yield stem[:-1]
    if word.endswith("ing") and len(word) > 4:
        stem = word[:-3]
        yield stem
        yield stem + "e"
        if len(stem) > 2 and stem[-1] == stem[-2]:
            yield stem[:-1]


def _read_wordlist(name: str) -> frozenset[str]:
    text = resources.files("instructforge.data").joinpath(name).read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


@lru_cache(maxsize=1)
def load_lexicon() -> Lexicon:
    return Lexicon(
        verbs=_read_wordlist("imperative_verbs.txt"),
        stopwords=_read_wordlist("stopwords.txt"),
    )


def word_count(text: str) -> int:
    """Whitespace token count; empty and blank strings count zero."""
    return len(text.split())


def extract_verb_noun_pairs(text: str, lexicon: Lexicon | None = None) -> list[VerbNounPair]:
    """Shallow (verb, head-noun) extraction from one instruction.

    Coordinated verbs share the following noun run, so
    "Evaluate and compare two strategies." yields both
    (evaluate, strategies) and (compare, strategies).
    """
    lexicon = lexicon or load_lexicon()
    tokens = _WORD_OR_PUNCT.findall(text)

    words: list[tuple[int, str]] = []  # (token index, lowered word)
    sentence_of: dict[int, int] = {}
    sentence = 0
    for index, token in enumerate(tokens):
        sentence_of[index] = sentence
        if token in _SENTENCE_BREAKS:
            sentence += 1
        elif token[0].isalpha():
            words.append((index, token.lower()))

    detected: dict[int, str] = {}  # token index -> verb lemma
    clause_start = True
    for index, token in enumerate(tokens):
        if not token[0].isalpha():
            clause_start = True
            continue
        word = token.lower()
        if clause_start:
            lemma = lexicon.lemma(word)
            if lemma is not None:
                detected[index] = lemma
        clause_start = word in _COORDINATORS

    # Noun runs: maximal stretches of words that are neither stopwords nor
    # detected verbs; punctuation of any kind ends a run.
    runs: list[tuple[int, str]] = []  # (start token index, head word)
    current_start: int | None = None
    current_head: str | None = None

    def close_run() -> None:
        nonlocal current_start, current_head
        if current_start is not None and current_head is not None:
            runs.append((current_start, current_head))
        current_start, current_head = None, None

    for index, token in enumerate(tokens):
        if not token[0].isalpha():
            close_run()
            continue
        word = token.lower()
        if word in lexicon.stopwords or index in detected:
            close_run()
            continue
        if current_start is None:
            current_start = index
        current_head = word
    close_run()

    pairs: list[VerbNounPair] = []
    for verb_index, lemma in sorted(detected.items()):
        for run_start, head in runs:
            if run_start > verb_index and sentence_of[run_start] == sentence_of[verb_index]:
                pairs.append(VerbNounPair(lemma, head))
                break
    return pairs


@dataclass(frozen=True)
class DatasetStats:
    """Aggregate diversity metrics over one exported dataset.

    ``pair_histogram`` holds every extracted pair; the scalar aggregates
    only cover pairs whose count reaches ``min_pair_frequency``.
    """

    avg_instruction_length_words: float
    unique_pairs: int
    avg_pair_occurrences: float
    stddev_pair_occurrences: float
    pair_histogram: dict[VerbNounPair, int]
    min_pair_frequency: int
    instruction_count: int

    def filtered_pairs(self) -> dict[VerbNounPair, int]:
        return {
            pair: count
            for pair, count in self.pair_histogram.items()
            if count >= self.min_pair_frequency
        }


def _instruction_text(item: object) -> str:
    if isinstance(item, str):
        return item
    if isinstance(item, dict):
        return item["instruction"]
    return item.instruction  # type: ignore[attr-defined]


def compute_stats(
    dataset: Iterable[object],
    min_pair_frequency: int = 1,
    lexicon: Lexicon | None = None,
) -> DatasetStats:
    """Length and verb-noun diversity statistics for a dataset.

    ``dataset`` items may be raw instruction strings, exported rows, or
    records; anything with an ``instruction`` field works. Pairs occurring
    fewer than ``min_pair_frequency`` times are excluded from the unique
    count, mean, and population standard deviation.
    """
    if min_pair_frequency < 1:
        raise ValidationError(f"min_pair_frequency must be >= 1, got {min_pair_frequency}")
    lexicon = lexicon or load_lexicon()
    lengths: list[int] = []
    histogram: Counter[VerbNounPair] = Counter()
    for item in dataset:
        text = _instruction_text(item)
        lengths.append(word_count(text))
        histogram.update(extract_verb_noun_pairs(text, lexicon))
    counts = [count for count in histogram.values() if count >= min_pair_frequency]
    if counts:
        mean = sum(counts) / len(counts)
        stddev = math.sqrt(sum((count - mean) ** 2 for count in counts) / len(counts))
    else:
        mean, stddev = 0.0, 0.0
    return DatasetStats(
        avg_instruction_length_words=sum(lengths) / len(lengths) if lengths else 0.0,
        unique_pairs=len(counts),
        avg_pair_occurrences=mean,
        stddev_pair_occurrences=stddev,
        pair_histogram=dict(histogram),
        min_pair_frequency=min_pair_frequency,
        instruction_count=len(lengths),
    )


def export_sunburst(
    stats: DatasetStats,
    path: str | Path,
    top_pairs_per_verb: int = 4,
) -> int:
    """Write ``verb,noun,count`` CSV rows for sunburst plotting.

    At most ``top_pairs_per_verb`` rows per verb, ordered count-descending
    then noun-ascending; verbs are ordered by total count descending. Only
    pairs passing the stats object's frequency floor appear. Returns the
    number of data rows written (the header is always present).
    """
    if top_pairs_per_verb < 1:
        raise ValidationError(f"top_pairs_per_verb must be >= 1, got {top_pairs_per_verb}")
    by_verb: dict[str, list[tuple[VerbNounPair, int]]] = {}
    for pair, count in stats.filtered_pairs().items():
        by_verb.setdefault(pair.verb, []).append((pair, count))
    verb_order = sorted(
        by_verb,
        key=lambda verb: (-sum(count for _, count in by_verb[verb]), verb),
    )
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["verb", "noun", "count"])
        for verb in verb_order:
            ranked = sorted(by_verb[verb], key=lambda item: (-item[1], item[0].noun))
            for pair, count in ranked[:top_pairs_per_verb]:
                writer.writerow([pair.verb, pair.noun, count])
                rows += 1
    return rows


def stats_table(stats: DatasetStats) -> str:
    """Human-readable summary table."""
    rows = [
        ("Instructions", f"{stats.instruction_count}"),
        ("Avg. instruction length (words)", f"{stats.avg_instruction_length_words:.2f}"),
        (f"Unique verb-noun pairs (count >= {stats.min_pair_frequency})", f"{stats.unique_pairs}"),
        ("Avg. pair occurrences", f"{stats.avg_pair_occurrences:.2f}"),
        ("Std. dev. of pair occurrences", f"{stats.stddev_pair_occurrences:.2f}"),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)

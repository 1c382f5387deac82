"""Corpus ingestion, BM25 scoring, and retrieval-augmented keyword extraction.

The expansion loop only sees what the model already knows; this module pulls
domain passages from a local corpus so keyword coverage is grounded in real
text. Corpus layout: ``<root>/<source_tag>/**/*.txt``, one tag per top-level
directory.
"""
from __future__ import annotations

import bisect
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import PipelineConfig
from .errors import EmptyCorpus, GatewayError, UnknownDocument, ValidationError
from .gateway import GenerationRequest, LlmGateway
from .keywords import Keyword, KeywordPool, parse_keyword_list
from .task import TaskDefinition

log = logging.getLogger(__name__)

DEFAULT_CHUNK_TOKENS = 512
_DIGEST_SIZE = 100

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_EXTRACTION_PROMPT = """Task Context: You are an expert in {domain}.

Task Description: {description}

Current Keywords: {digest}

Retrieved Passages: The following passages contain domain knowledge related to the current keywords:

{passages}

Instructions: Extract additional domain-specific keywords directly from the retrieved passages that are missing from the current list.

Requirements:
- Use underscores for multi-word concepts
- Provide only the comma-separated list without any other text

Extracted Keywords:"""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens under 2 chars.

    No stemming and no stopword removal; the same tokenizer serves both
    indexing and querying.
    """
    return [token for token in _TOKEN_RE.findall(text.lower()) if len(token) >= 2]


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_tag: str
    text: str
    token_count: int

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValidationError("doc_id must be non-empty")
        if self.token_count != len(tokenize(self.text)):
            raise ValidationError(
                f"token_count mismatch for {self.doc_id!r}: "
                f"{self.token_count} != {len(tokenize(self.text))}"
            )


def make_document(doc_id: str, source_tag: str, text: str) -> Document:
    return Document(doc_id, source_tag, text, len(tokenize(text)))


def _pack_words(paragraph: str, limit: int) -> list[str]:
    """Split one oversized paragraph into pieces of at most ``limit`` tokens."""
    pieces: list[str] = []
    current: list[str] = []
    count = 0
    for word in paragraph.split():
        word_tokens = len(tokenize(word))
        if current and count + word_tokens > limit:
            pieces.append(" ".join(current))
            current, count = [], 0
        current.append(word)
        count += word_tokens
    if current:
        pieces.append(" ".join(current))
    return pieces


def _chunk_text(text: str, limit: int) -> list[str]:
    """Greedily pack paragraphs into chunks of at most ``limit`` tokens."""
    chunks: list[str] = []
    current: list[str] = []
    count = 0

    def flush() -> None:
        nonlocal current, count
        if current:
            chunks.append("\n\n".join(current))
            current, count = [], 0

    for paragraph in re.split(r"\n\s*\n", text):
        paragraph = paragraph.strip()
        if not paragraph:
            continue
        paragraph_tokens = len(tokenize(paragraph))
        if paragraph_tokens > limit:
            flush()
            chunks.extend(_pack_words(paragraph, limit))
            continue
        if current and count + paragraph_tokens > limit:
            flush()
        current.append(paragraph)
        count += paragraph_tokens
    flush()
    return chunks


@dataclass
class IngestReport:
    documents: int = 0
    files: int = 0
    skipped_encoding: int = 0
    skipped_untagged: int = 0


def ingest_corpus(
    root: str | Path,
    chunk_tokens: int = DEFAULT_CHUNK_TOKENS,
    report: IngestReport | None = None,
) -> list[Document]:
    """Walk ``root`` and turn every .txt file into one or more documents.

    The first path segment under root names the source_tag. Files whose
    token count exceeds ``chunk_tokens`` are split on paragraph boundaries
    and their chunks get ``#0``, ``#1``, ... suffixes on the doc_id.
    Files that fail UTF-8 decoding are skipped and counted, never fatal.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root is not a directory: {root}")
    if chunk_tokens < 1:
        raise ValidationError(f"chunk_tokens must be >= 1, got {chunk_tokens}")
    report = report if report is not None else IngestReport()
    documents: list[Document] = []
    for path in sorted(root.rglob("*.txt")):
        if not path.is_file():
            continue
        relative = path.relative_to(root)
        if len(relative.parts) < 2:
            log.warning("skipping %s: files must live under a source-tag directory", path)
            report.skipped_untagged += 1
            continue
        source_tag = relative.parts[0]
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            log.warning("skipping %s: not valid UTF-8", path)
            report.skipped_encoding += 1
            continue
        report.files += 1
        base_id = relative.with_suffix("").as_posix()
        if len(tokenize(text)) <= chunk_tokens:
            documents.append(make_document(base_id, source_tag, text))
        else:
            for index, chunk in enumerate(_chunk_text(text, chunk_tokens)):
                documents.append(make_document(f"{base_id}#{index}", source_tag, chunk))
    report.documents = len(documents)
    return documents


@dataclass
class Bm25Index:
    """Okapi BM25 index over a fixed document set.

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1), which is non-negative
    for every term, so adding query terms can never lower a score.
    """

    k1: float
    b: float
    doc_count: int
    avg_doc_length: float
    doc_lengths: dict[str, int]
    postings: dict[str, list[tuple[str, int]]]
    documents: dict[str, Document] = field(default_factory=dict)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)

    def term_frequency(self, term: str, doc_id: str) -> int:
        posting = self.postings.get(term)
        if not posting:
            return 0
        index = bisect.bisect_left(posting, (doc_id,))
        if index < len(posting) and posting[index][0] == doc_id:
            return posting[index][1]
        return 0


def build_index(
    documents: Sequence[Document],
    k1: float = 1.2,
    b: float = 0.75,
) -> Bm25Index:
    """Build a BM25 index; identical regardless of input document order."""
    if not documents:
        raise EmptyCorpus("cannot index zero documents")
    if not 0.0 <= b <= 1.0:
        raise ValidationError(f"b must be in [0, 1], got {b!r}")
    if k1 < 0.0:
        raise ValidationError(f"k1 must be >= 0, got {k1!r}")
    doc_lengths: dict[str, int] = {}
    doc_map: dict[str, Document] = {}
    raw_postings: dict[str, dict[str, int]] = {}
    for document in documents:
        if document.doc_id in doc_map:
            raise ValidationError(f"duplicate doc_id: {document.doc_id!r}")
        doc_map[document.doc_id] = document
        tokens = tokenize(document.text)
        doc_lengths[document.doc_id] = len(tokens)
        for token in tokens:
            term_docs = raw_postings.setdefault(token, {})
            term_docs[document.doc_id] = term_docs.get(document.doc_id, 0) + 1
    postings = {
        term: sorted(term_docs.items()) for term, term_docs in sorted(raw_postings.items())
    }
    return Bm25Index(
        k1=k1,
        b=b,
        doc_count=len(doc_map),
        avg_doc_length=sum(doc_lengths.values()) / len(doc_lengths),
        doc_lengths=dict(sorted(doc_lengths.items())),
        postings=postings,
        documents=dict(sorted(doc_map.items())),
    )


def score(index: Bm25Index, query_terms: Sequence[str], doc_id: str) -> float:
    """BM25 score of one document; terms absent from it contribute zero."""
    if doc_id not in index.doc_lengths:
        raise UnknownDocument(f"no such document: {doc_id!r}")
    length = index.doc_lengths[doc_id]
    norm = index.k1 * (1.0 - index.b + index.b * length / index.avg_doc_length)
    total = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, doc_id)
        if tf == 0:
            continue
        total += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return total


@dataclass(frozen=True)
class RetrievalQuery:
    text: str
    sampled_keywords: tuple[Keyword, ...] = ()


def retrieve_top_k(index: Bm25Index, query: RetrievalQuery, k: int) -> list[tuple[str, float]]:
    """Top documents by score, ties broken by ascending doc_id.

    Always returns min(k, doc_count) entries; zero-score documents fill in
    when fewer than k documents match any query term.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if index.doc_count == 0:
        raise EmptyCorpus("index holds no documents")
    scores = {doc_id: 0.0 for doc_id in index.doc_lengths}
    terms = tokenize(query.text)
    for term in terms:
        idf = index.idf(term)
        if idf == 0.0:
            continue
        for doc_id, tf in index.postings[term]:
            length = index.doc_lengths[doc_id]
            norm = index.k1 * (1.0 - index.b + index.b * length / index.avg_doc_length)
            scores[doc_id] += idf * tf * (index.k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[: min(k, index.doc_count)]


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Persist the document set; postings are rebuilt deterministically on load."""
    payload = {
        "version": 1,
        "k1": index.k1,
        "b": index.b,
        "documents": [
            {
                "doc_id": doc.doc_id,
                "source_tag": doc.source_tag,
                "text": doc.text,
                "token_count": doc.token_count,
            }
            for doc in index.documents.values()
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> Bm25Index:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != 1:
        raise ValidationError(f"unsupported index version: {payload.get('version')!r}")
    documents = [
        Document(
            doc_id=row["doc_id"],
            source_tag=row["source_tag"],
            text=row["text"],
            token_count=row["token_count"],
        )
        for row in payload["documents"]
    ]
    return build_index(documents, k1=payload["k1"], b=payload["b"])


def _keyword_digest(pool: KeywordPool, rng: random.Random) -> str:
    keywords = pool.keywords()
    if len(keywords) > _DIGEST_SIZE:
        keywords = rng.sample(keywords, _DIGEST_SIZE)
    return ", ".join(keyword.canonical for keyword in keywords)


def _format_passages(index: Bm25Index, ranked: Iterable[tuple[str, float]]) -> str:
    blocks = []
    for position, (doc_id, _) in enumerate(ranked, start=1):
        document = index.documents[doc_id]
        blocks.append(f"[Passage {position} | {document.source_tag}]\n{document.text}")
    return "\n\n".join(blocks)


def retrieval_augment(
    pool: KeywordPool,
    task: TaskDefinition,
    index: Bm25Index,
    config: PipelineConfig,
    gateway: LlmGateway,
    rng: random.Random,
) -> KeywordPool:
    """Mine the corpus for keywords the expansion loop missed.

    Each round samples pool keywords, retrieves the top passages for the
    task description plus those keywords, and asks the model to extract
    missing keywords from the passages. A failed round is skipped.
    """
    if index.doc_count == 0:
        raise EmptyCorpus("retrieval requires a non-empty index")
    for round_number in range(1, config.retrieval_rounds + 1):
        sampled = pool.sample(rng, min(config.retrieval_query_keywords, len(pool)))
        query = RetrievalQuery(
            text=task.description + " " + " ".join(kw.canonical for kw in sampled),
            sampled_keywords=tuple(sampled),
        )
        ranked = retrieve_top_k(index, query, config.retrieval_top_k)
        prompt = _EXTRACTION_PROMPT.format(
            domain=task.domain_label,
            description=task.description,
            digest=_keyword_digest(pool, rng),
            passages=_format_passages(index, ranked),
        )
        try:
            result = gateway.with_retry(
                GenerationRequest(
                    prompt=prompt,
                    temperature=config.generation_temperature,
                    max_tokens=config.max_generation_tokens,
                    n_samples=1,
                    request_tag=f"extract:{round_number}",
                )
            )
        except GatewayError as exc:
            log.warning("retrieval round %d failed: %s", round_number, exc)
            continue
        added = sum(
            pool.add(keyword, "retrieved", round_number)
            for keyword in parse_keyword_list(result.samples[0])
        )
        log.debug(
            "retrieval %d/%d: new=%d pool=%d",
            round_number,
            config.retrieval_rounds,
            added,
            len(pool),
        )
    log.info("retrieval finished with %d keywords", len(pool))
    return pool

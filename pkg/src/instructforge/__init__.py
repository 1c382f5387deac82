"""Domain instruction-tuning dataset synthesis.

Given a short textual task definition, the pipeline seeds domain keywords,
grows them through prerequisite/advanced expansion and corpus retrieval,
plans instruction-generation jobs across cognitive skill levels, filters
candidates by answer self-consistency, and exports the surviving
instruction-response pairs with diversity statistics.
"""
from .analytics import (
    DatasetStats,
    VerbNounPair,
    compute_stats,
    export_sunburst,
    extract_verb_noun_pairs,
    stats_table,
)
from .config import PipelineConfig, load_config
from .consistency import (
    ExtractedAnswer,
    InstructionRecord,
    VoteResult,
    compute_votes,
    export_dataset,
    extract_answer,
    filter_and_select,
    read_dataset,
)
from .errors import (
    BackendError,
    EmptyCorpus,
    GatewayError,
    InstructForgeError,
    ParseError,
    ScriptExhausted,
    SeedShortfall,
    StageOrderError,
    TransportError,
    UnknownDocument,
    ValidationError,
)
from .gateway import (
    CallableBackend,
    GenerationRequest,
    GenerationResult,
    HttpBackend,
    LlmGateway,
    ReplayBackend,
    ScriptedBackend,
)
from .instructions import (
    CognitiveLevel,
    GenerationJob,
    InstructionCandidate,
    enumerate_jobs,
    generate_candidates,
    pair_job,
    single_job,
)
from .keywords import Keyword, KeywordPool, canonicalize, run_expansion, seed_keywords
from .pipeline import PipelineRun, RunReport, stage_rng
from .retrieval import (
    Bm25Index,
    Document,
    build_index,
    ingest_corpus,
    retrieval_augment,
    retrieve_top_k,
    score,
    tokenize,
)
from .task import AnswerFormat, TaskDefinition, load_task

__version__ = "0.1.0"

__all__ = [
    "AnswerFormat",
    "BackendError",
    "Bm25Index",
    "CallableBackend",
    "CognitiveLevel",
    "DatasetStats",
    "Document",
    "EmptyCorpus",
    "ExtractedAnswer",
    "GatewayError",
    "GenerationJob",
    "GenerationRequest",
    "GenerationResult",
    "HttpBackend",
    "InstructForgeError",
    "InstructionCandidate",
    "InstructionRecord",
    "Keyword",
    "KeywordPool",
    "LlmGateway",
    "ParseError",
    "PipelineConfig",
    "PipelineRun",
    "ReplayBackend",
    "RunReport",
    "ScriptExhausted",
    "ScriptedBackend",
    "SeedShortfall",
    "StageOrderError",
    "TaskDefinition",
    "TransportError",
    "UnknownDocument",
    "ValidationError",
    "VerbNounPair",
    "VoteResult",
    "build_index",
    "canonicalize",
    "compute_stats",
    "compute_votes",
    "enumerate_jobs",
    "export_dataset",
    "export_sunburst",
    "extract_answer",
    "extract_verb_noun_pairs",
    "filter_and_select",
    "generate_candidates",
    "ingest_corpus",
    "load_config",
    "load_task",
    "pair_job",
    "read_dataset",
    "retrieval_augment",
    "retrieve_top_k",
    "run_expansion",
    "score",
    "seed_keywords",
    "single_job",
    "stage_rng",
    "stats_table",
    "tokenize",
]

"""Pipeline configuration and the flat key-value file format.

Config files are UTF-8 text, one ``key = value`` per line. Blank lines and
lines starting with ``#`` are ignored. Nesting is not supported.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines into a dict, last key wins."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ParseError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv_file(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"))


def format_kv_text(items: dict[str, object]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in items.items())


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for one synthesis run.

    Defaults are the reference operating point: 50 seed keywords, 100
    expansion iterations at 5 keywords per direction, BM25 retrieval with
    k1=1.2/b=0.75 and top-5 passages, 5-way voting at a 3/5 consensus
    threshold, and a 6,000-pair target.
    """

    n_seed_keywords: int = 50
    expansion_iterations: int = 100
    keywords_per_direction: int = 5
    expansion_sample_size: int = 5
    retrieval_rounds: int = 20
    retrieval_query_keywords: int = 10
    retrieval_top_k: int = 5
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    consistency_samples: int = 5
    consistency_threshold: float = 0.6
    generation_temperature: float = 0.7
    max_generation_tokens: int = 2048
    target_dataset_size: int = 6000
    rng_seed: int = 0

    _COUNT_FIELDS = (
        "n_seed_keywords",
        "expansion_iterations",
        "keywords_per_direction",
        "expansion_sample_size",
        "retrieval_rounds",
        "retrieval_query_keywords",
        "retrieval_top_k",
        "consistency_samples",
        "max_generation_tokens",
        "target_dataset_size",
    )

    def __post_init__(self) -> None:
        for name in self._COUNT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"{name} must be an integer >= 1, got {value!r}")
        if not 0.0 < self.consistency_threshold <= 1.0:
            raise ValidationError(
                f"consistency_threshold must be in (0, 1], got {self.consistency_threshold!r}"
            )
        if not 0.0 <= self.bm25_b <= 1.0:
            raise ValidationError(f"bm25_b must be in [0, 1], got {self.bm25_b!r}")
        if self.bm25_k1 < 0.0:
            raise ValidationError(f"bm25_k1 must be >= 0, got {self.bm25_k1!r}")
        if self.generation_temperature < 0.0:
            raise ValidationError(
                f"generation_temperature must be >= 0, got {self.generation_temperature!r}"
            )
        if not isinstance(self.rng_seed, int) or isinstance(self.rng_seed, bool):
            raise ValidationError(f"rng_seed must be an integer, got {self.rng_seed!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValidationError(f"rng_seed must fit in 64 unsigned bits, got {self.rng_seed}")

    def to_text(self) -> str:
        """Serialize in the config-file format; parsing it back round-trips."""
        return format_kv_text(
            {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def replace(self, **changes: object) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, value: object) -> object:
    if key not in _FIELD_TYPES:
        raise ValidationError(f"unknown config key: {key!r}")
    kind = _FIELD_TYPES[key]
    if not isinstance(value, str):
        return value
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ValidationError(f"config key {key!r} has a malformed value: {value!r}") from None
    raise ValidationError(f"config key {key!r} has unsupported type {kind!r}")


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, object] | None = None,
) -> PipelineConfig:
    """Build a config from defaults, then file values, then overrides.

    A missing or absent ``path`` yields pure defaults. Unknown keys and
    out-of-range values raise ValidationError; malformed lines raise
    ParseError.
    """
    values: dict[str, object] = {}
    if path is not None and Path(path).is_file():
        for key, raw in read_kv_file(path).items():
            values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, raw)
    return PipelineConfig(**values)

"""Text-generation access: one live HTTP backend, scripted test backends,
append-only transcript recording, retry, and order-preserving batches.

Every call flows through :class:`LlmGateway`, which is the only component
allowed to touch a backend. That keeps recording and call accounting in one
place and makes any recorded run replayable bit-for-bit from its transcript.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .errors import BackendError, GatewayError, ScriptExhausted, TransportError, ValidationError

log = logging.getLogger(__name__)

ENDPOINT_ENV = "INSTRUCTFORGE_ENDPOINT"
API_KEY_ENV = "INSTRUCTFORGE_API_KEY"
MODEL_ENV = "INSTRUCTFORGE_MODEL"

_SYSTEM_PROMPT = "You are a careful domain expert. Follow the instructions exactly."


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationRequest:
    """One prompt plus sampling parameters.

    ``request_tag`` names the call site (e.g. ``"seed:0"``, ``"vote:<job>"``)
    so scripted backends can key on it independently of prompt wording.
    """

    prompt: str
    temperature: float = 0.7
    max_tokens: int = 2048
    n_samples: int = 1
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")
        if self.temperature < 0.0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature!r}")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens!r}")
        if self.n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {self.n_samples!r}")


@dataclass
class GenerationResult:
    samples: list[str]
    backend_id: str
    latency: float


class Backend(Protocol):
    backend_id: str

    def complete(self, request: GenerationRequest) -> list[str]: ...


class HttpBackend:
    """Chat-completion style JSON POST endpoint.

    The endpoint URL and bearer token come from ``INSTRUCTFORGE_ENDPOINT``
    and ``INSTRUCTFORGE_API_KEY`` unless passed explicitly. Network and
    HTTP 5xx failures raise TransportError (retriable); anything the server
    rejects or malforms raises BackendError.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 120.0,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "")
        self.timeout = timeout
        if not self.endpoint:
            raise ValidationError(
                f"no endpoint configured; set {ENDPOINT_ENV} or pass endpoint="
            )
        self.backend_id = f"http:{self.endpoint}"

    def complete(self, request: GenerationRequest) -> list[str]:
        import requests

        payload = {
            "messages": [
                {"role": "system", "content": _SYSTEM_PROMPT},
                {"role": "user", "content": request.prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": request.n_samples,
        }
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {self.endpoint} failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code} from {self.endpoint}")
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            body = resp.json()
            choices = body["choices"]
            samples = [choice["message"]["content"] for choice in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc
        return samples


class ScriptedBackend:
    """In-memory backend fed from canned responses.

    Responses are keyed by request tag first, then by prompt hash, so a
    script survives template wording changes as long as the tags hold.
    Each scripted entry is consumed exactly once, in the order added.
    """

    def __init__(self, backend_id: str = "mock") -> None:
        self.backend_id = backend_id
        self._entries: list[list[str]] = []
        self._by_tag: dict[str, deque[int]] = {}
        self._by_hash: dict[str, deque[int]] = {}
        self._consumed: set[int] = set()
        self._lock = threading.Lock()

    def add(
        self,
        samples: Sequence[str] | str,
        *,
        tag: str = "",
        prompt: str = "",
    ) -> None:
        entry = [samples] if isinstance(samples, str) else list(samples)
        index = len(self._entries)
        self._entries.append(entry)
        if tag:
            self._by_tag.setdefault(tag, deque()).append(index)
        if prompt:
            self._by_hash.setdefault(prompt_hash(prompt), deque()).append(index)

    def _pop(self, queue: deque[int] | None) -> list[str] | None:
        while queue:
            index = queue.popleft()
            if index not in self._consumed:
                self._consumed.add(index)
                return self._entries[index]
        return None

    def complete(self, request: GenerationRequest) -> list[str]:
        with self._lock:
            entry = self._pop(self._by_tag.get(request.request_tag))
            if entry is None:
                entry = self._pop(self._by_hash.get(prompt_hash(request.prompt)))
        if entry is None:
            raise ScriptExhausted(
                f"no scripted response for tag={request.request_tag!r}"
            )
        return list(entry)


class CallableBackend:
    """Backend driven by a plain function; handy for simulation tests."""

    def __init__(self, fn: Callable[[GenerationRequest], Sequence[str] | str], backend_id: str = "callable") -> None:
        self._fn = fn
        self.backend_id = backend_id

    def complete(self, request: GenerationRequest) -> list[str]:
        out = self._fn(request)
        return [out] if isinstance(out, str) else list(out)


def load_transcript(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


class ReplayBackend(ScriptedBackend):
    """Scripted backend pre-loaded from a recorded transcript file."""

    def __init__(self, path: str | Path) -> None:
        super().__init__(backend_id="replay")
        for record in load_transcript(path):
            index = len(self._entries)
            self._entries.append(list(record["samples"]))
            if record.get("tag"):
                self._by_tag.setdefault(record["tag"], deque()).append(index)
            if record.get("prompt_hash"):
                self._by_hash.setdefault(record["prompt_hash"], deque()).append(index)


@dataclass
class GatewayStats:
    calls: int = 0
    attempts: int = 0
    failures: int = 0


class LlmGateway:
    """Single entry point for all completions.

    When ``transcript_path`` is set, every successful call is appended as one
    JSON line ``{tag, prompt_hash, prompt, samples, ts}``; a ReplayBackend
    built from that file reproduces the run byte-for-byte.
    """

    def __init__(self, backend: Backend, transcript_path: str | Path | None = None) -> None:
        self.backend = backend
        self.stats = GatewayStats()
        self._transcript_path = Path(transcript_path) if transcript_path else None
        self._transcript_fh = None
        self._lock = threading.Lock()

    def close(self) -> None:
        with self._lock:
            if self._transcript_fh is not None:
                self._transcript_fh.close()
                self._transcript_fh = None

    def __enter__(self) -> "LlmGateway":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _record(self, request: GenerationRequest, samples: list[str]) -> None:
        if self._transcript_path is None:
            return
        row = {
            "tag": request.request_tag,
            "prompt_hash": prompt_hash(request.prompt),
            "prompt": request.prompt,
            "samples": samples,
            "ts": time.time(),
        }
        line = json.dumps(row, ensure_ascii=False)
        with self._lock:
            if self._transcript_fh is None:
                self._transcript_path.parent.mkdir(parents=True, exist_ok=True)
                self._transcript_fh = open(self._transcript_path, "a", encoding="utf-8")
            self._transcript_fh.write(line + "\n")
            self._transcript_fh.flush()

    def generate(self, request: GenerationRequest) -> GenerationResult:
        started = time.monotonic()
        with self._lock:
            self.stats.calls += 1
            self.stats.attempts += 1
        try:
            samples = self.backend.complete(request)
        except GatewayError:
            with self._lock:
                self.stats.failures += 1
            raise
        if len(samples) != request.n_samples:
            with self._lock:
                self.stats.failures += 1
            raise BackendError(
                f"backend returned {len(samples)} samples, requested {request.n_samples}"
                f" (tag={request.request_tag!r})"
            )
        self._record(request, samples)
        return GenerationResult(
            samples=samples,
            backend_id=self.backend.backend_id,
            latency=time.monotonic() - started,
        )

    def with_retry(
        self,
        request: GenerationRequest,
        max_attempts: int = 3,
        backoff: float = 1.0,
    ) -> GenerationResult:
        """Like generate(), but retries TransportError with exponential backoff.

        ``backoff`` is the first delay in seconds; it doubles per retry.
        Other gateway errors propagate immediately.
        """
        if max_attempts < 1:
            raise ValidationError(f"max_attempts must be >= 1, got {max_attempts}")
        delay = backoff
        for attempt in range(max_attempts):
            try:
                return self.generate(request)
            except TransportError:
                if attempt == max_attempts - 1:
                    raise
                log.warning(
                    "transient failure for tag=%s, retrying in %.1fs",
                    request.request_tag,
                    delay,
                )
                if delay > 0:
                    time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def run_batch(
        self,
        requests: Iterable[GenerationRequest],
        parallelism: int = 1,
        max_attempts: int = 3,
        backoff: float = 1.0,
    ) -> list[GenerationResult | GatewayError]:
        """Run many requests, bounded by ``parallelism`` workers.

        The output list lines up positionally with the input; a failed
        request yields its error object at that position instead of
        aborting the batch.
        """
        if parallelism < 1:
            raise ValidationError(f"parallelism must be >= 1, got {parallelism}")
        items = list(requests)

        def run_one(request: GenerationRequest) -> GenerationResult | GatewayError:
            try:
                return self.with_retry(request, max_attempts=max_attempts, backoff=backoff)
            except GatewayError as exc:
                return exc

        if parallelism == 1:
            return [run_one(request) for request in items]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(run_one, items))

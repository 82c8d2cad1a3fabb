"""Generative and embedding model access.

Everything in the pipeline talks to models through :class:`ChatProvider` and
an embedder exposing ``dimension`` and ``embed(text)``.  The stub classes
make every stage reproducible offline; the HTTP classes target any
OpenAI-compatible endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

import numpy as np
import yaml

log = logging.getLogger(__name__)

PROMPT_KINDS = ("sem", "ent", "rel", "tag", "mtag", "querytag", "answer", "refine")

DEFAULT_TEMPLATES: dict[str, str] = {
    "sem": (
        "You decide whether a document continues on the same topic.\n"
        "CURRENT CHUNK:\n{chunk}\n\n"
        "RECENT PARAGRAPHS (oldest first):\n{window}\n\n"
        "CANDIDATE PARAGRAPH:\n{paragraph}\n\n"
        "Does the candidate paragraph share the topic of the current chunk, "
        "given the recent paragraphs? Reply with True or False only."
    ),
    "ent": (
        "Identify all relevant entities in the text below. Write one entity per "
        "line as: name{sep}type{sep}context. The type must be one of: {types}. "
        "The context is a few sentences describing the entity as used in the text. "
        "Write NONE if there are no entities.\n\nTEXT:\n{chunk}"
    ),
    "rel": (
        "Entities of one document chunk, each followed by its reference material:\n"
        "{entities}\n\nCandidate ordered pairs:\n{pairs}\n\n"
        "For each pair that is related, write one line as: "
        "source{sep}relationship{sep}target, where relationship is a concise phrase. "
        "Write NONE if no pair is related."
    ),
    "tag": (
        "Summarize the content below. Use only these categories:\n{categories}\n\n"
        "Write one line per category as Category: summary. Omit empty categories.\n\n"
        "CONTENT:\n{content}"
    ),
    "mtag": (
        "Merge the tag summaries below into one more abstract summary, "
        "strictly adhering to the following categories:\n{categories}\n\n"
        "Write one line per category as Category: summary.\n\n{summaries}"
    ),
    "querytag": (
        "Summarize the question below using only these categories:\n{categories}\n\n"
        "Write one line per category as Category: summary.\n\nQUESTION: {question}"
    ),
    "answer": (
        "Given QUESTION: {Q}\nGRAPH:\n{GRAPH}\n\n"
        "Answer the question from the facts in the graph above and "
        "name the entities you rely on."
    ),
    "refine": (
        "QUESTION: {Q}\nLAST RESPONSE: {RESPONSE}\nSUMMARY:\n{SUMMARY}\n\n"
        "Revise the last response where the summary adds or corrects "
        "information. Reply with the revised response only."
    ),
}


class ProviderError(RuntimeError):
    pass


class UnknownPromptKind(ProviderError):
    pass


class BudgetExceeded(ProviderError):
    def __init__(self, kind: str, tokens: int, budget: int):
        super().__init__(f"prompt '{kind}' needs {tokens} tokens, budget is {budget}")
        self.kind = kind
        self.tokens = tokens
        self.budget = budget


class TransportFailure(ProviderError):
    """Remote call failed after all retries."""


class StubMiss(ProviderError):
    pass


class DimensionMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


# ---------------------------------------------------------------------------
# token counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenCounter:
    """Deterministic token proxy.

    ``bytes4`` counts ceil(utf-8 bytes / 4); ``whitespace`` counts
    whitespace-separated words.
    """

    scheme: str = "bytes4"
    budget: int = 8192

    def __post_init__(self) -> None:
        if self.scheme not in ("bytes4", "whitespace"):
            raise ValueError(f"unknown token scheme {self.scheme!r}")
        if self.budget <= 0:
            raise ValueError("token budget must be positive")

    def count(self, text: str) -> int:
        if self.scheme == "whitespace":
            return len(text.split())
        return -(-len(text.encode("utf-8")) // 4)


# ---------------------------------------------------------------------------
# audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    kind: str
    slots: dict[str, str]
    fingerprint: str
    response: str | None
    error: str | None = None


class AuditLog:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []

    def append(self, record: AuditRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def by_kind(self, kind: str) -> list[AuditRecord]:
        return [r for r in self.records if r.kind == kind]

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def fingerprint(kind: str, slots: Mapping[str, str]) -> str:
    """Stable 16-hex-digit digest of a prompt invocation."""
    payload = json.dumps({"kind": kind, "slots": dict(slots)}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# chat providers
# ---------------------------------------------------------------------------


class ChatProvider:
    """Renders prompt templates, enforces the token budget and records calls.

    Subclasses implement :meth:`_complete`.
    """

    name = "base"

    def __init__(
        self,
        templates: Mapping[str, str] | None = None,
        counter: TokenCounter | None = None,
    ) -> None:
        self.templates = dict(DEFAULT_TEMPLATES)
        if templates:
            self.templates.update(templates)
        self.counter = counter or TokenCounter()
        self.audit = AuditLog()

    def render(self, kind: str, slots: Mapping[str, str]) -> str:
        try:
            template = self.templates[kind]
        except KeyError:
            raise UnknownPromptKind(f"no template registered for prompt kind {kind!r}") from None
        try:
            return template.format(**slots)
        except KeyError as exc:
            raise ProviderError(f"prompt {kind!r} is missing slot {exc.args[0]!r}") from None

    def fits(self, kind: str, slots: Mapping[str, str]) -> bool:
        return self.counter.count(self.render(kind, slots)) <= self.counter.budget

    def chat(self, kind: str, slots: Mapping[str, str]) -> str:
        slots = {k: str(v) for k, v in slots.items()}
        fp = fingerprint(kind, slots)
        response: str | None = None
        error: str | None = None
        try:
            prompt = self.render(kind, slots)
            tokens = self.counter.count(prompt)
            if tokens > self.counter.budget:
                raise BudgetExceeded(kind, tokens, self.counter.budget)
            response = self._complete(kind, slots, prompt)
            return response
        except Exception as exc:
            error = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            self.audit.append(AuditRecord(kind, slots, fp, response, error))

    def _complete(self, kind: str, slots: dict[str, str], prompt: str) -> str:
        raise NotImplementedError


@dataclass
class ScriptEntry:
    kind: str
    response: str
    fingerprint: str | None = None
    match: dict[str, str] = field(default_factory=dict)

    def matches(self, kind: str, slots: Mapping[str, str], fp: str) -> bool:
        if self.kind not in ("*", kind):
            return False
        if self.fingerprint is not None and self.fingerprint != fp:
            return False
        return all(needle in slots.get(slot, "") for slot, needle in self.match.items())


@dataclass
class StubScript:
    """Canned responses for offline runs.

    Entries are tried in order; the first whose kind, optional fingerprint and
    slot substrings all match wins.  Unmatched calls fall back to ``echo``
    (the rendered prompt), ``error``, or ``{"fixed": text}``; ``fallbacks``
    overrides the policy per prompt kind.  ``embeddings`` pins exact vectors
    for given texts in :class:`HashEmbedder`.
    """

    entries: list[ScriptEntry] = field(default_factory=list)
    fallback: Any = "echo"
    fallbacks: dict[str, Any] = field(default_factory=dict)
    embeddings: dict[str, list[float]] = field(default_factory=dict)

    def add(self, kind: str, response: str, *, fingerprint: str | None = None, **match: str) -> None:
        self.entries.append(ScriptEntry(kind, response, fingerprint, dict(match)))

    def lookup(self, kind: str, slots: Mapping[str, str], prompt: str) -> str:
        fp = fingerprint(kind, slots)
        for entry in self.entries:
            if entry.matches(kind, slots, fp):
                return entry.response
        policy = self.fallbacks.get(kind, self.fallback)
        if policy == "echo":
            return prompt
        if isinstance(policy, Mapping) and "fixed" in policy:
            return str(policy["fixed"])
        raise StubMiss(f"no scripted response for {kind!r} (fingerprint {fp})")

    def to_dict(self) -> dict[str, Any]:
        entries = []
        for e in self.entries:
            d: dict[str, Any] = {"kind": e.kind}
            if e.fingerprint is not None:
                d["fingerprint"] = e.fingerprint
            if e.match:
                d["match"] = dict(e.match)
            d["response"] = e.response
            entries.append(d)
        return {
            "fallback": self.fallback,
            "fallbacks": dict(self.fallbacks),
            "entries": entries,
            "embeddings": {k: list(v) for k, v in self.embeddings.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> StubScript:
        entries = [
            ScriptEntry(
                kind=str(e["kind"]),
                response=str(e["response"]),
                fingerprint=e.get("fingerprint"),
                match={str(k): str(v) for k, v in (e.get("match") or {}).items()},
            )
            for e in data.get("entries") or []
        ]
        return cls(
            entries=entries,
            fallback=data.get("fallback", "echo"),
            fallbacks=dict(data.get("fallbacks") or {}),
            embeddings={str(k): [float(x) for x in v] for k, v in (data.get("embeddings") or {}).items()},
        )

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True, width=100),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> StubScript:
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {})


class StubChatProvider(ChatProvider):
    name = "stub"

    def __init__(self, script: StubScript | None = None, **kwargs: Any) -> None:
        super().__init__(**kwargs)
        self.script = script or StubScript()

    def _complete(self, kind: str, slots: dict[str, str], prompt: str) -> str:
        return self.script.lookup(kind, slots, prompt)


class FunctionChatProvider(ChatProvider):
    """Wraps a plain callable ``fn(kind, slots) -> str``; handy in tests."""

    name = "function"

    def __init__(self, fn: Callable[[str, dict[str, str]], str], **kwargs: Any) -> None:
        super().__init__(**kwargs)
        self.fn = fn

    def _complete(self, kind: str, slots: dict[str, str], prompt: str) -> str:
        return self.fn(kind, slots)


def with_retry(
    call: Callable[[], Any],
    *,
    attempts: int = 3,
    base_delay: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> Any:
    """Run ``call`` with exponential backoff on transport-class failures."""
    import httpx

    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return call()
        except httpx.HTTPStatusError as exc:
            if exc.response.status_code != 429 and exc.response.status_code < 500:
                raise ProviderError(f"remote rejected request: {exc.response.status_code}") from exc
            last = exc
        except httpx.TransportError as exc:
            last = exc
        if attempt + 1 < attempts:
            sleep(base_delay * (2**attempt))
    raise TransportFailure(f"remote call failed after {attempts} attempts: {last}") from last


def _api_key(env_var: str | None) -> str | None:
    return os.environ.get(env_var) if env_var else None


class OpenAIChatProvider(ChatProvider):
    """Chat completions against an OpenAI-compatible HTTP endpoint."""

    name = "openai"

    def __init__(
        self,
        model: str,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str | None = "OPENAI_API_KEY",
        client: Any = None,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
        **kwargs: Any,
    ) -> None:
        import httpx

        super().__init__(**kwargs)
        self.model = model
        headers = {}
        key = _api_key(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = client or httpx.Client(base_url=base_url, headers=headers, timeout=timeout)
        self._sleep = sleep

    def _complete(self, kind: str, slots: dict[str, str], prompt: str) -> str:
        def call() -> str:
            resp = self.client.post(
                "/chat/completions",
                json={
                    "model": self.model,
                    "temperature": 0,
                    "messages": [{"role": "user", "content": prompt}],
                },
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]

        return with_retry(call, sleep=self._sleep)


# ---------------------------------------------------------------------------
# embedding providers
# ---------------------------------------------------------------------------


@runtime_checkable
class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def unit(vec: Any) -> np.ndarray:
    """Unit-normalize; vectors already of norm 1 (within 1e-12) pass through
    untouched so repeated calls never perturb stored bits."""
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    if abs(norm - 1.0) <= 1e-12:
        return v
    return v / norm


class HashEmbedder:
    """Hashed character n-gram embedding, unit-normalized.

    Each n-gram of ``" " + text + " "`` hashes (blake2b over
    ``"{seed}:{gram}"``) to a bucket, a sign and a weight in [1, 2).
    Texts listed in ``pins`` map to the pinned vector instead.
    """

    name = "hash"

    def __init__(
        self,
        dimension: int = 64,
        seed: int = 0,
        ngram: int = 3,
        pins: Mapping[str, Any] | None = None,
    ) -> None:
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.ngram = ngram
        self.pins: dict[str, np.ndarray] = {}
        for text, vec in (pins or {}).items():
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (dimension,):
                raise DimensionMismatch(f"pinned vector for {text!r} has shape {v.shape}")
            self.pins[text] = unit(v)

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmptyInput("cannot embed empty text")
        if text in self.pins:
            return self.pins[text].copy()
        vec = np.zeros(self.dimension)
        padded = f" {text} "
        for i in range(len(padded) - self.ngram + 1):
            gram = padded[i : i + self.ngram]
            h = int.from_bytes(
                hashlib.blake2b(f"{self.seed}:{gram}".encode("utf-8"), digest_size=8).digest(),
                "little",
            )
            sign = 1.0 if (h >> 32) & 1 else -1.0
            weight = 1.0 + ((h >> 40) & 0xFFFF) / 65536.0
            vec[h % self.dimension] += sign * weight
        if not np.any(vec):
            vec[0] = 1.0
        return unit(vec)


class OpenAIEmbeddingProvider:
    name = "openai"

    def __init__(
        self,
        model: str,
        dimension: int,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str | None = "OPENAI_API_KEY",
        client: Any = None,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        import httpx

        self.model = model
        self.dimension = dimension
        headers = {}
        key = _api_key(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = client or httpx.Client(base_url=base_url, headers=headers, timeout=timeout)
        self._sleep = sleep

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmptyInput("cannot embed empty text")

        def call() -> list[float]:
            resp = self.client.post(
                "/embeddings",
                json={"model": self.model, "input": text, "dimensions": self.dimension},
            )
            resp.raise_for_status()
            return resp.json()["data"][0]["embedding"]

        vec = np.asarray(with_retry(call, sleep=self._sleep), dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(f"remote returned {vec.shape[0]} dims, expected {self.dimension}")
        if not np.all(np.isfinite(vec)):
            raise ProviderError("remote returned non-finite embedding")
        return vec

"""Job drivers behind the CLI: ingest, build-hierarchy and query."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from filelock import FileLock, Timeout

from .chunker import Chunk, Document, chunk_document, load_corpus
from .config import PipelineConfig
from .constructor import LinkPolicy, commit_entities, generate_relations, link_tier, request_entities
from .providers import (
    ChatProvider,
    HashEmbedder,
    OpenAIChatProvider,
    OpenAIEmbeddingProvider,
    StubChatProvider,
    StubScript,
    TokenCounter,
)
from .retrieval import RetrievalConfig, RetrievalTrace, run_query
from .snapshot import Snapshot, SnapshotError, load_snapshot, save_snapshot
from .store import GraphStore, Tier, load_semantic_types, load_vocabulary
from .taghier import build_hierarchy, summarize_graph

log = logging.getLogger(__name__)

USER_PREFIX = "u:"
LITERATURE_PREFIX = "l:"


class JobError(RuntimeError):
    """A job failed; ``stage`` names the step."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class JobReport:
    job: str
    timings: dict[str, float] = field(default_factory=dict)
    counts: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    snapshot_hash: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "job": self.job,
            "timings": {k: round(v, 4) for k, v in self.timings.items()},
            "counts": self.counts,
            "warnings": list(self.warnings),
            "snapshot_hash": self.snapshot_hash,
        }


class _WarningCollector(logging.Handler):
    def __init__(self) -> None:
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@contextmanager
def _collect_warnings(report: JobReport) -> Iterator[None]:
    handler = _WarningCollector()
    root = logging.getLogger("trigraph")
    root.addHandler(handler)
    try:
        yield
    finally:
        root.removeHandler(handler)
        report.warnings.extend(handler.messages)


@contextmanager
def _stage(report: JobReport, name: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    except (JobError, SnapshotError):
        raise
    except Exception as exc:
        raise JobError(name, f"{type(exc).__name__}: {exc}") from exc
    finally:
        report.timings[name] = report.timings.get(name, 0.0) + time.perf_counter() - start


@contextmanager
def exclusive(snapshot_path: Path, timeout: float = 10.0) -> Iterator[None]:
    lock = FileLock(str(snapshot_path) + ".lock")
    try:
        with lock.acquire(timeout=timeout):
            yield
    except Timeout:
        raise JobError("lock", f"another job holds {snapshot_path}") from None


def build_providers(cfg: PipelineConfig) -> tuple[ChatProvider, Any]:
    counter = TokenCounter(cfg.tokens.scheme, cfg.tokens.max_tokens)
    p = cfg.providers
    script = StubScript.load(p.stub_script) if p.stub_script else StubScript()
    if p.chat == "stub":
        chat: ChatProvider = StubChatProvider(script, counter=counter)
    else:
        chat = OpenAIChatProvider(p.chat_model, p.base_url, p.api_key_env, counter=counter)
    if p.embedding == "stub":
        embedder: Any = HashEmbedder(p.dimension, p.seed, pins=script.embeddings)
    else:
        embedder = OpenAIEmbeddingProvider(p.embedding_model, p.dimension, p.base_url, p.api_key_env)
    return chat, embedder


def _pmap(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _chunk_all(docs: list[Document], chat: ChatProvider, cfg: PipelineConfig, prefix: str) -> list[Chunk]:
    counter = TokenCounter(cfg.tokens.scheme, cfg.tokens.max_tokens)

    def one(doc: Document) -> list[Chunk]:
        return chunk_document(doc, chat, counter, cfg.chunking.window, cfg.tokens.chunk_budget, prefix)

    return [c for chunks in _pmap(one, docs, cfg.workers) for c in chunks]


def _build_tier(
    store: GraphStore,
    docs: list[Document],
    tier: Tier,
    chat: ChatProvider,
    embedder: Any,
    cfg: PipelineConfig,
    report: JobReport,
) -> None:
    prefix = USER_PREFIX if tier == Tier.USER else LITERATURE_PREFIX
    name = "user" if tier == Tier.USER else "literature"
    sep = cfg.linking.record_separator
    with _stage(report, f"chunk:{name}"):
        chunks = _chunk_all(docs, chat, cfg, prefix)
        for c in chunks:
            store.add_chunk(c)
    with _stage(report, f"extract:{name}"):
        raws = _pmap(lambda c: request_entities(c, chat, store, sep), chunks, cfg.workers)
        for c, raw in zip(chunks, raws):
            commit_entities(c, raw, store, embedder, tier, sep)
    with _stage(report, f"link:{name}"):
        policy = LinkPolicy(cfg.linking.threshold, cfg.linking.max_links)
        link_tier(store, tier, tier + 1, policy)
    with _stage(report, f"relate:{name}"):
        for c in chunks:
            generate_relations(
                store, c.id, chat, tier, sep, cfg.linking.dense_pair_limit, cfg.linking.sparse_pair_cosine
            )


def ingest(
    cfg: PipelineConfig, chat: ChatProvider | None = None, embedder: Any = None, save: bool = True
) -> tuple[Snapshot, JobReport]:
    """Build tiers 3, 2 and 1 from the configured inputs and write the snapshot.

    With ``save=False`` nothing is written; the report carries the content hash
    the snapshot would have.
    """
    if chat is None or embedder is None:
        chat, embedder = build_providers(cfg)
    report = JobReport("ingest")
    paths = cfg.paths
    counter = TokenCounter(cfg.tokens.scheme, cfg.tokens.max_tokens)
    with _collect_warnings(report):
        with _stage(report, "load"):
            types = load_semantic_types(paths.semantic_types)
            store = GraphStore(embedder.dimension, types)
            for p in (paths.corpus, paths.literature, paths.vocab_concepts, paths.vocab_relations):
                if p is not None and not Path(p).exists():
                    raise JobError("load", f"input {p} does not exist")
            literature = load_corpus(paths.literature, counter, cfg.tokens.chunk_budget) if paths.literature else []
            corpus = load_corpus(paths.corpus, counter, cfg.tokens.chunk_budget) if paths.corpus else []
        if paths.vocab_concepts:
            with _stage(report, "vocabulary"):
                load_vocabulary(
                    store, paths.vocab_concepts, embedder, paths.vocab_relations, cfg.linking.vocab_default_type
                )
        _build_tier(store, literature, Tier.LITERATURE, chat, embedder, cfg, report)
        _build_tier(store, corpus, Tier.USER, chat, embedder, cfg, report)
        snap = Snapshot(store, cfg.schema_obj())
        if save:
            with _stage(report, "save"), exclusive(paths.snapshot):
                report.snapshot_hash = save_snapshot(snap, paths.snapshot)
        else:
            report.snapshot_hash = snap.content_hash
    report.counts = store.counts()
    return snap, report


def build_hierarchy_job(
    cfg: PipelineConfig, chat: ChatProvider | None = None, embedder: Any = None
) -> tuple[Snapshot, JobReport]:
    if chat is None or embedder is None:
        chat, embedder = build_providers(cfg)
    report = JobReport("build-hierarchy")
    with _collect_warnings(report):
        snap = load_snapshot(cfg.paths.snapshot)
        if not snap.store.metagraphs:
            raise JobError("build-hierarchy", "snapshot has no meta-graphs; run ingest first")
        schema = cfg.schema_obj()
        with _stage(report, "summarize"):
            graphs = sorted(snap.store.metagraphs.values(), key=lambda g: g.id)
            summaries = _pmap(lambda g: summarize_graph(g, snap.store, schema, chat, embedder), graphs, cfg.workers)
        with _stage(report, "cluster"):
            h = cfg.hierarchy
            hierarchy = build_hierarchy(
                [(g.id, s) for g, s in zip(graphs, summaries)],
                chat,
                embedder,
                schema,
                h.max_layers,
                h.threshold_floor,
                h.percentile,
            )
        snap = Snapshot(snap.store, schema, hierarchy)
        with _stage(report, "save"), exclusive(cfg.paths.snapshot):
            report.snapshot_hash = save_snapshot(snap, cfg.paths.snapshot)
    report.counts = dict(
        snap.store.counts(),
        layers=hierarchy.num_layers,
        tag_nodes=len(hierarchy.nodes),
        layer_sizes=[len(layer) for layer in hierarchy.layers],
    )
    return snap, report


def retrieval_config(cfg: PipelineConfig) -> RetrievalConfig:
    r = cfg.retrieval
    return RetrievalConfig(r.top_n, r.hops, r.refine_depth)


def query(
    snap: Snapshot,
    question: str,
    cfg: PipelineConfig,
    chat: ChatProvider,
    embedder: Any,
) -> RetrievalTrace:
    if snap.hierarchy is None:
        raise JobError("query", "snapshot has no tag hierarchy; run build-hierarchy first")
    return run_query(question, snap.store, snap.hierarchy, chat, embedder, retrieval_config(cfg))


def query_result(trace: RetrievalTrace) -> dict[str, Any]:
    """The public query payload shared by the CLI and the service."""
    return {
        "response": trace.final_response,
        "citations": [
            {
                "entity": c.entity,
                "entity_name": c.entity_name,
                "reference": c.reference,
                "reference_name": c.reference_name,
                "definition": c.definition,
                "definition_name": c.definition_name,
            }
            for c in trace.citations
        ],
        "trace_id": trace.trace_id,
    }

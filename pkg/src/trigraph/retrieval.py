"""Query answering: tag descent, subgraph assembly, answer and refinement."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .constructor import triple_neighbors
from .providers import BudgetExceeded, ChatProvider, ProviderError, unit
from .store import GraphStore, MetaGraph, Relation, RelationKind, Tier
from .taghier import Hierarchy, TagSchema, TagSummary, make_summary, pair_similarity, parse_tags

log = logging.getLogger(__name__)

TRACE_VERSION = "trigraph.trace/1"


class QueryError(RuntimeError):
    """A query failed; ``stage`` names the step that raised."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class EmptyTargetGraph(QueryError):
    def __init__(self, graph_id: str):
        super().__init__("assemble", f"target meta-graph {graph_id} has no entities")


@dataclass(frozen=True)
class RetrievalConfig:
    top_n: int = 60
    hops: int = 16
    refine_depth: int = 4

    def __post_init__(self) -> None:
        if self.top_n < 1 or self.hops < 0 or self.refine_depth < 0:
            raise ValueError("top_n must be positive; hops and refine_depth nonnegative")


@dataclass(frozen=True)
class Subgraph:
    retrieved: tuple[tuple[str, float], ...]
    neighborhoods: dict[str, frozenset[str]]
    entities: tuple[str, ...]
    relations: tuple[Relation, ...]


@dataclass(frozen=True)
class Citation:
    entity: str
    entity_name: str
    reference: str
    reference_name: str
    definition: str | None = None
    definition_name: str | None = None


@dataclass
class RefinementStep:
    layer: int
    node: str
    summary: str
    response: str


@dataclass
class RetrievalTrace:
    question: str
    query_tags: list[list[str]] = field(default_factory=list)
    path: list[list[Any]] = field(default_factory=list)
    target_graph: str = ""
    retrieved: list[list[Any]] = field(default_factory=list)
    expanded: list[str] = field(default_factory=list)
    graph_prompt: str = ""
    dropped: list[str] = field(default_factory=list)
    initial_response: str = ""
    refinements: list[RefinementStep] = field(default_factory=list)
    final_response: str = ""
    citations: list[Citation] = field(default_factory=list)
    degraded: bool = False
    version: str = TRACE_VERSION

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["trace_id"] = self.trace_id
        return data

    @property
    def trace_id(self) -> str:
        body = json.dumps(asdict(self), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return "q" + hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def query_tags(
    question: str, provider: ChatProvider, schema: TagSchema, embedder: Any
) -> TagSummary:
    raw = provider.chat("querytag", {"categories": schema.render(), "question": question})
    tags = parse_tags(raw, schema)
    if not tags:
        raise QueryError("querytag", f"no schema categories in query tag output {raw[:80]!r}")
    return make_summary(tags, embedder)


def descend(query: TagSummary, hierarchy: Hierarchy) -> list[tuple[str, float]]:
    """Greedy path from the root layer to a leaf.

    At each step the child most similar to ``query`` wins; ties go to the
    smaller node id.
    """
    if hierarchy.num_layers == 0:
        raise QueryError("descend", "hierarchy is empty")
    candidates = list(hierarchy.layers[0])
    path: list[tuple[str, float]] = []
    while candidates:
        scored = sorted((-pair_similarity(query, hierarchy.nodes[c].summary), c) for c in candidates)
        best_sim, best = -scored[0][0], scored[0][1]
        path.append((best, best_sim))
        candidates = hierarchy.children(best)
    return path


def assemble_subgraph(
    store: GraphStore, graph: MetaGraph, query_vector: Any, cfg: RetrievalConfig
) -> Subgraph:
    if not graph.entity_ids:
        raise EmptyTargetGraph(graph.id)
    retrieved = store.knn(unit(query_vector), cfg.top_n, candidates=graph.entity_ids)
    hoods = {eid: frozenset(triple_neighbors(store, eid, cfg.hops)) for eid, _ in retrieved}
    return _build(store, tuple(retrieved), hoods)


def _build(store: GraphStore, retrieved: tuple[tuple[str, float], ...], hoods: dict[str, frozenset[str]]) -> Subgraph:
    ids: set[str] = set()
    for eid, _ in retrieved:
        ids |= hoods[eid] | {eid}
    return Subgraph(retrieved, hoods, tuple(sorted(ids)), tuple(store.induced_relations(ids)))


def serialize_graph(store: GraphStore, sub: Subgraph) -> str:
    """One ``source relation target`` clause per edge, then isolated names."""
    lines = []
    touched: set[str] = set()
    for r in sorted(sub.relations, key=lambda r: (r.source, r.target, r.kind.value)):
        lines.append(f"{store.entities[r.source].name} {r.description} {store.entities[r.target].name}")
        touched.update((r.source, r.target))
    for eid in sub.entities:
        if eid not in touched:
            lines.append(store.entities[eid].name)
    return "\n".join(lines)


def citations_for(store: GraphStore, entity_ids: Any) -> list[Citation]:
    out = []
    for eid in sorted(entity_ids):
        e = store.entities[eid]
        if e.tier != Tier.USER:
            continue
        for ref in store.relations_from(eid, RelationKind.REFERENCE_OF):
            src = store.entities[ref.target]
            defs = store.relations_from(src.id, RelationKind.DEFINITION_OF)
            if not defs:
                out.append(Citation(eid, e.name, src.id, src.name))
            for d in defs:
                out.append(Citation(eid, e.name, src.id, src.name, d.target, store.entities[d.target].name))
    return out


def answer(
    question: str, store: GraphStore, sub: Subgraph, provider: ChatProvider
) -> tuple[str, Subgraph, str, list[str]]:
    """Answer from the serialized subgraph.

    While the prompt exceeds the budget the lowest-cosine retrieved entity is
    dropped together with neighbors no other retained entity reaches.
    Returns the response, the subgraph actually used, its serialization and
    the dropped ids in drop order.
    """
    if not sub.entities:
        raise QueryError("answer", "retrieved subgraph is empty")
    retained = list(sub.retrieved)
    dropped: list[str] = []
    current = sub
    while True:
        text = serialize_graph(store, current)
        slots = {"Q": question, "GRAPH": text}
        if provider.fits("answer", slots):
            break
        if len(retained) <= 1:
            raise BudgetExceeded("answer", provider.counter.count(provider.render("answer", slots)), provider.counter.budget)
        victim = retained.pop()
        dropped.append(victim[0])
        log.info("answer prompt over budget; dropped %s (cosine %.4f)", victim[0], victim[1])
        current = _build(store, tuple(retained), {eid: sub.neighborhoods[eid] for eid, _ in retained})
    return provider.chat("answer", slots), current, text, dropped


def refine(
    question: str,
    response: str,
    path: list[tuple[str, float]],
    hierarchy: Hierarchy,
    provider: ChatProvider,
    depth: int,
) -> tuple[str, list[RefinementStep], bool]:
    """Revise ``response`` with each ancestor summary on the way back up."""
    steps: list[RefinementStep] = []
    ancestors = [node for node, _ in path[:-1]][::-1][:depth]
    for node_id in ancestors:
        node = hierarchy.nodes[node_id]
        summary = node.summary.render()
        try:
            revised = provider.chat("refine", {"Q": question, "RESPONSE": response, "SUMMARY": summary})
        except ProviderError as exc:
            log.warning("refinement at %s failed (%s); keeping last response", node_id, exc)
            return response, steps, True
        steps.append(RefinementStep(node.layer, node_id, summary, revised))
        response = revised
    return response, steps, False


def run_query(
    question: str,
    store: GraphStore,
    hierarchy: Hierarchy,
    provider: ChatProvider,
    embedder: Any,
    cfg: RetrievalConfig = RetrievalConfig(),
) -> RetrievalTrace:
    if not question.strip():
        raise QueryError("input", "question is empty")
    trace = RetrievalTrace(question)
    stage = "querytag"
    try:
        tq = query_tags(question, provider, hierarchy.schema, embedder)
        trace.query_tags = [list(t) for t in tq.tags]
        stage = "descend"
        path = descend(tq, hierarchy)
        trace.path = [[n, s] for n, s in path]
        leaf = hierarchy.nodes[path[-1][0]]
        graph = store.metagraphs[leaf.children[0]]
        trace.target_graph = graph.id
        stage = "assemble"
        sub = assemble_subgraph(store, graph, embedder.embed(question), cfg)
        trace.retrieved = [[eid, cos] for eid, cos in sub.retrieved]
        stage = "answer"
        initial, used, text, dropped = answer(question, store, sub, provider)
        trace.expanded = list(used.entities)
        trace.graph_prompt = text
        trace.dropped = dropped
        trace.initial_response = initial
        stage = "refine"
        final, steps, degraded = refine(question, initial, path, hierarchy, provider, cfg.refine_depth)
    except QueryError:
        raise
    except (ProviderError, KeyError, ValueError) as exc:
        raise QueryError(stage, str(exc)) from exc
    trace.refinements = steps
    trace.final_response = final
    trace.degraded = degraded
    trace.citations = citations_for(store, used.entities)
    return trace

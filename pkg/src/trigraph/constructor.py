"""Entity extraction, cross-tier linking and per-chunk relation generation."""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .chunker import Chunk
from .providers import ChatProvider
from .store import (
    CROSS_TIER,
    Entity,
    GraphStore,
    MetaGraph,
    Relation,
    RelationKind,
    StoreError,
    Tier,
    UnknownSemanticType,
    metagraph_id,
)

log = logging.getLogger(__name__)

_BULLET = re.compile(r"^(?:[-*•]|\d+[.)])\s+")


class ExtractionError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class LinkPolicy:
    threshold: float = 0.5
    max_links: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"link threshold must lie in (0, 1], got {self.threshold}")
        if self.max_links < 1:
            raise ValueError("max_links must be at least 1")


@dataclass
class ExtractionResult:
    chunk_id: str
    entities: list[tuple[str, str, str]] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class TripleView:
    entity: str
    references: tuple[str, ...]
    definitions: tuple[str, ...]


def parse_records(text: str, n_fields: int, sep: str = "|", *, ends: bool = False) -> list[tuple[str, ...]]:
    """Parse one record per line.

    Fields are split on ``sep``; a line wrapped in parentheses is read as a
    comma-separated tuple instead.  With ``ends`` the first and last fields
    are fixed and everything between is the middle field, otherwise surplus
    separators stay in the last field.  ``NONE``, blank and ``#`` lines are
    skipped; list bullets are stripped.
    """
    rows: list[tuple[str, ...]] = []
    for line in text.splitlines():
        s = _BULLET.sub("", line.strip())
        if not s or s.startswith("#") or s.rstrip(".").upper() == "NONE":
            continue
        delim = sep
        if s.startswith("(") and s.endswith(")"):
            s, delim = s[1:-1], ","
        if ends:
            parts = s.split(delim)
            if len(parts) >= n_fields:
                parts = [parts[0], delim.join(parts[1:-1]), parts[-1]] if n_fields == 3 else parts
        else:
            parts = s.split(delim, n_fields - 1)
        parts = [p.strip() for p in parts]
        if len(parts) != n_fields or not all(parts[:1]):
            raise ExtractionError(f"cannot parse record {line!r} into {n_fields} fields", text)
        rows.append(tuple(parts))
    return rows


def request_entities(chunk: Chunk, provider: ChatProvider, store: GraphStore, sep: str = "|") -> str:
    """The raw ``ent`` response for one chunk; safe to call from worker threads."""
    return provider.chat(
        "ent",
        {"chunk": chunk.text, "types": "; ".join(store.semantic_types), "sep": f" {sep} "},
    )


def commit_entities(
    chunk: Chunk,
    raw: str,
    store: GraphStore,
    embedder: Any,
    tier: int = Tier.USER,
    sep: str = "|",
) -> ExtractionResult:
    result = ExtractionResult(chunk.id)
    seen: set[tuple[str, str]] = set()
    for name, type_, context in parse_records(raw, 3, sep):
        try:
            type_ = store.canonical_type(type_)
        except UnknownSemanticType:
            log.warning("%s: entity %r has off-vocabulary type %r; dropped", chunk.id, name, type_)
            continue
        if (name, type_) in seen:
            log.info("%s: duplicate entity %r dropped", chunk.id, name)
            continue
        seen.add((name, type_))
        if not context:
            context = name
        e = Entity.create(name, type_, context, tier, chunk.id, embedder)
        result.entities.append((name, type_, context))
        result.ids.append(store.upsert_entity(e))
    return result


def extract_entities(
    chunk: Chunk,
    provider: ChatProvider,
    store: GraphStore,
    embedder: Any,
    tier: int = Tier.USER,
    sep: str = "|",
) -> ExtractionResult:
    return commit_entities(chunk, request_entities(chunk, provider, store, sep), store, embedder, tier, sep)


def link_tier(
    store: GraphStore,
    source_tier: int,
    target_tier: int,
    policy: LinkPolicy = LinkPolicy(),
    kind: RelationKind | None = None,
    sources: Iterable[str] | None = None,
    dry_run: bool = False,
) -> list[Relation]:
    """Link each source entity to its best target(s) with cosine >= threshold."""
    pair = (Tier(source_tier), Tier(target_tier))
    derived = next((k for k, tiers in CROSS_TIER.items() if tiers == pair), None)
    if derived is None:
        raise ValueError(f"no cross-tier relation goes tier {source_tier} -> tier {target_tier}")
    if kind is not None and RelationKind(kind) != derived:
        raise ValueError(f"{kind} cannot link tier {source_tier} -> tier {target_tier}")
    targets = store.tier_ids(target_tier)
    if not targets:
        log.warning("tier %d is empty; no %s links made", target_tier, derived.value)
        return []
    matrix = np.vstack([store.entities[t].vector for t in targets])
    src_ids = store.tier_ids(source_tier) if sources is None else sorted(set(sources))
    out: list[Relation] = []
    for sid in src_ids:
        src = store.get(sid)
        if src.tier != pair[0]:
            raise StoreError(f"entity {sid} is not in tier {source_tier}")
        sims = matrix @ src.vector
        # rank on rounded scores so duplicate targets tie exactly despite BLAS noise
        hits = sorted(
            (-round(float(s), 12), targets[i], float(s)) for i, s in enumerate(sims) if s >= policy.threshold
        )
        for _, tid, sim in hits[: policy.max_links]:
            out.append(Relation.create(sid, tid, derived, similarity=min(1.0, sim)))
    if not dry_run:
        for r in out:
            store.add_relation(r)
    return out


def triple_neighbors(store: GraphStore, center: str, k: int) -> set[str]:
    """Entities within ``k + tier - 1`` hops of ``center`` on the undirected graph."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    dist = store.bfs_distances(center, max_depth=k + 2)
    return {eid for eid, d in dist.items() if d <= k + int(store.entities[eid].tier) - 1}


def triple_view(store: GraphStore, eid: str) -> TripleView:
    if store.get(eid).tier == Tier.LITERATURE:
        defs = tuple(r.target for r in store.relations_from(eid, RelationKind.DEFINITION_OF))
        return TripleView(eid, (), defs)
    refs = tuple(r.target for r in store.relations_from(eid, RelationKind.REFERENCE_OF))
    defs = tuple(
        sorted({r.target for ref in refs for r in store.relations_from(ref, RelationKind.DEFINITION_OF)})
    )
    return TripleView(eid, refs, defs)


def candidate_pairs(
    store: GraphStore, members: list[str], dense_limit: int = 12, cosine_floor: float = 0.3
) -> list[tuple[str, str]]:
    pairs = list(itertools.permutations(members, 2))
    if len(members) <= dense_limit:
        return pairs
    return [(a, b) for a, b in pairs if float(store.entities[a].vector @ store.entities[b].vector) >= cosine_floor]


def generate_relations(
    store: GraphStore,
    chunk_id: str,
    provider: ChatProvider,
    tier: int = Tier.USER,
    sep: str = "|",
    dense_limit: int = 12,
    cosine_floor: float = 0.3,
) -> tuple[list[Relation], MetaGraph | None]:
    """Ask the provider for relations among one chunk's entities.

    Each entity is shown with the contents of the entities it links to one
    tier down.  Edges naming unknown entities or pairs outside the candidate
    set are logged and skipped.  Tier-1 chunks also get their meta-graph
    record.
    """
    members = sorted(
        eid for eid, e in store.entities.items() if e.chunk_id == chunk_id and int(e.tier) == int(tier)
    )
    link_kind = RelationKind.REFERENCE_OF if int(tier) == Tier.USER else RelationKind.DEFINITION_OF
    made: list[Relation] = []
    pairs = candidate_pairs(store, members, dense_limit, cosine_floor) if len(members) > 1 else []
    if pairs:
        lines = []
        by_name: dict[str, str] = {}
        for eid in members:
            e = store.entities[eid]
            by_name.setdefault(e.name.strip().lower(), eid)
            lines.append(f"- {e.name}: {e.content}")
            for r in store.relations_from(eid, link_kind):
                lines.append(f"    reference: {store.entities[r.target].content}")
        names = {eid: store.entities[eid].name for eid in members}
        slots = {
            "entities": "\n".join(lines),
            "pairs": "\n".join(f"({names[a]}, {names[b]})" for a, b in pairs),
            "sep": f" {sep} ",
        }
        raw = provider.chat("rel", slots)
        allowed = set(pairs)
        seen: set[tuple[str, str]] = set()
        for source, description, target in parse_records(raw, 3, sep, ends=True):
            a = by_name.get(source.lower())
            b = by_name.get(target.lower())
            if a is None or b is None:
                log.warning("%s: relation %r -> %r names an unknown entity; skipped", chunk_id, source, target)
                continue
            if (a, b) not in allowed:
                log.warning("%s: relation %r -> %r is not a candidate pair; skipped", chunk_id, source, target)
                continue
            if (a, b) in seen:
                log.info("%s: duplicate relation %r -> %r skipped", chunk_id, source, target)
                continue
            seen.add((a, b))
            rel = Relation.create(a, b, RelationKind.GENERATED, description or "related to")
            store.add_relation(rel)
            made.append(rel)

    graph = None
    if int(tier) == Tier.USER:
        member_set = set(members)
        rel_ids = sorted(
            r.id
            for r in store.relations.values()
            if r.kind == RelationKind.GENERATED and r.source in member_set and r.target in member_set
        )
        graph = MetaGraph(metagraph_id(chunk_id), chunk_id, tuple(members), tuple(rel_ids))
        store.add_metagraph(graph)
    return made, graph

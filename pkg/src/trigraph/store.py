"""Entities, relations and the in-memory graph store.

The store is single-writer: construction code mutates it, retrieval only
reads.  Vectors are kept unit-normalized so cosine similarity is a dot
product.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .chunker import Chunk
from .providers import DimensionMismatch, unit

log = logging.getLogger(__name__)


class StoreError(ValueError):
    pass


class UnknownSemanticType(StoreError):
    pass


class ConflictError(StoreError):
    pass


class UnknownEntity(StoreError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class Tier(enum.IntEnum):
    USER = 1
    LITERATURE = 2
    VOCAB = 3


class RelationKind(str, enum.Enum):
    REFERENCE_OF = "REFERENCE_OF"
    DEFINITION_OF = "DEFINITION_OF"
    GENERATED = "GENERATED"
    VOCAB = "VOCAB"

    @property
    def label(self) -> str:
        return {
            RelationKind.REFERENCE_OF: "the reference of",
            RelationKind.DEFINITION_OF: "the definition of",
        }.get(self, self.value.lower())


CROSS_TIER = {
    RelationKind.REFERENCE_OF: (Tier.USER, Tier.LITERATURE),
    RelationKind.DEFINITION_OF: (Tier.LITERATURE, Tier.VOCAB),
}


def _digest(*parts: Any) -> str:
    payload = json.dumps(parts, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


def entity_id(tier: int, chunk_id: str | None, name: str, type_: str) -> str:
    return "e" + _digest(int(tier), chunk_id, name, type_)


def relation_id(kind: RelationKind | str, source: str, target: str) -> str:
    return "r" + _digest(RelationKind(kind).value, source, target)


def render_content(name: str, type_: str, context: str) -> str:
    return f"name: {name}; type: {type_}; context: {context}"


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    type: str
    context: str
    tier: Tier
    chunk_id: str | None
    embedding: tuple[float, ...]

    @property
    def content(self) -> str:
        return render_content(self.name, self.type, self.context)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.embedding, dtype=np.float64)

    @classmethod
    def create(
        cls,
        name: str,
        type_: str,
        context: str,
        tier: int,
        chunk_id: str | None,
        embedder: Any,
    ) -> Entity:
        content = render_content(name, type_, context)
        vec = unit(embedder.embed(content))
        return cls(
            id=entity_id(tier, chunk_id, name, type_),
            name=name,
            type=type_,
            context=context,
            tier=Tier(tier),
            chunk_id=chunk_id,
            embedding=tuple(float(x) for x in vec),
        )


@dataclass(frozen=True)
class Relation:
    id: str
    source: str
    target: str
    kind: RelationKind
    description: str = ""
    similarity: float | None = None

    @classmethod
    def create(
        cls,
        source: str,
        target: str,
        kind: RelationKind | str,
        description: str | None = None,
        similarity: float | None = None,
    ) -> Relation:
        kind = RelationKind(kind)
        if description is None:
            description = kind.label
        return cls(relation_id(kind, source, target), source, target, kind, description, similarity)


@dataclass(frozen=True)
class MetaGraph:
    id: str
    chunk_id: str
    entity_ids: tuple[str, ...]
    relation_ids: tuple[str, ...]


def metagraph_id(chunk_id: str) -> str:
    return "g" + _digest(chunk_id)


class VectorIndex:
    """Exact cosine top-k over unit vectors; ties break by ascending id."""

    def __init__(self, dimension: int) -> None:
        self.dimension = dimension
        self._pos: dict[str, int] = {}
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, id_: str, vector: Sequence[float]) -> None:
        v = unit(vector)
        if v.shape != (self.dimension,):
            raise DimensionMismatch(f"vector has {v.shape[0]} dims, index has {self.dimension}")
        if id_ in self._pos:
            self._rows[self._pos[id_]] = v
        else:
            self._pos[id_] = len(self._ids)
            self._ids.append(id_)
            self._rows.append(v)
        self._matrix = None

    def search(
        self,
        query: Sequence[float],
        k: int,
        candidates: Iterable[str] | None = None,
    ) -> list[tuple[str, float]]:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatch(f"query has {q.shape} dims, index has {self.dimension}")
        if k <= 0 or not self._ids:
            return []
        q = unit(q)
        if self._matrix is None:
            self._matrix = np.vstack(self._rows)
        if candidates is None:
            rows = np.arange(len(self._ids))
        else:
            rows = np.array(sorted(self._pos[c] for c in set(candidates) if c in self._pos), dtype=int)
            if rows.size == 0:
                return []
        sims = self._matrix[rows] @ q
        # BLAS may score identical rows one ulp apart; rank on rounded values so ties stay ties
        keys = np.round(sims, 12)
        order = sorted(range(rows.size), key=lambda i: (-keys[i], self._ids[rows[i]]))
        return [(self._ids[rows[i]], float(sims[i])) for i in order[:k]]


def load_semantic_types(path: str | Path | None = None) -> list[str]:
    """One type per line; blank lines and ``#`` comments ignored.  ``None``
    loads the bundled UMLS semantic type names."""
    if path is None:
        text = resources.files("trigraph.data").joinpath("semantic_types.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


@dataclass
class GraphStore:
    dimension: int
    semantic_types: list[str] = field(default_factory=load_semantic_types)
    entities: dict[str, Entity] = field(default_factory=dict)
    relations: dict[str, Relation] = field(default_factory=dict)
    metagraphs: dict[str, MetaGraph] = field(default_factory=dict)
    chunks: dict[str, Chunk] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._types = {t.lower(): t for t in self.semantic_types}
        self._adj: dict[str, set[str]] = {eid: set() for eid in self.entities}
        self._out: dict[str, list[str]] = {eid: [] for eid in self.entities}
        self.index = VectorIndex(self.dimension)
        for e in self.entities.values():
            self.index.add(e.id, e.embedding)
        for r in self.relations.values():
            self._adj[r.source].add(r.target)
            self._adj[r.target].add(r.source)
            self._out[r.source].append(r.id)

    # -- vocabulary ---------------------------------------------------------

    def canonical_type(self, type_: str) -> str:
        try:
            return self._types[type_.strip().lower()]
        except KeyError:
            raise UnknownSemanticType(f"semantic type {type_!r} is not in the vocabulary") from None

    # -- writes -------------------------------------------------------------

    def upsert_entity(self, e: Entity) -> str:
        if e.type not in self._types.values():
            raise UnknownSemanticType(f"semantic type {e.type!r} is not in the vocabulary")
        if not e.name.strip():
            raise StoreError("entity name is empty")
        if (e.tier == Tier.VOCAB) != (e.chunk_id is None):
            raise StoreError(f"tier {int(e.tier)} entity {e.name!r} has wrong chunk_id {e.chunk_id!r}")
        if e.id != entity_id(e.tier, e.chunk_id, e.name, e.type):
            raise StoreError(f"entity id {e.id} does not match its content hash")
        if len(e.embedding) != self.dimension:
            raise DimensionMismatch(f"entity {e.id} has {len(e.embedding)} dims, store has {self.dimension}")
        vec = unit(e.embedding)
        e = replace(e, embedding=tuple(float(x) for x in vec))
        old = self.entities.get(e.id)
        if old is not None:
            if old != e:
                raise ConflictError(f"entity {e.id} ({e.name!r}) already stored with different content")
            return e.id
        self.entities[e.id] = e
        self._adj[e.id] = set()
        self._out[e.id] = []
        self.index.add(e.id, vec)
        return e.id

    def add_relation(self, r: Relation) -> str:
        src, dst = self.get(r.source), self.get(r.target)
        if r.source == r.target:
            raise StoreError("self-loop relations are not stored")
        if r.kind in CROSS_TIER:
            want = CROSS_TIER[r.kind]
            if (src.tier, dst.tier) != want:
                raise StoreError(f"{r.kind.value} must go tier {int(want[0])}->{int(want[1])}")
            if r.similarity is None or not 0.0 <= r.similarity <= 1.0:
                raise StoreError(f"cross-tier relation needs a unit-interval similarity, got {r.similarity}")
        elif r.kind == RelationKind.GENERATED:
            if src.tier == Tier.VOCAB or src.tier != dst.tier or src.chunk_id != dst.chunk_id:
                raise StoreError("generated relations must join two entities of one chunk")
        elif r.kind == RelationKind.VOCAB:
            if src.tier != Tier.VOCAB or dst.tier != Tier.VOCAB:
                raise StoreError("vocabulary relations join tier-3 entities only")
        if r.id != relation_id(r.kind, r.source, r.target):
            raise StoreError(f"relation id {r.id} does not match its endpoints")
        old = self.relations.get(r.id)
        if old is not None:
            if old != r:
                raise ConflictError(f"relation {r.id} already stored with different content")
            return r.id
        self.relations[r.id] = r
        self._adj[r.source].add(r.target)
        self._adj[r.target].add(r.source)
        self._out[r.source].append(r.id)
        return r.id

    def add_metagraph(self, g: MetaGraph) -> str:
        for eid in g.entity_ids:
            e = self.get(eid)
            if e.tier != Tier.USER or e.chunk_id != g.chunk_id:
                raise StoreError(f"meta-graph {g.id} member {eid} is not a tier-1 entity of {g.chunk_id}")
        members = set(g.entity_ids)
        for rid in g.relation_ids:
            r = self.relations[rid]
            if r.source not in members or r.target not in members:
                raise StoreError(f"meta-graph {g.id} relation {rid} leaves the graph")
        self.metagraphs[g.id] = g
        return g.id

    def add_chunk(self, chunk: Chunk) -> None:
        self.chunks[chunk.id] = chunk

    # -- reads --------------------------------------------------------------

    def get(self, id_: str) -> Entity:
        try:
            return self.entities[id_]
        except KeyError:
            raise UnknownEntity(f"unknown entity {id_}") from None

    def tier_ids(self, tier: int) -> list[str]:
        return sorted(eid for eid, e in self.entities.items() if e.tier == tier)

    def neighbors(self, id_: str) -> set[str]:
        self.get(id_)
        return set(self._adj[id_])

    def knn(
        self,
        query: Sequence[float],
        k: int,
        tiers: Iterable[int] | None = None,
        candidates: Iterable[str] | None = None,
    ) -> list[tuple[str, float]]:
        pool: set[str] | None = None
        if candidates is not None:
            pool = set(candidates)
        if tiers is not None:
            wanted = {int(t) for t in tiers}
            tier_pool = {eid for eid, e in self.entities.items() if int(e.tier) in wanted}
            pool = tier_pool if pool is None else pool & tier_pool
        return self.index.search(query, k, pool)

    def bfs_distances(self, center: str, max_depth: int | None = None) -> dict[str, int]:
        self.get(center)
        dist = {center: 0}
        queue = deque([center])
        while queue:
            node = queue.popleft()
            d = dist[node]
            if max_depth is not None and d >= max_depth:
                continue
            for nb in self._adj[node]:
                if nb not in dist:
                    dist[nb] = d + 1
                    queue.append(nb)
        return dist

    def hop_distance(self, a: str, b: str) -> int | None:
        """Shortest path length over the undirected view, ``None`` if unreachable."""
        self.get(b)
        return self.bfs_distances(a).get(b)

    def relations_from(self, source: str, kind: RelationKind) -> list[Relation]:
        self.get(source)
        out = [self.relations[rid] for rid in self._out[source]]
        return sorted((r for r in out if r.kind == kind), key=lambda r: r.target)

    def induced_relations(self, ids: Iterable[str]) -> list[Relation]:
        members = set(ids)
        out = [r for r in self.relations.values() if r.source in members and r.target in members]
        return sorted(out, key=lambda r: (r.source, r.target, r.kind.value))

    def check_invariants(self) -> None:
        """Full scan of the structural invariants; raises on the first breach."""
        for e in self.entities.values():
            if e.type not in self._types.values():
                raise UnknownSemanticType(f"entity {e.id} has unknown type {e.type!r}")
            if e.id != entity_id(e.tier, e.chunk_id, e.name, e.type):
                raise StoreError(f"entity id {e.id} does not match its content hash")
            if (e.tier == Tier.VOCAB) != (e.chunk_id is None):
                raise StoreError(f"entity {e.id} has wrong chunk_id for tier {int(e.tier)}")
            if len(e.embedding) != self.dimension:
                raise DimensionMismatch(f"entity {e.id} has {len(e.embedding)} dims")
        relations = list(self.relations.values())
        self.relations = {}
        self._adj = {eid: set() for eid in self.entities}
        self._out = {eid: [] for eid in self.entities}
        for r in relations:
            self.add_relation(r)
        for g in list(self.metagraphs.values()):
            self.add_metagraph(g)

    def counts(self) -> dict[str, Any]:
        tiers = {f"tier{int(t)}": 0 for t in Tier}
        for e in self.entities.values():
            tiers[f"tier{int(e.tier)}"] += 1
        kinds = {k.value: 0 for k in RelationKind}
        for r in self.relations.values():
            kinds[r.kind.value] += 1
        return {
            "chunks": len(self.chunks),
            "entities": tiers,
            "relations": kinds,
            "metagraphs": len(self.metagraphs),
        }


def load_vocabulary(
    store: GraphStore,
    concepts_path: str | Path,
    embedder: Any,
    relations_path: str | Path | None = None,
    default_type: str = "Conceptual Entity",
) -> dict[str, str]:
    """Load tier-3 concepts and their relations from TSV files.

    Concept rows are ``concept_id, name, definition[, semantic type]``;
    relation rows are ``source concept, label, target concept``.  Returns the
    concept-id to entity-id map.
    """
    ids: dict[str, str] = {}
    with open(concepts_path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 3:
                raise StoreError(f"{concepts_path}: concept row needs 3 or 4 fields: {row!r}")
            cid, name, definition = (x.strip() for x in row[:3])
            type_ = store.canonical_type(row[3] if len(row) > 3 and row[3].strip() else default_type)
            e = Entity.create(name, type_, definition, Tier.VOCAB, None, embedder)
            ids[cid] = store.upsert_entity(e)
    if relations_path is not None:
        with open(relations_path, encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh, delimiter="\t"):
                if not row or row[0].startswith("#"):
                    continue
                if len(row) != 3:
                    raise StoreError(f"{relations_path}: relation row needs 3 fields: {row!r}")
                src, label, dst = (x.strip() for x in row)
                if src not in ids or dst not in ids:
                    log.warning("vocabulary relation %s -> %s names an unknown concept; skipped", src, dst)
                    continue
                if ids[src] == ids[dst]:
                    continue
                store.add_relation(Relation.create(ids[src], ids[dst], RelationKind.VOCAB, label))
    return ids

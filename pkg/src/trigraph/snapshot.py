"""Line-delimited, hash-verified persistence of the whole graph state.

Line 1 is a header carrying the format version and the sha256 of the record
lines.  Every following line is one record serialized with sorted keys;
records are sorted by (type, key) so identical logical content always gives
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .chunker import Chunk
from .store import Entity, GraphStore, MetaGraph, Relation, RelationKind, Tier
from .taghier import Hierarchy, MergeRound, TagCategory, TagNode, TagSchema, TagSummary

FORMAT = "trigraph-snapshot"
VERSION = 1

_ORDER = ("semantic_type", "tag_category", "chunk", "entity", "relation", "metagraph", "tag_node", "merge_round")


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    store: GraphStore
    schema: TagSchema
    hierarchy: Hierarchy | None = None

    @property
    def content_hash(self) -> str:
        return _hash(_lines(self))


def _dump(rec: dict[str, Any]) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def _hash(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def _records(snap: Snapshot) -> Iterator[dict[str, Any]]:
    store = snap.store
    for i, name in enumerate(store.semantic_types):
        yield {"type": "semantic_type", "index": i, "name": name}
    for i, cat in enumerate(snap.schema.categories):
        yield {"type": "tag_category", "index": i, "name": cat.name, "description": cat.description}
    for c in store.chunks.values():
        yield {
            "type": "chunk",
            "id": c.id,
            "document_id": c.document_id,
            "paragraphs": list(c.paragraphs),
            "token_count": c.token_count,
            "text": c.text,
        }
    for e in store.entities.values():
        yield {
            "type": "entity",
            "id": e.id,
            "name": e.name,
            "ty": e.type,
            "context": e.context,
            "tier": int(e.tier),
            "chunk_id": e.chunk_id,
            "embedding": list(e.embedding),
        }
    for r in store.relations.values():
        yield {
            "type": "relation",
            "id": r.id,
            "source": r.source,
            "target": r.target,
            "kind": r.kind.value,
            "description": r.description,
            "similarity": r.similarity,
        }
    for g in store.metagraphs.values():
        yield {
            "type": "metagraph",
            "id": g.id,
            "chunk_id": g.chunk_id,
            "entity_ids": list(g.entity_ids),
            "relation_ids": list(g.relation_ids),
        }
    if snap.hierarchy is not None:
        for n in snap.hierarchy.nodes.values():
            yield {
                "type": "tag_node",
                "id": n.id,
                "layer": n.layer,
                "leaf": n.leaf,
                "children": list(n.children),
                "tags": [list(t) for t in n.summary.tags],
                "embeddings": [list(v) for v in n.summary.embeddings],
            }
        for rnd in snap.hierarchy.rounds:
            yield {
                "type": "merge_round",
                "index": rnd.index,
                "threshold": rnd.threshold,
                "similarities": [list(s) for s in rnd.similarities],
                "merges": [list(m) for m in rnd.merges],
            }


def _sort_key(rec: dict[str, Any]) -> tuple[int, Any]:
    key = rec.get("id", rec.get("index"))
    return (_ORDER.index(rec["type"]), str(key) if "id" in rec else int(key))


def _lines(snap: Snapshot) -> list[str]:
    return [_dump(r) for r in sorted(_records(snap), key=_sort_key)]


def dumps(snap: Snapshot) -> str:
    lines = _lines(snap)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "dimension": snap.store.dimension,
        "records": len(lines),
        "content_hash": _hash(lines),
    }
    return "\n".join([_dump(header), *lines]) + "\n"


def save_snapshot(snap: Snapshot, path: str | Path) -> str:
    """Write atomically; returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(snap), encoding="utf-8")
    os.replace(tmp, path)
    return snap.content_hash


def loads(text: str) -> Snapshot:
    raw = text.split("\n")
    if raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise SnapshotError("snapshot is empty")
    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"corrupted snapshot header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise SnapshotError("not a snapshot file")
    if header.get("version") != VERSION:
        raise SnapshotError(f"snapshot version {header.get('version')} is not supported (want {VERSION})")
    lines = raw[1:]
    if header.get("records") != len(lines) or header.get("content_hash") != _hash(lines):
        raise SnapshotError("snapshot content hash mismatch; file is corrupted")
    try:
        records = [json.loads(line) for line in lines]
        return _rebuild(int(header["dimension"]), records)
    except SnapshotError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"corrupted snapshot record: {exc}") from None


def load_snapshot(path: str | Path) -> Snapshot:
    path = Path(path)
    if not path.exists():
        raise SnapshotError(f"snapshot {path} does not exist")
    return loads(path.read_text(encoding="utf-8"))


def _rebuild(dimension: int, records: list[dict[str, Any]]) -> Snapshot:
    by_type: dict[str, list[dict[str, Any]]] = {t: [] for t in _ORDER}
    for rec in records:
        by_type[rec["type"]].append(rec)
    types = [r["name"] for r in sorted(by_type["semantic_type"], key=lambda r: r["index"])]
    schema = TagSchema(
        tuple(
            TagCategory(r["name"], r["description"])
            for r in sorted(by_type["tag_category"], key=lambda r: r["index"])
        )
    )
    chunks = {
        r["id"]: Chunk(r["id"], r["document_id"], tuple(r["paragraphs"]), r["token_count"], r["text"])
        for r in by_type["chunk"]
    }
    entities = {
        r["id"]: Entity(
            r["id"], r["name"], r["ty"], r["context"], Tier(r["tier"]), r["chunk_id"], tuple(r["embedding"])
        )
        for r in by_type["entity"]
    }
    relations = {
        r["id"]: Relation(
            r["id"], r["source"], r["target"], RelationKind(r["kind"]), r["description"], r["similarity"]
        )
        for r in by_type["relation"]
    }
    metagraphs = {
        r["id"]: MetaGraph(r["id"], r["chunk_id"], tuple(r["entity_ids"]), tuple(r["relation_ids"]))
        for r in by_type["metagraph"]
    }
    store = GraphStore(dimension, types, entities, relations, metagraphs, chunks)
    store.check_invariants()
    hierarchy = None
    if by_type["tag_node"]:
        nodes = {
            r["id"]: TagNode(
                r["id"],
                r["layer"],
                TagSummary(
                    tuple(tuple(t) for t in r["tags"]),
                    tuple(tuple(v) for v in r["embeddings"]),
                ),
                tuple(r["children"]),
                r["leaf"],
            )
            for r in by_type["tag_node"]
        }
        depth = 1 + max(n.layer for n in nodes.values())
        layers = [sorted(n.id for n in nodes.values() if n.layer == i) for i in range(depth)]
        rounds = [
            MergeRound(
                r["index"],
                r["threshold"],
                tuple((a, b, s) for a, b, s in r["similarities"]),
                tuple(tuple(m) for m in r["merges"]),
            )
            for r in sorted(by_type["merge_round"], key=lambda r: r["index"])
        ]
        hierarchy = Hierarchy(schema, nodes, layers, rounds)
    return Snapshot(store, schema, hierarchy)

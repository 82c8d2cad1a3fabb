"""Tag summaries of meta-graphs and the layered tag hierarchy built over them.

Leaves are tag summaries of single meta-graphs.  Each merge round compares
every pair of groups in the current top layer, sets the round threshold to
the nearest-rank 80th percentile of those similarities (never below the
configured floor) and merges groups greedily under complete linkage.  Each
committed round becomes a new layer; unmerged groups carry forward as
single-child nodes so every layer partitions the one below.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .providers import ChatProvider, unit
from .store import GraphStore, MetaGraph

log = logging.getLogger(__name__)

_TAG_LINE = re.compile(r"^[\s\-*•]*\**\s*([^:*]+?)\s*\**\s*:\s*(.*)$")


class HierarchyError(RuntimeError):
    pass


class HierarchyBuildError(HierarchyError):
    """A merge round failed; ``partial`` holds the layers committed before it."""

    def __init__(self, message: str, partial: Hierarchy, round_index: int):
        super().__init__(message)
        self.partial = partial
        self.round_index = round_index


@dataclass(frozen=True)
class TagCategory:
    name: str
    description: str


DEFAULT_CATEGORIES = (
    TagCategory("Symptoms", "Signs and symptoms reported or observed."),
    TagCategory("Patient History", "Past conditions, procedures, family and social history."),
    TagCategory("Body Functions", "Organs, physiological systems and functions involved."),
    TagCategory("Medication", "Drugs, doses and treatments mentioned."),
)


@dataclass(frozen=True)
class TagSchema:
    categories: tuple[TagCategory, ...] = DEFAULT_CATEGORIES

    def __post_init__(self) -> None:
        names = [c.name.lower() for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("tag category names must be unique")
        if not names:
            raise ValueError("tag schema needs at least one category")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str] | Mapping[str, str]]) -> TagSchema:
        cats = []
        for p in pairs:
            if isinstance(p, Mapping):
                cats.append(TagCategory(str(p["name"]), str(p.get("description", ""))))
            else:
                cats.append(TagCategory(str(p[0]), str(p[1])))
        return cls(tuple(cats))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.categories]

    def canonical(self, name: str) -> str | None:
        key = name.strip().lower()
        return next((c.name for c in self.categories if c.name.lower() == key), None)

    def render(self) -> str:
        return "\n".join(f"{c.name}: {c.description}" for c in self.categories)


@dataclass(frozen=True)
class TagSummary:
    tags: tuple[tuple[str, str], ...] = ()
    embeddings: tuple[tuple[float, ...], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.tags

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.embeddings, dtype=np.float64)

    def as_dict(self) -> dict[str, str]:
        return dict(self.tags)

    def render(self) -> str:
        return "\n".join(f"{cat}: {text}" for cat, text in self.tags)


def tag_text(category: str, text: str) -> str:
    """Text embedded for one tag."""
    return f"{category}: {text}"


def parse_tags(text: str, schema: TagSchema) -> list[tuple[str, str]]:
    """``Category: text`` lines restricted to the schema, in schema order."""
    found: dict[str, str] = {}
    for line in text.splitlines():
        m = _TAG_LINE.match(line)
        if not m:
            continue
        name, body = m.group(1), m.group(2).strip()
        cat = schema.canonical(name)
        if cat is None:
            log.info("dropping off-schema tag category %r", name.strip())
            continue
        if body and cat not in found:
            found[cat] = body
    return [(c, found[c]) for c in schema.names if c in found]


def make_summary(tags: Sequence[tuple[str, str]], embedder: Any) -> TagSummary:
    vecs = tuple(tuple(float(x) for x in unit(embedder.embed(tag_text(c, t)))) for c, t in tags)
    return TagSummary(tuple(tags), vecs)


def summarize_graph(
    graph: MetaGraph,
    store: GraphStore,
    schema: TagSchema,
    provider: ChatProvider,
    embedder: Any,
) -> TagSummary:
    if not graph.entity_ids:
        return TagSummary()
    contents = [store.entities[eid].content for eid in graph.entity_ids]
    slots = {"categories": schema.render(), "content": "\n".join(contents)}
    while len(contents) > 1 and not provider.fits("tag", slots):
        contents.pop()
        slots["content"] = "\n".join(contents)
        log.info("%s: dropped an entity from the tag prompt to fit the budget", graph.id)
    return make_summary(parse_tags(provider.chat("tag", slots), schema), embedder)


def pair_similarity(a: TagSummary, b: TagSummary) -> float:
    """Mean cosine over all cross pairs of tag embeddings, clamped to [0, 1].

    Products are summed with ``math.fsum`` so the result is exactly
    symmetric in its arguments.
    """
    if a.is_empty or b.is_empty:
        log.debug("similarity with an empty tag summary is taken as 0")
        return 0.0
    A, B = a.matrix, b.matrix
    cos = (A[:, None, :] * B[None, :, :]).sum(axis=-1)
    mean = math.fsum(cos.ravel().tolist()) / (len(A) * len(B))
    return min(1.0, max(0.0, mean))


def nearest_rank(values: Sequence[float], percent: int) -> float:
    ordered = sorted(values)
    rank = max(1, -(-percent * len(ordered) // 100))
    return ordered[rank - 1]


@dataclass(frozen=True)
class TagNode:
    id: str
    layer: int
    summary: TagSummary
    children: tuple[str, ...]
    leaf: bool = False


@dataclass(frozen=True)
class MergeRound:
    index: int
    threshold: float
    similarities: tuple[tuple[str, str, float], ...]
    merges: tuple[tuple[str, ...], ...]


@dataclass
class Hierarchy:
    schema: TagSchema
    nodes: dict[str, TagNode] = field(default_factory=dict)
    layers: list[list[str]] = field(default_factory=list)
    rounds: list[MergeRound] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._parent = {c: n.id for n in self.nodes.values() if not n.leaf for c in n.children}

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def layer_tags(self, layer: int) -> list[tuple[str, TagSummary]]:
        if not 0 <= layer < len(self.layers):
            raise IndexError(f"layer {layer} out of range (0..{len(self.layers) - 1})")
        return [(nid, self.nodes[nid].summary) for nid in sorted(self.layers[layer])]

    def parent(self, node_id: str) -> str | None:
        return self._parent.get(node_id)

    def children(self, node_id: str) -> list[str]:
        n = self.nodes[node_id]
        return [] if n.leaf else sorted(n.children)

    def leaf_for(self, metagraph_id: str) -> str | None:
        return next((n.id for n in self.nodes.values() if n.leaf and n.children == (metagraph_id,)), None)


def _node_id(level: int, seq: int) -> str:
    return f"T{level:02d}-{seq:05d}"


def _greedy_merge(ids: list[str], sims: dict[tuple[str, str], float], threshold: float) -> list[list[str]]:
    group = {i: [i] for i in ids}
    owner = {i: i for i in ids}

    def sim(x: str, y: str) -> float:
        return sims[(x, y) if x < y else (y, x)]

    for (a, b), s in sorted(sims.items(), key=lambda kv: (-kv[1], kv[0])):
        if s < threshold:
            break
        ga, gb = owner[a], owner[b]
        if ga == gb:
            continue
        if all(sim(x, y) >= threshold for x in group[ga] for y in group[gb]):
            keep, drop = (ga, gb) if ga < gb else (gb, ga)
            group[keep] = sorted(group[keep] + group.pop(drop))
            for x in group[keep]:
                owner[x] = keep
    return sorted(group.values())


def _finalize(schema: TagSchema, levels: list[list[TagNode]], rounds: list[MergeRound]) -> Hierarchy:
    nodes: dict[str, TagNode] = {}
    layers: list[list[str]] = []
    for level in reversed(levels):
        layer_index = len(layers)
        layers.append(sorted(n.id for n in level))
        for n in level:
            nodes[n.id] = TagNode(n.id, layer_index, n.summary, n.children, n.leaf)
    return Hierarchy(schema, nodes, layers, list(rounds))


def build_hierarchy(
    leaves: Sequence[tuple[str, TagSummary]],
    provider: ChatProvider,
    embedder: Any,
    schema: TagSchema = TagSchema(),
    max_layers: int = 12,
    floor: float = 0.5,
    percent: int = 80,
) -> Hierarchy:
    """Cluster meta-graph tag summaries into at most ``max_layers`` layers.

    ``leaves`` pairs each meta-graph id with its tag summary.
    """
    if not leaves:
        raise HierarchyError("cannot build a hierarchy without leaves")
    if max_layers < 1:
        raise ValueError("max_layers must be at least 1")
    level0 = [
        TagNode(_node_id(0, i), 0, summary, (gid,), leaf=True)
        for i, (gid, summary) in enumerate(sorted(leaves, key=lambda x: x[0]))
    ]
    levels: list[list[TagNode]] = [level0]
    rounds: list[MergeRound] = []

    while len(levels) < max_layers and len(levels[-1]) > 1:
        current = {n.id: n for n in levels[-1]}
        ids = sorted(current)
        sims = {
            (a, b): pair_similarity(current[a].summary, current[b].summary)
            for i, a in enumerate(ids)
            for b in ids[i + 1 :]
        }
        threshold = max(nearest_rank(list(sims.values()), percent), floor)
        groups = _greedy_merge(ids, sims, threshold)
        if len(groups) == len(ids):
            break
        index = len(rounds) + 1
        level = len(levels)
        try:
            new_nodes = []
            for seq, members in enumerate(groups):
                if len(members) == 1:
                    summary = current[members[0]].summary
                else:
                    summary = _merge_summaries([current[m].summary for m in members], provider, embedder, schema)
                new_nodes.append(TagNode(_node_id(level, seq), 0, summary, tuple(members)))
        except Exception as exc:
            partial = _finalize(schema, levels, rounds)
            raise HierarchyBuildError(f"merge round {index} aborted: {exc}", partial, index) from exc
        rounds.append(
            MergeRound(
                index,
                threshold,
                tuple((a, b, s) for (a, b), s in sorted(sims.items())),
                tuple(tuple(g) for g in groups if len(g) > 1),
            )
        )
        levels.append(new_nodes)
    return _finalize(schema, levels, rounds)


def _merge_summaries(
    summaries: list[TagSummary], provider: ChatProvider, embedder: Any, schema: TagSchema
) -> TagSummary:
    blocks = "\n\n".join(f"SUMMARY {i}:\n{s.render()}" for i, s in enumerate(summaries, 1))
    tags = parse_tags(provider.chat("mtag", {"categories": schema.render(), "summaries": blocks}), schema)
    if not tags:
        raise HierarchyError("merged tag summary has no recognizable categories")
    return make_summary(tags, embedder)


def explain_round(hierarchy: Hierarchy, index: int) -> dict[str, Any]:
    """Similarity matrix, threshold and merges of merge round ``index`` (1-based)."""
    try:
        rnd = hierarchy.rounds[index - 1]
    except IndexError:
        raise IndexError(f"no merge round {index}; hierarchy has {len(hierarchy.rounds)}") from None
    ids = sorted({x for a, b, _ in rnd.similarities for x in (a, b)})
    pos = {n: i for i, n in enumerate(ids)}
    matrix: list[list[float | None]] = [[None] * len(ids) for _ in ids]
    for a, b, s in rnd.similarities:
        matrix[pos[a]][pos[b]] = matrix[pos[b]][pos[a]] = s
    return {"round": rnd.index, "threshold": rnd.threshold, "nodes": ids, "matrix": matrix, "merges": rnd.merges}

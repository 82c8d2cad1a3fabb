"""Brute-force reference implementations.

Nothing here calls engine algorithms: inputs are read as plain data
(vectors, edge lists, id maps) and every result is recomputed with
straightforward Python loops.  No engine module is imported.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

Vector = Sequence[float]


@dataclass(frozen=True)
class OracleReport:
    check: str
    engine: Any
    oracle: Any
    tolerance: float | None = None
    passed: bool = False

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        tol = "exact" if self.tolerance is None else f"tol={self.tolerance:g}"
        return f"{verdict} {self.check} ({tol})"


def report(check: str, engine: Any, oracle: Any, tolerance: float | None = None) -> OracleReport:
    """``passed`` is exact equality, or ``|engine - oracle| <= tolerance``."""
    if tolerance is None:
        ok = engine == oracle
    else:
        ok = _close(engine, oracle, tolerance)
    return OracleReport(check, engine, oracle, tolerance, ok)


def _close(a: Any, b: Any, tol: float) -> bool:
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b) <= tol
    return a == b


# -- vectors ------------------------------------------------------------------


def dot(a: Vector, b: Vector) -> float:
    return math.fsum(x * y for x, y in zip(a, b))


def norm(a: Vector) -> float:
    return math.sqrt(math.fsum(x * x for x in a))


def cosine(a: Vector, b: Vector) -> float:
    return dot(a, b) / (norm(a) * norm(b))


def oracle_knn(vectors: Mapping[str, Vector], query: Vector, k: int) -> list[tuple[str, float]]:
    """Linear scan, sorted by cosine descending then id ascending."""
    if k <= 0:
        return []
    scored = [(cosine(v, query), i) for i, v in vectors.items()]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(i, s) for s, i in scored[:k]]


def oracle_link(
    sources: Mapping[str, Vector],
    targets: Mapping[str, Vector],
    threshold: float,
    max_links: int = 1,
) -> list[tuple[str, str, float]]:
    """All-pairs cosine filter, then the best ``max_links`` per source."""
    out = []
    for s in sorted(sources):
        passing = []
        for t in targets:
            c = cosine(sources[s], targets[t])
            if c >= threshold:
                passing.append((c, t))
        passing.sort(key=lambda x: (-x[0], x[1]))
        out.extend((s, t, c) for c, t in passing[:max_links])
    return out


# -- graphs -------------------------------------------------------------------


def oracle_all_pairs(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> dict[tuple[str, str], int]:
    """Floyd-Warshall over the undirected view; unreachable pairs omitted."""
    ids = sorted(set(nodes))
    inf = math.inf
    d = {(a, b): (0 if a == b else inf) for a in ids for b in ids}
    for a, b in edges:
        if a != b:
            d[(a, b)] = d[(b, a)] = 1
    for m in ids:
        for a in ids:
            dam = d[(a, m)]
            if dam == inf:
                continue
            for b in ids:
                if dam + d[(m, b)] < d[(a, b)]:
                    d[(a, b)] = dam + d[(m, b)]
    return {k: int(v) for k, v in d.items() if v != inf}


def _edges_of(store: Any) -> list[tuple[str, str]]:
    return [(r.source, r.target) for r in store.relations.values()]


def oracle_bfs(nodes: Iterable[str], edges: Iterable[tuple[str, str]], center: str) -> dict[str, int]:
    """Level-by-level expansion from ``center`` on the undirected view."""
    nodes = set(nodes)
    if center not in nodes:
        raise KeyError(center)
    edge_list = list(edges)
    dist = {center: 0}
    frontier = {center}
    level = 0
    while frontier:
        level += 1
        nxt = set()
        for a, b in edge_list:
            if a in frontier and b not in dist:
                nxt.add(b)
            if b in frontier and a not in dist:
                nxt.add(a)
        for n in nxt:
            dist[n] = level
        frontier = nxt
    return dist


def oracle_triple_neighbors(store: Any, center: str, k: int) -> set[str]:
    """Entities of tier t within ``k + t - 1`` hops of ``center``."""
    dist = oracle_bfs(store.entities.keys(), _edges_of(store), center)
    return {e for e, d in dist.items() if d <= k + int(store.entities[e].tier) - 1}


# -- tag clustering -----------------------------------------------------------


def oracle_pair_similarity(a: Sequence[Vector], b: Sequence[Vector]) -> float:
    """Mean of all cross-pair cosines, clamped to [0, 1]; 0 if either is empty."""
    if not a or not b:
        return 0.0
    total = math.fsum(cosine(x, y) for x in a for y in b)
    return min(1.0, max(0.0, total / (len(a) * len(b))))


def oracle_percentile(values: Sequence[float], percent: int) -> float:
    """Nearest rank: the smallest value with at least ``percent``% of values at or below it."""
    ordered = sorted(values)
    n = len(ordered)
    for rank in range(1, n + 1):
        if rank * 100 >= percent * n:
            return ordered[rank - 1]
    return ordered[-1]


def oracle_merge_round(
    matrix: Sequence[Sequence[float]],
    ids: Sequence[str],
    floor: float = 0.5,
    percent: int = 80,
) -> tuple[float | None, list[list[str]]]:
    """One merge round from a symmetric similarity matrix.

    Returns the round threshold and the groups of size > 1, each sorted,
    listed in ascending order.  A single node has no pairs and so no
    threshold.
    """
    n = len(ids)
    if n == 0:
        raise ValueError("empty similarity matrix")
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            a, b = sorted((ids[i], ids[j]))
            pairs.append((matrix[i][j], a, b))
    if not pairs:
        return None, []
    delta = max(oracle_percentile([p[0] for p in pairs], percent), floor)
    index = {x: i for i, x in enumerate(ids)}
    groups: list[list[str]] = [[x] for x in ids]
    for s, a, b in sorted(pairs, key=lambda p: (-p[0], p[1], p[2])):
        if s < delta:
            break
        ga = next(g for g in groups if a in g)
        gb = next(g for g in groups if b in g)
        if ga is gb:
            continue
        linked = True
        for x in ga:
            for y in gb:
                if matrix[index[x]][index[y]] < delta:
                    linked = False
        if linked:
            groups.remove(ga)
            groups.remove(gb)
            groups.append(sorted(ga + gb))
    return delta, sorted(g for g in groups if len(g) > 1)


def oracle_descent(
    query: Sequence[Vector],
    roots: Sequence[str],
    children: Mapping[str, Sequence[str]],
    embeddings: Mapping[str, Sequence[Vector]],
) -> list[tuple[str, float]]:
    """Exhaustive argmax at every level, ties to the smaller id."""
    path = []
    options = list(roots)
    while options:
        scored = {o: oracle_pair_similarity(query, embeddings[o]) for o in options}
        best = max(scored.values())
        chosen = min(o for o, s in scored.items() if s == best)
        path.append((chosen, best))
        options = list(children.get(chosen, ()))
    return path


# -- retrieval ----------------------------------------------------------------


def oracle_retrieval(
    store: Any, members: Iterable[str], query: Vector, top_n: int, hops: int
) -> tuple[list[str], set[str], set[str]]:
    """Top-N members by cosine, their triple neighborhoods, and the relation
    ids induced on the union."""
    members = set(members)
    vectors = {e: store.entities[e].embedding for e in members}
    retrieved = [e for e, _ in oracle_knn(vectors, query, top_n)]
    expanded = set(retrieved)
    for e in retrieved:
        expanded |= oracle_triple_neighbors(store, e, hops)
    rels = {r.id for r in store.relations.values() if r.source in expanded and r.target in expanded}
    return retrieved, expanded, rels


def oracle_drop_order(retrieved: Sequence[tuple[str, float]], n_dropped: int) -> list[str]:
    """Lowest cosine first; among equal cosines the larger id goes first."""
    order = sorted(retrieved, key=lambda t: (t[1], [-ord(c) for c in t[0]]))
    return [e for e, _ in order[:n_dropped]]


# -- ids, embeddings, tokens, scripts ------------------------------------------


def oracle_entity_id(tier: int, chunk_id: str | None, name: str, type_: str) -> str:
    payload = json.dumps([int(tier), chunk_id, name, type_], ensure_ascii=False, separators=(",", ":"))
    return "e" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


def oracle_stub_embedding(text: str, dimension: int = 64, seed: int = 0, ngram: int = 3) -> list[float]:
    """The hashed n-gram projection written out by hand."""
    vec = [0.0] * dimension
    padded = " " + text + " "
    for start in range(0, len(padded) - ngram + 1):
        gram = padded[start : start + ngram]
        digest = hashlib.blake2b((str(seed) + ":" + gram).encode("utf-8"), digest_size=8).digest()
        h = sum(byte << (8 * pos) for pos, byte in enumerate(digest))
        sign = 1.0 if (h >> 32) % 2 == 1 else -1.0
        weight = 1.0 + ((h >> 40) % 65536) / 65536.0
        vec[h % dimension] += sign * weight
    if all(x == 0.0 for x in vec):
        vec[0] = 1.0
    n = norm(vec)
    return [x / n for x in vec]


def oracle_word_count(text: str) -> int:
    return len(text.split())


def oracle_bytes4(text: str) -> int:
    n = len(text.encode("utf-8"))
    return n // 4 + (1 if n % 4 else 0)


def oracle_script_response(script: Mapping[str, Any], kind: str, slots: Mapping[str, str]) -> str | None:
    """First entry (as plain dicts) whose kind and slot substrings match."""
    for entry in script.get("entries", []):
        if entry["kind"] not in ("*", kind) or "fingerprint" in entry:
            continue
        if all(needle in slots.get(slot, "") for slot, needle in (entry.get("match") or {}).items()):
            return entry["response"]
    return None


def oracle_fixture_value(manifest: Mapping[str, Any], key: str) -> Any:
    """Expected values recorded by the fixture generator, with provenance."""
    entry = manifest["expected"][key]
    return entry["value"] if isinstance(entry, Mapping) and "value" in entry else entry


def oracle_partition(n_paragraphs: int, groups: Sequence[Sequence[int]]) -> bool:
    """True when the groups are contiguous, ascending and cover 0..n-1 once."""
    flat = [i for g in groups for i in g]
    if flat != list(range(n_paragraphs)):
        return False
    return all(list(g) == list(range(g[0], g[0] + len(g))) for g in groups if g)


ORACLES = {
    "knn": oracle_knn,
    "link": oracle_link,
    "all_pairs": oracle_all_pairs,
    "bfs": oracle_bfs,
    "triple_neighbors": oracle_triple_neighbors,
    "pair_similarity": oracle_pair_similarity,
    "percentile": oracle_percentile,
    "merge_round": oracle_merge_round,
    "descent": oracle_descent,
    "retrieval": oracle_retrieval,
    "drop_order": oracle_drop_order,
    "entity_id": oracle_entity_id,
    "stub_embedding": oracle_stub_embedding,
    "word_count": oracle_word_count,
    "script_response": oracle_script_response,
    "partition": oracle_partition,
    "fixture_manifest": oracle_fixture_value,
}

# Each derived example names the oracle that checks it and the test that runs it.
DERIVED_CHECKS: dict[str, tuple[str, str]] = {
    "providers.chat.mtag_replay": ("script_response", "tests/test_providers.py::test_mtag_replay_matches_script"),
    "providers.embed.stub_formula": ("stub_embedding", "tests/test_providers.py::test_stub_embedding_matches_hand_formula"),
    "providers.count_tokens.word_split": ("word_count", "tests/test_providers.py::test_whitespace_count_matches_word_split"),
    "store.upsert.top5_scan": ("knn", "tests/test_store.py::test_index_top5_matches_scan"),
    "store.knn.random64": ("knn", "tests/test_store.py::test_knn_random_matches_oracle_with_ties"),
    "store.hop_distance.floyd_warshall": ("all_pairs", "tests/test_store.py::test_hop_distance_matches_floyd_warshall"),
    "store.snapshot.two_builds": ("fixture_manifest", "tests/test_pipeline.py::test_two_ingests_same_hash"),
    "chunker.split.hand_split": ("fixture_manifest", "tests/test_chunker.py::test_split_matches_hand_split_fixture"),
    "chunker.chunk.flip_at_4": ("script_response", "tests/test_chunker.py::test_judge_flip_at_paragraph_four"),
    "chunker.force_split.sentences": ("fixture_manifest", "tests/test_chunker.py::test_force_split_points_match_fixture"),
    "constructor.extract.hash_ids": ("entity_id", "tests/test_constructor.py::test_extracted_ids_match_hash_oracle"),
    "constructor.link.all_pairs": ("link", "tests/test_constructor.py::test_link_matches_all_pairs_oracle"),
    "constructor.triple.bfs": ("triple_neighbors", "tests/test_constructor.py::test_triple_neighbors_match_bfs_oracle"),
    "constructor.relations.ghost": ("script_response", "tests/test_constructor.py::test_ghost_entity_edge_rejected"),
    "taghier.summarize.replay": ("script_response", "tests/test_taghier.py::test_summary_replays_script"),
    "taghier.pair_similarity.3x3": ("pair_similarity", "tests/test_taghier.py::test_pair_similarity_three_by_three"),
    "taghier.build.planted": ("merge_round", "tests/test_taghier.py::test_planted_rounds_match_oracle"),
    "taghier.layer_tags.mid": ("merge_round", "tests/test_taghier.py::test_mid_layer_count_matches_oracle"),
    "uretrieval.query_tags.replay": ("script_response", "tests/test_retrieval.py::test_query_tags_replay"),
    "uretrieval.descend.planted": ("descent", "tests/test_retrieval.py::test_descent_matches_exhaustive_oracle"),
    "uretrieval.assemble.30": ("retrieval", "tests/test_retrieval.py::test_assembly_matches_composed_oracle"),
    "uretrieval.answer.drop_order": ("drop_order", "tests/test_retrieval.py::test_budget_drops_follow_oracle_order"),
    "uretrieval.refine.markers": ("script_response", "tests/test_retrieval.py::test_refinement_markers_in_path_order"),
    "testkit.knn.200": ("knn", "tests/test_store.py::test_knn_200_vectors"),
    "testkit.triple.25": ("triple_neighbors", "tests/test_constructor.py::test_triple_neighbors_match_bfs_oracle"),
    "testkit.merge.8leaf": ("merge_round", "tests/test_taghier.py::test_planted_rounds_match_oracle"),
    "cli.ingest.manifest_counts": ("fixture_manifest", "tests/test_pipeline.py::test_ingest_counts_match_manifest"),
    "cli.build.layer_counts": ("merge_round", "tests/test_pipeline.py::test_hierarchy_layers_match_oracle"),
    "cli.query.scripted_response": ("script_response", "tests/test_cli.py::test_query_prints_scripted_response"),
    "cli.health.known_hash": ("fixture_manifest", "tests/test_service.py::test_health_reports_ingest_hash"),
}

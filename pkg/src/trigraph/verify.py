"""Oracle checks over a loaded snapshot (the ``verify`` verb)."""

from __future__ import annotations

from typing import Any

from .config import PipelineConfig, defaults_manifest
from .constructor import triple_neighbors
from .snapshot import Snapshot
from .store import CROSS_TIER, RelationKind, Tier
from .taghier import Hierarchy
from .testkit.oracles import (
    OracleReport,
    cosine,
    oracle_knn,
    oracle_link,
    oracle_merge_round,
    oracle_pair_similarity,
    oracle_triple_neighbors,
    report,
)

TOL = 1e-9


def check_defaults(cfg: PipelineConfig | None = None) -> OracleReport:
    engine = (cfg or PipelineConfig()).defaults_view()
    return report("defaults match the bundled manifest", engine, defaults_manifest())


def check_edge_tiers(snap: Snapshot) -> OracleReport:
    store = snap.store
    bad = []
    for r in store.relations.values():
        a, b = store.entities[r.source].tier, store.entities[r.target].tier
        if r.kind in CROSS_TIER:
            ok = (a, b) == CROSS_TIER[r.kind]
        elif r.kind == RelationKind.GENERATED:
            ok = a == b and a != Tier.VOCAB
        else:
            ok = a == b == Tier.VOCAB
        if not ok:
            bad.append(r.id)
    return report("edge-tier discipline", bad, [])


def check_threshold(snap: Snapshot, threshold: float) -> OracleReport:
    store = snap.store
    worst = 1.0
    for r in store.relations.values():
        if r.kind in CROSS_TIER:
            c = cosine(store.entities[r.source].embedding, store.entities[r.target].embedding)
            worst = min(worst, c - threshold)
    return OracleReport("cross-tier cosines reach the threshold", worst, 0.0, TOL, worst >= -TOL)


def check_links(snap: Snapshot, threshold: float, max_links: int) -> list[OracleReport]:
    store = snap.store
    out = []
    for kind, (src_tier, dst_tier) in CROSS_TIER.items():
        sources = {e: store.entities[e].embedding for e in store.tier_ids(src_tier)}
        targets = {e: store.entities[e].embedding for e in store.tier_ids(dst_tier)}
        expected = sorted((s, t) for s, t, _ in oracle_link(sources, targets, threshold, max_links))
        stored = sorted((r.source, r.target) for r in store.relations.values() if r.kind == kind)
        out.append(report(f"{kind.value} links equal the all-pairs oracle", stored, expected))
    return out


def check_knn(snap: Snapshot, samples: int = 20, k: int = 10) -> OracleReport:
    store = snap.store
    vectors = {e: store.entities[e].embedding for e in store.entities}
    mismatches = []
    for qid in sorted(vectors)[:samples]:
        engine = store.knn(vectors[qid], k)
        oracle = oracle_knn(vectors, vectors[qid], k)
        same_ids = [e for e, _ in engine] == [e for e, _ in oracle]
        close = all(abs(a[1] - b[1]) <= TOL for a, b in zip(engine, oracle))
        if not (same_ids and close):
            mismatches.append(qid)
    return report("knn equals the linear scan", mismatches, [])


def check_neighbors(snap: Snapshot, centers: int = 10, max_k: int = 3) -> OracleReport:
    store = snap.store
    bad = []
    for c in sorted(store.entities)[:centers]:
        for k in range(max_k + 1):
            if triple_neighbors(store, c, k) != oracle_triple_neighbors(store, c, k):
                bad.append((c, k))
    return report("triple neighborhoods equal the BFS oracle", bad, [])


def check_locality(snap: Snapshot) -> OracleReport:
    store = snap.store
    bad = [
        r.id
        for r in store.relations.values()
        if r.kind == RelationKind.GENERATED and store.entities[r.source].chunk_id != store.entities[r.target].chunk_id
    ]
    return report("generated edges stay inside one chunk", bad, [])


def check_forest(h: Hierarchy, store: Any, max_layers: int) -> OracleReport:
    problems = []
    if h.num_layers > max_layers:
        problems.append(f"{h.num_layers} layers exceed {max_layers}")
    for i in range(h.num_layers - 1):
        below = sorted(c for n in h.layers[i] for c in h.nodes[n].children)
        if below != sorted(h.layers[i + 1]):
            problems.append(f"layer {i} children do not partition layer {i + 1}")
    for n in h.layers[-1] if h.layers else []:
        node = h.nodes[n]
        if not node.leaf or len(node.children) != 1 or node.children[0] not in store.metagraphs:
            problems.append(f"leaf {n} does not reference one meta-graph")
    return report("tag forest integrity", problems, [])


def _round_layer(h: Hierarchy, index: int) -> list[str]:
    return sorted(h.layers[h.num_layers - index])


def round_matrix(h: Hierarchy, index: int) -> tuple[list[str], list[list[float]]]:
    """Similarity matrix of a round's input nodes recomputed by the oracle."""
    ids = _round_layer(h, index)
    emb = {n: h.nodes[n].summary.embeddings for n in ids}
    return ids, [[oracle_pair_similarity(emb[a], emb[b]) for b in ids] for a in ids]


def check_rounds(h: Hierarchy, floor: float, percent: int) -> list[OracleReport]:
    out = []
    for rnd in h.rounds:
        ids, matrix = round_matrix(h, rnd.index)
        delta, merges = oracle_merge_round(matrix, ids, floor, percent)
        out.append(
            OracleReport(
                f"round {rnd.index} threshold", rnd.threshold, delta, TOL,
                delta is not None and abs(rnd.threshold - delta) <= TOL,
            )
        )
        out.append(report(f"round {rnd.index} merges", sorted(list(m) for m in rnd.merges), merges))
        pos = {n: i for i, n in enumerate(ids)}
        worst = min(
            (matrix[pos[a]][pos[b]] for g in rnd.merges for a in g for b in g if a < b),
            default=1.0,
        )
        out.append(
            OracleReport(
                f"round {rnd.index} complete linkage", worst, rnd.threshold, TOL, worst >= rnd.threshold - TOL
            )
        )
    return out


def verify_snapshot(snap: Snapshot, cfg: PipelineConfig | None = None) -> list[OracleReport]:
    cfg = cfg or PipelineConfig()
    reports = [
        check_defaults(),
        check_edge_tiers(snap),
        check_threshold(snap, cfg.linking.threshold),
        *check_links(snap, cfg.linking.threshold, cfg.linking.max_links),
        check_knn(snap),
        check_neighbors(snap),
        check_locality(snap),
    ]
    if snap.hierarchy is not None:
        h = snap.hierarchy
        reports.append(check_forest(h, snap.store, cfg.hierarchy.max_layers))
        reports.extend(check_rounds(h, cfg.hierarchy.threshold_floor, cfg.hierarchy.percentile))
    return reports

from __future__ import annotations

import logging

import numpy as np
import pytest

from trigraph.chunker import Chunk
from trigraph.constructor import (
    ExtractionError,
    LinkPolicy,
    candidate_pairs,
    extract_entities,
    generate_relations,
    link_tier,
    parse_records,
    triple_neighbors,
    triple_view,
)
from trigraph.providers import HashEmbedder, StubChatProvider, StubScript
from trigraph.store import GraphStore, Relation, RelationKind, metagraph_id
from trigraph.testkit.fixtures import (
    FIXTURE_TYPES,
    cross_tier_fixture,
    neighborhood_fixture,
    planted_entity,
    tri_graph_fixture,
)
from trigraph.testkit.oracles import cosine, oracle_entity_id, oracle_link, oracle_triple_neighbors


def _chunk(text: str = "Patient took aspirin for headache.", cid: str = "u:note#0000") -> Chunk:
    return Chunk(cid, cid.split(":")[1].split("#")[0], (0,), 9, text)


def _ent_provider(response: str) -> StubChatProvider:
    script = StubScript(fallback="error")
    script.add("ent", response)
    return StubChatProvider(script)


def _store(dim: int = 32) -> GraphStore:
    return GraphStore(dim, list(FIXTURE_TYPES))


def test_extract_single_entity():
    store = _store()
    p = _ent_provider("Aspirin | Pharmacologic Substance | taken for headache")
    res = extract_entities(_chunk(), p, store, HashEmbedder(32))
    assert res.entities == [("Aspirin", "Pharmacologic Substance", "taken for headache")]
    (e,) = store.entities.values()
    assert e.tier == 1 and e.chunk_id == "u:note#0000"


def test_extract_empty_is_valid():
    store = _store()
    for response in ("NONE", "", "  \n"):
        res = extract_entities(_chunk(), _ent_provider(response), store, HashEmbedder(32))
        assert res.entities == [] and res.ids == []
    assert not store.entities


def test_extracted_ids_match_hash_oracle():
    store = _store()
    raw = "\n".join(
        [
            "- Aspirin | Pharmacologic Substance | analgesic taken by the patient",
            "- Headache | Sign or Symptom | reason for the visit",
            "- Migraine | Disease or Syndrome | suspected cause",
            "- Running | Daily or Recreational Activity | triggers the pain",
        ]
    )
    chunk = _chunk("fixture chunk")
    res = extract_entities(chunk, _ent_provider(raw), store, HashEmbedder(32))
    expected = {oracle_entity_id(1, chunk.id, n, t) for n, t, _ in res.entities}
    assert len(res.entities) == 4
    assert set(store.entities) == set(res.ids) == expected


def test_extraction_is_idempotent():
    store = _store()
    raw = "Aspirin | Pharmacologic Substance | x"
    extract_entities(_chunk(), _ent_provider(raw), store, HashEmbedder(32))
    extract_entities(_chunk(), _ent_provider(raw), store, HashEmbedder(32))
    assert len(store.entities) == 1


def test_off_vocabulary_type_is_dropped(caplog):
    store = _store()
    raw = "Aspirin | Pharmacologic Substance | x\nBRCA1 | Gene | y"
    with caplog.at_level(logging.WARNING, logger="trigraph"):
        res = extract_entities(_chunk(), _ent_provider(raw), store, HashEmbedder(32))
    assert [n for n, _, _ in res.entities] == ["Aspirin"]
    assert "BRCA1" in caplog.text


def test_unparseable_extraction_keeps_raw():
    with pytest.raises(ExtractionError) as info:
        extract_entities(_chunk(), _ent_provider("just prose with no fields"), _store(), HashEmbedder(32))
    assert info.value.raw == "just prose with no fields"


def test_parse_records_variants():
    assert parse_records("(A, treats, B)", 3, "|", ends=True) == [("A", "treats", "B")]
    assert parse_records("A | may | treat | B", 3, "|", ends=True) == [("A", "may | treat", "B")]
    assert parse_records("A | T | ctx | more", 3, "|") == [("A", "T", "ctx | more")]
    assert parse_records("1. A | T | c\n# note\nNONE", 3, "|") == [("A", "T", "c")]


# -- linking -----------------------------------------------------------------


def test_link_self_match_has_cosine_one():
    store = _store()
    emb = HashEmbedder(32)
    from trigraph.store import Entity

    u = store.upsert_entity(Entity.create("COPD", "Disease or Syndrome", "lung", 1, "u:a#0000", emb))
    lit = store.upsert_entity(Entity.create("COPD", "Disease or Syndrome", "lung", 2, "l:a#0000", emb))
    (r,) = link_tier(store, 1, 2)
    assert (r.source, r.target, r.kind) == (u, lit, RelationKind.REFERENCE_OF)
    assert abs(r.similarity - 1.0) <= 1e-12


def test_threshold_excludes_orthogonal():
    store = _store(4)
    for i in range(2):
        v = np.zeros(4)
        v[i] = 1.0
        store.upsert_entity(planted_entity(f"s{i}", "Finding", 1, "u:a#0000", v))
        w = np.zeros(4)
        w[i + 2] = 1.0
        store.upsert_entity(planted_entity(f"t{i}", "Finding", 2, "l:a#0000", w))
    assert link_tier(store, 1, 2, LinkPolicy(threshold=0.999)) == []


def test_threshold_above_one_rejected():
    with pytest.raises(ValueError):
        LinkPolicy(threshold=1.0 + 1e-9)
    with pytest.raises(ValueError):
        LinkPolicy(threshold=0.0)


def test_link_kind_must_match_tiers():
    store = _store()
    with pytest.raises(ValueError):
        link_tier(store, 1, 3)
    with pytest.raises(ValueError):
        link_tier(store, 1, 2, kind=RelationKind.DEFINITION_OF)


def test_empty_target_tier_warns(caplog):
    store = _store(4)
    store.upsert_entity(planted_entity("s", "Finding", 1, "u:a#0000", np.ones(4)))
    with caplog.at_level(logging.WARNING, logger="trigraph"):
        assert link_tier(store, 1, 2) == []
    assert "empty" in caplog.text


def test_link_matches_all_pairs_oracle():
    fx = cross_tier_fixture(0)
    vecs = {e: fx.store.entities[e].embedding for e in fx.store.entities}
    made = link_tier(fx.store, 1, 2, LinkPolicy(fx.threshold))
    oracle = oracle_link({s: vecs[s] for s in fx.sources}, {t: vecs[t] for t in fx.targets}, fx.threshold)
    assert [(r.source, r.target) for r in made] == [(s, t) for s, t, _ in oracle]
    assert np.allclose([r.similarity for r in made], [c for _, _, c in oracle], atol=1e-12)
    tied = [r for r in made if r.target in fx.tie]
    assert tied and all(r.target == min(fx.tie) for r in tied)


def test_link_max_links_two_matches_oracle():
    fx = cross_tier_fixture(1)
    vecs = {e: fx.store.entities[e].embedding for e in fx.store.entities}
    made = link_tier(fx.store, 1, 2, LinkPolicy(fx.threshold, 2), dry_run=True)
    oracle = oracle_link({s: vecs[s] for s in fx.sources}, {t: vecs[t] for t in fx.targets}, fx.threshold, 2)
    assert [(r.source, r.target) for r in made] == [(s, t) for s, t, _ in oracle]


def test_dry_run_commits_nothing():
    fx = cross_tier_fixture(2)
    made = link_tier(fx.store, 1, 2, dry_run=True)
    assert made and not fx.store.relations


def test_threshold_soundness_recomputed():
    fx = cross_tier_fixture(3)
    link_tier(fx.store, 1, 2)
    for r in fx.store.relations.values():
        c = cosine(fx.store.entities[r.source].embedding, fx.store.entities[r.target].embedding)
        assert c >= fx.threshold - 1e-9 and abs(c - r.similarity) <= 1e-9


# -- triple neighbourhoods ------------------------------------------------------------


def test_isolated_center_k0():
    store = _store(4)
    c = store.upsert_entity(planted_entity("c", "Finding", 1, "u:a#0000", np.ones(4)))
    assert triple_neighbors(store, c, 0) == {c}


def test_reference_is_in_k0_neighborhood():
    store = _store(4)
    c = store.upsert_entity(planted_entity("c", "Finding", 1, "u:a#0000", np.ones(4)))
    r = store.upsert_entity(planted_entity("r", "Finding", 2, "l:a#0000", np.ones(4)))
    d = store.upsert_entity(planted_entity("d", "Finding", 3, None, np.ones(4)))
    store.add_relation(Relation.create(c, r, RelationKind.REFERENCE_OF, similarity=1.0))
    assert triple_neighbors(store, c, 0) == {c, r}
    store.add_relation(Relation.create(r, d, RelationKind.DEFINITION_OF, similarity=1.0))
    assert triple_neighbors(store, c, 0) == {c, r, d}


def test_triple_neighbors_match_bfs_oracle():
    store = neighborhood_fixture(0)
    assert len(store.entities) == 25
    for center in sorted(store.entities):
        assert triple_neighbors(store, center, 2) == oracle_triple_neighbors(store, center, 2)


def test_triple_neighbors_monotone_in_k():
    store = neighborhood_fixture(1)
    for center in sorted(store.entities):
        prev: set[str] = set()
        for k in range(6):
            cur = triple_neighbors(store, center, k)
            assert prev <= cur and center in cur
            prev = cur


def test_triple_view_edges_exist():
    store = tri_graph_fixture(2)
    for eid in store.tier_ids(1):
        view = triple_view(store, eid)
        for ref in view.references:
            assert store.relations_from(eid, RelationKind.REFERENCE_OF)
            assert store.get(ref).tier == 2
        assert all(store.get(d).tier == 3 for d in view.definitions)


# -- relation generation ------------------------------------------------------------


def _chunk_store(names: list[str], cid: str = "u:note#0000") -> tuple[GraphStore, list[str]]:
    store = _store()
    emb = HashEmbedder(32)
    from trigraph.store import Entity

    ids = [store.upsert_entity(Entity.create(n, "Finding", f"about {n}", 1, cid, emb)) for n in names]
    return store, ids


def test_single_entity_chunk_has_no_relations():
    store, ids = _chunk_store(["A"])
    made, graph = generate_relations(store, "u:note#0000", StubChatProvider(StubScript(fallback="error")))
    assert made == []
    assert graph.entity_ids == tuple(ids) and graph.relation_ids == ()
    assert graph.id == metagraph_id("u:note#0000") in store.metagraphs


def test_scripted_tuple_makes_one_edge():
    store, (a, b) = _chunk_store(["A", "B"])
    script = StubScript(fallback="error")
    script.add("rel", "(A, treats, B)")
    made, graph = generate_relations(store, "u:note#0000", StubChatProvider(script))
    (r,) = made
    assert (r.source, r.target, r.kind, r.description) == (a, b, RelationKind.GENERATED, "treats")
    assert graph.relation_ids == (r.id,)


def test_ghost_entity_edge_rejected(caplog):
    store, ids = _chunk_store(["A", "B", "C", "D", "E"])
    script = StubScript(fallback="error")
    script.add("rel", "A | treats | B\nB | causes | C\nD | worsens | E\nA | treats | Ghost")
    with caplog.at_level(logging.WARNING, logger="trigraph"):
        made, graph = generate_relations(store, "u:note#0000", StubChatProvider(script))
    assert len(made) == 3 and len(graph.relation_ids) == 3
    assert "Ghost" in caplog.text


def test_prompt_carries_reference_content():
    store, (a, b) = _chunk_store(["A", "B"])
    emb = HashEmbedder(32)
    from trigraph.store import Entity

    ref = store.upsert_entity(Entity.create("Alpha", "Finding", "reference text", 2, "l:x#0000", emb))
    store.add_relation(Relation.create(a, ref, RelationKind.REFERENCE_OF, similarity=0.9))
    p = StubChatProvider(StubScript(fallbacks={"rel": {"fixed": "NONE"}}))
    generate_relations(store, "u:note#0000", p)
    (rec,) = p.audit.by_kind("rel")
    assert "reference: name: Alpha; type: Finding; context: reference text" in rec.slots["entities"]
    assert "(A, B)" in rec.slots["pairs"] and "(B, A)" in rec.slots["pairs"]


def test_dense_chunks_filter_pairs_by_cosine():
    store = _store(4)
    axes = np.eye(4)
    ids = [
        store.upsert_entity(planted_entity(f"n{i:02d}", "Finding", 1, "u:a#0000", axes[i % 2] + 0.01 * i))
        for i in range(13)
    ]
    pairs = candidate_pairs(store, ids)
    assert len(pairs) == 7 * 6 + 6 * 5
    for a, b in pairs:
        assert float(store.entities[a].vector @ store.entities[b].vector) >= 0.3
    assert len(candidate_pairs(store, ids[:12])) == 12 * 11


def test_generated_edges_stay_in_chunk():
    store = tri_graph_fixture(4)
    for r in store.relations.values():
        if r.kind == RelationKind.GENERATED:
            assert store.entities[r.source].chunk_id == store.entities[r.target].chunk_id

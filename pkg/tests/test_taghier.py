from __future__ import annotations

import json

import numpy as np
import pytest

from trigraph.providers import FunctionChatProvider, HashEmbedder, StubChatProvider, StubScript
from trigraph.store import Entity, GraphStore, MetaGraph
from trigraph.taghier import (
    Hierarchy,
    HierarchyBuildError,
    HierarchyError,
    TagSchema,
    TagSummary,
    build_hierarchy,
    explain_round,
    make_summary,
    nearest_rank,
    pair_similarity,
    parse_tags,
    summarize_graph,
)
from trigraph.testkit.fixtures import FIXTURE_TYPES, adversarial_star_fixture, planted_hierarchy_fixture
from trigraph.testkit.oracles import oracle_merge_round, oracle_pair_similarity, oracle_percentile


def _vecs(summary: TagSummary) -> list[list[float]]:
    return [list(v) for v in summary.embeddings]


def _graph(names: list[str]) -> tuple[GraphStore, MetaGraph]:
    store = GraphStore(32, list(FIXTURE_TYPES))
    emb = HashEmbedder(32)
    ids = tuple(
        sorted(store.upsert_entity(Entity.create(n, "Finding", f"about {n}", 1, "u:g#0000", emb)) for n in names)
    )
    return store, MetaGraph("m", "u:g#0000", ids, ())


def test_default_schema_categories():
    assert TagSchema().names[:4] == ["Symptoms", "Patient History", "Body Functions", "Medication"]


def test_schema_names_unique():
    with pytest.raises(ValueError):
        TagSchema.from_pairs([("A", "x"), ("a", "y")])


def test_summary_partial_fill():
    store, g = _graph(["cough"])
    p = StubChatProvider(StubScript(fallbacks={"tag": {"fixed": "Symptoms: dry cough"}}))
    s = summarize_graph(g, store, TagSchema(), p, HashEmbedder(32))
    assert s.tags == (("Symptoms", "dry cough"),) and len(s.embeddings) == 1


def test_empty_graph_makes_no_call():
    store, _ = _graph([])
    p = StubChatProvider(StubScript(fallback="error"))
    s = summarize_graph(MetaGraph("m", "u:g#0000", (), ()), store, TagSchema(), p, HashEmbedder(32))
    assert s.is_empty and len(p.audit) == 0


def test_summary_replays_script():
    store, g = _graph(["cough", "salbutamol", "asthma"])
    response = (
        "Symptoms: nocturnal cough\n"
        "Patient History: childhood asthma\n"
        "Body Functions: reduced airflow\n"
        "Medication: salbutamol inhaler"
    )
    script = StubScript(fallback="error")
    script.add("tag", response, content="salbutamol")
    s = summarize_graph(g, store, TagSchema(), StubChatProvider(script), HashEmbedder(32))
    assert s.render() == response
    assert s.render().encode() == response.encode()


def test_off_schema_category_dropped():
    tags = parse_tags("Symptoms: a\nGenetics: b\nmedication: c\nnot a tag line", TagSchema())
    assert tags == [("Symptoms", "a"), ("Medication", "c")]


def test_identical_single_tag_similarity_is_one():
    s = make_summary([("Symptoms", "fever")], HashEmbedder(32))
    assert abs(pair_similarity(s, s) - 1.0) <= 1e-12


def test_orthogonal_summaries_clamp_to_zero():
    pins = {"Symptoms: a": [1.0, 0.0, 0.0], "Symptoms: b": [-1.0, 0.0, 0.0], "Symptoms: c": [0.0, 1.0, 0.0]}
    emb = HashEmbedder(3, pins=pins)
    a, b, c = (make_summary([("Symptoms", x)], emb) for x in "abc")
    assert pair_similarity(a, c) == 0.0
    assert pair_similarity(a, b) == 0.0


def test_pair_similarity_three_by_three():
    emb = HashEmbedder(32, seed=3)
    a = make_summary([("Symptoms", "fever"), ("Medication", "aspirin"), ("Patient History", "smoker")], emb)
    b = make_summary([("Symptoms", "fever and chills"), ("Medication", "aspirin"), ("Body Functions", "renal")], emb)
    cosines = [float(np.dot(x, y)) for x in a.matrix for y in b.matrix]
    assert len(cosines) == 9
    hand = min(1.0, max(0.0, sum(cosines) / 9))
    assert abs(pair_similarity(a, b) - hand) <= 1e-12
    assert abs(pair_similarity(a, b) - oracle_pair_similarity(_vecs(a), _vecs(b))) <= 1e-12


def test_pair_similarity_symmetric():
    emb = HashEmbedder(16)
    a = make_summary([("Symptoms", "x"), ("Medication", "y")], emb)
    b = make_summary([("Symptoms", "z"), ("Medication", "w"), ("Patient History", "v")], emb)
    assert pair_similarity(a, b) == pair_similarity(b, a)


def test_empty_summary_similarity_is_zero():
    s = make_summary([("Symptoms", "x")], HashEmbedder(16))
    assert pair_similarity(TagSummary(), s) == 0.0


def test_nearest_rank_matches_oracle():
    rng = np.random.default_rng(0)
    for n in range(1, 40):
        vals = rng.random(n).tolist()
        for pct in (1, 20, 50, 80, 99, 100):
            assert nearest_rank(vals, pct) == oracle_percentile(vals, pct)


def test_single_leaf_is_one_layer():
    s = make_summary([("Symptoms", "x")], HashEmbedder(16))
    h = build_hierarchy([("g1", s)], StubChatProvider(StubScript(fallback="error")), HashEmbedder(16))
    assert h.num_layers == 1 and h.rounds == []
    assert h.layer_tags(0)[0][1] == s
    assert h.leaf_for("g1") == h.layers[0][0]


def test_two_identical_leaves_merge_to_one_root():
    emb = HashEmbedder(16)
    s = make_summary([("Symptoms", "x")], emb)
    p = StubChatProvider(StubScript(fallbacks={"mtag": {"fixed": "Symptoms: x"}}))
    h = build_hierarchy([("g1", s), ("g2", s)], p, emb)
    assert h.num_layers == 2 and len(h.layers[0]) == 1
    (root,) = h.layers[0]
    assert h.children(root) == sorted(h.layers[1])
    assert abs(h.rounds[0].threshold - 1.0) <= 1e-12


def _oracle_rounds(h: Hierarchy, floor: float = 0.5, percent: int = 80):
    out = []
    for r in h.rounds:
        layer = sorted(h.layers[h.num_layers - r.index])
        vecs = [_vecs(h.nodes[n].summary) for n in layer]
        matrix = [[oracle_pair_similarity(a, b) for b in vecs] for a in vecs]
        out.append(oracle_merge_round(matrix, layer, floor, percent))
    return out


def test_planted_rounds_match_oracle(planted_hierarchy):
    h = planted_hierarchy
    oracle = _oracle_rounds(h)
    assert len(h.rounds) == len(oracle) == 2
    for r, (delta, groups) in zip(h.rounds, oracle):
        assert abs(r.threshold - delta) <= 1e-9
        assert [list(g) for g in r.merges] == groups
    fx = planted_hierarchy_fixture()
    assert [len(r.merges) for r in h.rounds] == fx.expected["round_merges"]
    assert np.allclose([r.threshold for r in h.rounds], fx.expected["thresholds"], atol=1e-9)
    leaf_of = {h.nodes[n].children[0]: n for n in h.layers[-1]}
    pairs = sorted(sorted(h.nodes[m].children[0] for m in g) for g in h.rounds[0].merges)
    assert pairs == [[f"g-leaf-{2 * p}", f"g-leaf-{2 * p + 1}"] for p in range(4)]
    assert len(leaf_of) == 8


def test_mid_layer_count_matches_oracle(planted_hierarchy):
    h = planted_hierarchy
    (_, round1), _ = _oracle_rounds(h)
    unmerged = 8 - sum(len(g) for g in round1)
    assert len(h.layer_tags(1)) == len(round1) + unmerged == 4
    assert [len(layer) for layer in h.layers] == planted_hierarchy_fixture().expected["layer_sizes"]


def test_layer_tags_are_sorted_and_bounded(planted_hierarchy):
    h = planted_hierarchy
    for i in range(h.num_layers):
        ids = [n for n, _ in h.layer_tags(i)]
        assert ids == sorted(ids)
    assert len(h.layer_tags(h.num_layers - 1)) == 8
    with pytest.raises(IndexError):
        h.layer_tags(h.num_layers)


def test_forest_integrity(planted_hierarchy):
    h = planted_hierarchy
    for upper, lower in zip(h.layers, h.layers[1:]):
        kids = [c for n in upper for c in h.children(n)]
        assert sorted(kids) == sorted(lower)
        assert all(h.parent(c) in upper for c in lower)
    assert all(h.parent(n) is None for n in h.layers[0])


def test_complete_linkage_holds(planted_hierarchy):
    h = planted_hierarchy
    for r in h.rounds:
        for g in r.merges:
            for i, a in enumerate(g):
                for b in g[i + 1 :]:
                    s = pair_similarity(h.nodes[a].summary, h.nodes[b].summary)
                    assert s >= r.threshold - 1e-9


def test_star_respects_layer_cap():
    fx = adversarial_star_fixture()
    assert fx.expected["uncapped_rounds"] > 12
    h = build_hierarchy(fx.leaves, fx.provider, fx.embedder, max_layers=12)
    assert h.num_layers == 12
    sizes = [len(layer) for layer in reversed(h.layers)]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_provider_failure_aborts_round_atomically():
    fx = planted_hierarchy_fixture()
    calls = {"n": 0}

    def flaky(kind: str, slots: dict[str, str]) -> str:
        calls["n"] += 1
        if calls["n"] > 4:
            raise RuntimeError("provider down")
        return fx.provider.chat(kind, slots)

    with pytest.raises(HierarchyBuildError) as info:
        build_hierarchy(fx.leaves, FunctionChatProvider(flaky), fx.embedder)
    err = info.value
    assert err.round_index == 2
    assert err.partial.num_layers == 2 and len(err.partial.rounds) == 1


def test_no_leaves_is_an_error():
    with pytest.raises(HierarchyError):
        build_hierarchy([], StubChatProvider(), HashEmbedder(8))


def test_explain_round_dump(planted_hierarchy):
    dump = explain_round(planted_hierarchy, 1)
    assert dump["round"] == 1 and len(dump["nodes"]) == 8
    assert all(dump["matrix"][i][i] is None for i in range(8))
    json.dumps(dump)
    with pytest.raises(IndexError):
        explain_round(planted_hierarchy, 9)

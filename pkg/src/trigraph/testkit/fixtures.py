"""Seeded fixture generators.

Every fixture is a pure function of its seed.  Stores are assembled
directly from planted vectors so expected values are known by
construction; the end-to-end fixture is written to disk as a corpus,
vocabulary TSVs, a StubScript and a config, together with a manifest of
expected counts.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from ..chunker import Chunk, Document
from ..providers import FunctionChatProvider, HashEmbedder, StubChatProvider, StubScript, TokenCounter
from ..store import (
    Entity,
    GraphStore,
    MetaGraph,
    Relation,
    RelationKind,
    Tier,
    entity_id,
    metagraph_id,
    render_content,
)
from ..taghier import TagSchema, TagSummary, make_summary, tag_text

FIXTURE_VERSION = 1
FIXTURE_TYPES = [
    "Conceptual Entity",
    "Daily or Recreational Activity",
    "Disease or Syndrome",
    "Finding",
    "Pharmacologic Substance",
    "Sign or Symptom",
]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def planted_entity(
    name: str, type_: str, tier: int, chunk_id: str | None, vector: Any, context: str | None = None
) -> Entity:
    """An entity whose embedding is ``vector`` (normalized) instead of embed(C_e)."""
    v = _unit(np.asarray(vector, dtype=np.float64))
    ctx = context if context is not None else f"{name} as planted in a fixture"
    return Entity(entity_id(tier, chunk_id, name, type_), name, type_, ctx, Tier(tier), chunk_id, tuple(map(float, v)))


# -- cross-tier linking ---------------------------------------------------------


@dataclass
class CrossTierFixture:
    store: GraphStore
    sources: list[str]
    targets: list[str]
    tie: tuple[str, str]
    threshold: float


def cross_tier_fixture(
    seed: int = 0, n: int = 20, dimension: int = 16, threshold: float = 0.5, margin: float = 1e-6
) -> CrossTierFixture:
    """``n`` tier-1 and ``n`` tier-2 entities.

    Three of every four sources sit near a target; the rest are random.
    Target ``n - 1`` duplicates target 3's vector so a source near target 3
    meets an exact tie.  Vectors are redrawn until every cross cosine keeps
    ``margin`` away from the threshold.
    """
    rng = np.random.default_rng(seed)
    while True:
        tgt = [_unit(rng.normal(size=dimension)) for _ in range(n)]
        tgt[n - 1] = tgt[3].copy()
        src = []
        for i in range(n):
            noise = _unit(rng.normal(size=dimension))
            if i % 4 == 3:
                src.append(noise)
            else:
                src.append(_unit(0.8 * tgt[(i * 7) % n] + 0.6 * noise))
        cos = np.array(src) @ np.array(tgt).T
        if np.all(np.abs(cos - threshold) >= margin):
            break
    store = GraphStore(dimension, list(FIXTURE_TYPES))
    targets = [
        store.upsert_entity(planted_entity(f"target {i:02d}", "Finding", 2, "l:fixture#0000", v))
        for i, v in enumerate(tgt)
    ]
    sources = [
        store.upsert_entity(planted_entity(f"source {i:02d}", "Finding", 1, "u:fixture#0000", v))
        for i, v in enumerate(src)
    ]
    return CrossTierFixture(store, sources, targets, (targets[3], targets[n - 1]), threshold)


# -- three-tier random graphs ---------------------------------------------------


def tri_graph_fixture(
    seed: int = 0,
    user_chunks: tuple[int, ...] = (4, 3, 3),
    literature_chunks: tuple[int, ...] = (4, 4),
    vocab: int = 7,
    dimension: int = 16,
    edge_p: float = 0.35,
) -> GraphStore:
    """A random but tier-disciplined graph.

    Entity vectors share a strong common direction so cross-tier links
    (made only when cosine >= 0.5) are plentiful.  Every user chunk gets its
    meta-graph.
    """
    rng = np.random.default_rng(seed)
    base = _unit(rng.normal(size=dimension))

    def vec() -> np.ndarray:
        return _unit(6.0 * base + rng.normal(size=dimension))

    store = GraphStore(dimension, list(FIXTURE_TYPES))
    by_chunk: dict[str, list[str]] = {}
    for tier, sizes, prefix in ((1, user_chunks, "u:doc"), (2, literature_chunks, "l:doc")):
        for c, size in enumerate(sizes):
            cid = f"{prefix}{c}#0000"
            by_chunk[cid] = [
                store.upsert_entity(planted_entity(f"t{tier}c{c}e{i}", "Finding", tier, cid, vec()))
                for i in range(size)
            ]
    t3 = [store.upsert_entity(planted_entity(f"v{i}", "Conceptual Entity", 3, None, vec())) for i in range(vocab)]

    def maybe(p: float) -> bool:
        return bool(rng.random() < p)

    for cid, members in sorted(by_chunk.items()):
        for a in members:
            for b in members:
                if a != b and maybe(edge_p / 2):
                    store.add_relation(Relation.create(a, b, RelationKind.GENERATED, "co-occurs with"))
    t1, t2 = store.tier_ids(1), store.tier_ids(2)
    for sources, targets, kind, p in ((t1, t2, RelationKind.REFERENCE_OF, 0.6), (t2, t3, RelationKind.DEFINITION_OF, 0.7)):
        for s in sources:
            if not maybe(p):
                continue
            t = targets[int(rng.integers(len(targets)))]
            c = float(store.entities[s].vector @ store.entities[t].vector)
            if c >= 0.5:
                store.add_relation(Relation.create(s, t, kind, similarity=min(1.0, c)))
    for i, a in enumerate(t3):
        for b in t3[i + 1 :]:
            if maybe(edge_p / 2):
                store.add_relation(Relation.create(a, b, RelationKind.VOCAB, "related to"))
    for cid, members in sorted(by_chunk.items()):
        if not cid.startswith("u:"):
            continue
        member_set = set(members)
        rels = sorted(
            r.id
            for r in store.relations.values()
            if r.kind == RelationKind.GENERATED and r.source in member_set and r.target in member_set
        )
        store.add_metagraph(MetaGraph(metagraph_id(cid), cid, tuple(sorted(members)), tuple(rels)))
    return store


def neighborhood_fixture(seed: int = 0) -> GraphStore:
    """25 entities: 10 user, 8 literature, 7 vocabulary."""
    return tri_graph_fixture(seed, (4, 3, 3), (4, 4), 7)


def retrieval_fixture(seed: int = 0) -> tuple[GraphStore, str, np.ndarray]:
    """30 entities with an 8-entity target meta-graph and a query vector."""
    store = tri_graph_fixture(seed, (8, 3, 3), (5, 4), 7)
    target = metagraph_id("u:doc0#0000")
    rng = np.random.default_rng(seed + 1000)
    return store, target, _unit(rng.normal(size=store.dimension))


# -- tag hierarchy ---------------------------------------------------------------


@dataclass
class HierarchyFixture:
    leaves: list[tuple[str, TagSummary]]
    provider: StubChatProvider
    embedder: HashEmbedder
    schema: TagSchema
    expected: dict[str, Any] = field(default_factory=dict)


def _axis(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def planted_hierarchy_fixture(dimension: int = 32) -> HierarchyFixture:
    """Eight leaves in four pairs, the pairs in two super-blocks.

    Leaf similarities are 0.9 within a pair, 0.4 across pairs of one
    super-block and 0 otherwise, so round 1 merges exactly the four pairs at
    threshold 0.5.  The merged pair summaries score 0.8 within a super-block
    and 0 across, so round 2 merges two groups at 0.8 and round 3 finds
    nothing above its floor: three layers, two roots.
    """
    s2, p2, l2 = 0.4, 0.5, 0.1
    pins: dict[str, list[float]] = {}
    script = StubScript(fallback="error")
    leaves_tags = []
    for i in range(8):
        pair, sup = i // 2, i // 4
        v = math.sqrt(s2) * _axis(dimension, sup) + math.sqrt(p2) * _axis(dimension, 2 + pair) + math.sqrt(
            l2
        ) * _axis(dimension, 6 + i)
        text = f"leaf {i} findings"
        pins[tag_text("Symptoms", text)] = v.tolist()
        leaves_tags.append((f"g-leaf-{i}", [("Symptoms", text)]))
    for pair in range(4):
        sup = pair // 2
        v = math.sqrt(0.8) * _axis(dimension, 14 + sup) + math.sqrt(0.2) * _axis(dimension, 16 + pair)
        text = f"block {pair} findings"
        pins[tag_text("Symptoms", text)] = v.tolist()
        script.add("mtag", f"Symptoms: {text}", summaries=f"leaf {2 * pair} findings")
    for sup in range(2):
        text = f"super {sup} findings"
        pins[tag_text("Symptoms", text)] = _axis(dimension, 20 + sup).tolist()
        script.add("mtag", f"Symptoms: {text}", summaries=f"block {2 * sup} findings")
    script.embeddings = pins
    embedder = HashEmbedder(dimension, pins=pins)
    leaves = [(gid, make_summary(tags, embedder)) for gid, tags in leaves_tags]
    expected = {
        "round_merges": [4, 2],
        "thresholds": [0.5, 0.8],
        "layers": 3,
        "layer_sizes": [2, 4, 8],
    }
    return HierarchyFixture(leaves, StubChatProvider(script), embedder, TagSchema(), expected)


def adversarial_star_fixture(n: int = 20, dimension: int = 64) -> HierarchyFixture:
    """A star of leaves around a hub whose merges always reproduce the hub.

    Each round can merge only one spoke into the hub, so without the layer
    cap the build would need ``n - 1`` rounds.
    """
    a = 0.65
    hub = _axis(dimension, 0)
    pins = {tag_text("Symptoms", "hub"): hub.tolist()}
    leaves_tags = [("g-star-00", [("Symptoms", "hub")])]
    for i in range(1, n):
        v = a * hub + math.sqrt(1 - a * a) * _axis(dimension, i)
        pins[tag_text("Symptoms", f"spoke {i}")] = v.tolist()
        leaves_tags.append((f"g-star-{i:02d}", [("Symptoms", f"spoke {i}")]))
    script = StubScript(fallbacks={"mtag": {"fixed": "Symptoms: hub"}}, fallback="error", embeddings=pins)
    embedder = HashEmbedder(dimension, pins=pins)
    leaves = [(gid, make_summary(tags, embedder)) for gid, tags in leaves_tags]
    return HierarchyFixture(leaves, StubChatProvider(script), embedder, TagSchema(), {"uncapped_rounds": n - 1})


# -- chunking ---------------------------------------------------------------------

_WORDS = (
    "patient reports fever cough fatigue pain swelling dose tablet daily chronic acute onset "
    "history exam vitals pressure glucose renal hepatic cardiac pulmonary imaging follow-up"
).split()
_TOPIC = re.compile(r"^\[topic (\d+)\]")


def synthetic_corpus(seed: int = 0, n_docs: int = 50) -> list[Document]:
    """Documents whose paragraphs carry a ``[topic k]`` marker.

    Topics persist for a few paragraphs, and some paragraphs are long
    enough that the token budget rather than the judge ends a chunk.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        topic = 0
        paras = []
        for _ in range(int(rng.integers(1, 13))):
            if rng.random() < 0.35:
                topic += 1
            n_words = int(rng.integers(5, 60))
            words = " ".join(_WORDS[int(rng.integers(len(_WORDS)))] for _ in range(n_words))
            paras.append(f"[topic {topic}] {words}.")
        docs.append(Document(f"doc{d:03d}", "\n\n".join(paras), tuple(paras)))
    return docs


def topic_judge(counter: TokenCounter | None = None) -> FunctionChatProvider:
    """Affirms a paragraph whose topic marker matches the chunk's last paragraph."""

    def decide(kind: str, slots: dict[str, str]) -> str:
        last = slots["chunk"].split("\n\n")[-1]
        a, b = _TOPIC.match(last), _TOPIC.match(slots["paragraph"])
        return "True" if a and b and a.group(1) == b.group(1) else "False"

    return FunctionChatProvider(decide, counter=counter)


def constant_judge(verdict: bool, counter: TokenCounter | None = None) -> FunctionChatProvider:
    return FunctionChatProvider(lambda kind, slots: str(verdict), counter=counter)


def flip_judge(flip_at: int, paragraphs: list[str], counter: TokenCounter | None = None) -> StubChatProvider:
    """Scripted judge: False exactly for paragraph ``flip_at`` (0-based), True otherwise."""
    script = StubScript(fallbacks={"sem": {"fixed": "True"}})
    script.add("sem", "False", paragraph=paragraphs[flip_at])
    return StubChatProvider(script, counter=counter)


# -- end-to-end ---------------------------------------------------------------------

_CONCEPTS = [
    ("C0001", "COPD", "Chronic obstructive pulmonary disease, a progressive limitation of airflow.", "Disease or Syndrome"),
    ("C0002", "Heart failure", "Inability of the heart to pump enough blood for the body's needs.", "Disease or Syndrome"),
    ("C0003", "Bisoprolol", "A cardioselective beta-1 adrenergic blocking agent.", "Pharmacologic Substance"),
    ("C0004", "Metoprolol", "A beta-1 selective adrenergic blocker used for hypertension and angina.", "Pharmacologic Substance"),
    ("C0005", "Bronchodilator", "An agent that widens the airways of the lungs.", "Pharmacologic Substance"),
    ("C0006", "Dyspnea", "Difficult or labored breathing.", "Sign or Symptom"),
    ("C0007", "Hypertension", "Persistently raised arterial blood pressure.", "Disease or Syndrome"),
    ("C0008", "Metformin", "A biguanide that lowers hepatic glucose production.", "Pharmacologic Substance"),
]
_VOCAB_EDGES = [
    ("C0003", "may treat", "C0002"),
    ("C0004", "may treat", "C0007"),
    ("C0005", "may treat", "C0001"),
    ("C0006", "manifestation of", "C0001"),
]

_LITERATURE = {
    "id": "beta-blocker-review",
    "paragraphs": [
        "Cardioselective beta-blockers such as bisoprolol are well tolerated in chronic obstructive pulmonary disease.",
        "Metoprolol succinate reduces mortality in chronic heart failure, while inhaled bronchodilators relieve exertional dyspnea.",
    ],
}
# (name, type, context, concept axis or None)
_LIT_ENTITIES = [
    ("chronic obstructive pulmonary disease", "Disease or Syndrome", "Lung disease in which beta-blockers are tolerated.", 0),
    ("chronic heart failure", "Disease or Syndrome", "Condition where metoprolol lowers mortality.", 1),
    ("bisoprolol", "Pharmacologic Substance", "Cardioselective beta-blocker tolerated in lung disease.", 2),
    ("metoprolol", "Pharmacologic Substance", "Beta-blocker with mortality benefit in heart failure.", 3),
    ("inhaled bronchodilators", "Pharmacologic Substance", "Inhaled agents relieving breathlessness.", 4),
    ("exertional dyspnea", "Sign or Symptom", "Breathlessness brought on by effort.", 5),
]
_LIT_RELATIONS = [
    ("bisoprolol", "is well tolerated in", "chronic obstructive pulmonary disease"),
    ("metoprolol", "reduces mortality in", "chronic heart failure"),
    ("inhaled bronchodilators", "relieve", "exertional dyspnea"),
]

_PATIENTS = {
    "patient-a": [
        "Patient A has COPD with frequent exacerbations and shortness of breath on exertion. She uses an albuterol inhaler.",
        "Cardiology found a reduced ejection fraction consistent with heart failure. Bisoprolol was started at a low dose.",
    ],
    "patient-b": [
        "Patient B shows elevated blood pressure at every visit. Metoprolol was prescribed.",
        "He also has type 2 diabetes managed with metformin.",
    ],
}
# chunk key -> (needle in chunk text, entities, relations, tag lines, needle in tag content)
_USER_CHUNKS = {
    "u:patient-a#0000": (
        "albuterol inhaler",
        [
            ("COPD exacerbation", "Disease or Syndrome", "Acute worsening of the patient's COPD.", 0),
            ("shortness of breath", "Sign or Symptom", "Breathlessness on exertion reported by the patient.", 5),
            ("albuterol inhaler", "Pharmacologic Substance", "Rescue inhaler used by the patient.", 4),
        ],
        [
            ("albuterol inhaler", "relieves", "shortness of breath"),
            ("COPD exacerbation", "causes", "shortness of breath"),
        ],
        ["Symptoms: breathlessness on exertion", "Medication: albuterol inhaler"],
    ),
    "u:patient-a#0001": (
        "ejection fraction",
        [
            ("heart failure", "Disease or Syndrome", "Reduced ejection fraction found by cardiology.", 1),
            ("bisoprolol", "Pharmacologic Substance", "Beta-blocker started at a low dose.", 2),
        ],
        [("bisoprolol", "treats", "heart failure")],
        ["Body Functions: reduced ejection fraction", "Medication: bisoprolol"],
    ),
    "u:patient-b#0000": (
        "elevated blood pressure",
        [
            ("elevated blood pressure", "Finding", "Raised readings at every visit.", 6),
            ("metoprolol", "Pharmacologic Substance", "Prescribed for the raised readings.", 3),
        ],
        [("metoprolol", "lowers", "elevated blood pressure")],
        ["Symptoms: elevated blood pressure", "Medication: metoprolol"],
    ),
    "u:patient-b#0001": (
        "metformin",
        [("metformin", "Pharmacologic Substance", "Oral agent managing the patient's diabetes.", 7)],
        [],
        ["Patient History: type 2 diabetes", "Medication: metformin"],
    ),
}
_GROUPS = {
    "patient-a": (
        "u:patient-a#0000",
        ["Body Functions: cardiopulmonary compromise", "Medication: bisoprolol and inhaled therapy"],
    ),
    "patient-b": (
        "u:patient-b#0000",
        ["Patient History: cardiometabolic risk", "Medication: metoprolol and metformin"],
    ),
}
QUESTION = "Which beta-blocker is appropriate for a patient with heart failure and COPD?"
_QUERY_TAG = "Medication: beta-blocker for heart failure with COPD"
ANSWER = "Bisoprolol, a cardioselective beta-blocker, is appropriate for heart failure with COPD."
REFINED = "Bisoprolol is appropriate: cardioselective beta-blockers are tolerated in COPD and treat heart failure."


def _tag_axes(dim: int) -> dict[str, np.ndarray]:
    """Leaf tag vectors: the two patient-a chunks share one direction, the
    two patient-b chunks another, each with a private component."""
    P, Q = _axis(dim, 20), _axis(dim, 21)
    return {
        "u:patient-a#0000": 3 * P + _axis(dim, 22),
        "u:patient-a#0001": 3 * P + _axis(dim, 23),
        "u:patient-b#0000": 3 * Q + _axis(dim, 24),
        "u:patient-b#0001": 3 * Q + _axis(dim, 25),
        "patient-a": P,
        "patient-b": Q,
        "query": P + 2 * _axis(dim, 23),
    }


def _record_line(fields: tuple[str, ...]) -> str:
    return " | ".join(fields)


def e2e_script(seed: int = 0, dimension: int = 32) -> StubScript:
    """The full StubScript for the end-to-end fixture, embedding pins included."""
    rng = np.random.default_rng(seed)

    def concept_vec(axis: int) -> list[float]:
        return _unit(_axis(dimension, axis) + 0.05 * rng.normal(size=dimension)).tolist()

    pins: dict[str, list[float]] = {}
    script = StubScript(fallback="error", fallbacks={"sem": {"fixed": "False"}})

    for i, (_, name, definition, type_) in enumerate(_CONCEPTS):
        pins[render_content(name, type_, definition)] = concept_vec(i)
    script.add("sem", "True", paragraph=_LITERATURE["paragraphs"][1][:40])
    script.add(
        "ent",
        "\n".join(_record_line(e[:3]) for e in _LIT_ENTITIES),
        chunk="Cardioselective beta-blockers such as bisoprolol",
    )
    for name, type_, ctx, axis in _LIT_ENTITIES:
        pins[render_content(name, type_, ctx)] = concept_vec(axis)
    script.add(
        "rel", "\n".join(_record_line(r) for r in _LIT_RELATIONS), entities="- inhaled bronchodilators:"
    )
    tags = _tag_axes(dimension)
    for cid, (needle, ents, rels, tag_lines) in _USER_CHUNKS.items():
        script.add("ent", "\n".join(_record_line(e[:3]) for e in ents), chunk=needle)
        for name, type_, ctx, axis in ents:
            pins[render_content(name, type_, ctx)] = concept_vec(axis)
        if rels:
            script.add("rel", "\n".join(_record_line(r) for r in rels), entities=f"- {ents[0][0]}:")
        script.add("tag", "\n".join(tag_lines), content=f"name: {ents[0][0]};")
        for line in tag_lines:
            pins[line] = _unit(tags[cid]).tolist()
    for group, (first_leaf, lines) in _GROUPS.items():
        needle = _USER_CHUNKS[first_leaf][3][1].split(": ", 1)[1]
        script.add("mtag", "\n".join(lines), summaries=needle)
        for line in lines:
            pins[line] = _unit(tags[group]).tolist()
    script.add("querytag", _QUERY_TAG, question="beta-blocker")
    pins[_QUERY_TAG] = _unit(tags["query"]).tolist()
    script.add("answer", ANSWER, Q="beta-blocker")
    script.add("refine", REFINED, RESPONSE=ANSWER)
    script.embeddings = pins
    return script


def e2e_expected() -> dict[str, Any]:
    def note(value: Any, why: str) -> dict[str, Any]:
        return {"value": value, "note": why}

    return {
        "chunks": note(5, "patient-a and patient-b split at their second paragraph; the review stays whole"),
        "entities": note(
            {"tier1": 8, "tier2": 6, "tier3": 8},
            "scripted extraction lists; eight vocabulary concepts",
        ),
        "relations": note(
            {"REFERENCE_OF": 6, "DEFINITION_OF": 6, "GENERATED": 7, "VOCAB": 4},
            "six user entities share an axis with a literature entity; every literature entity shares one "
            "with a concept; 4 user and 3 literature scripted edges; four vocabulary rows",
        ),
        "metagraphs": note(4, "one per user chunk"),
        "layers": note(2, "pairs within each patient merge at 0.9; the two groups are orthogonal"),
        "target_chunk": note("u:patient-a#0001", "query tag leans toward the cardiac chunk's private axis"),
        "final_response": note(REFINED, "one refinement step, at the patient-a group node"),
    }


def write_fixture(out: str | Path, seed: int = 0, dimension: int = 32) -> dict[str, Any]:
    """Write the end-to-end fixture under ``out`` and return its manifest."""
    out = Path(out)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    for doc_id, paras in _PATIENTS.items():
        (out / "corpus" / f"{doc_id}.txt").write_text("\n\n".join(paras) + "\n", encoding="utf-8")
    (out / "literature.jsonl").write_text(
        json.dumps({"id": _LITERATURE["id"], "text": "\n\n".join(_LITERATURE["paragraphs"])}) + "\n",
        encoding="utf-8",
    )
    (out / "vocab_concepts.tsv").write_text(
        "".join("\t".join(row) + "\n" for row in _CONCEPTS), encoding="utf-8"
    )
    (out / "vocab_relations.tsv").write_text(
        "".join("\t".join(row) + "\n" for row in _VOCAB_EDGES), encoding="utf-8"
    )
    (out / "semantic_types.txt").write_text("\n".join(FIXTURE_TYPES) + "\n", encoding="utf-8")
    e2e_script(seed, dimension).dump(out / "stub_script.yaml")
    config = {
        "schema_version": 1,
        "providers": {"chat": "stub", "embedding": "stub", "dimension": dimension, "seed": seed,
                      "stub_script": "stub_script.yaml"},
        "paths": {
            "corpus": "corpus",
            "literature": "literature.jsonl",
            "vocab_concepts": "vocab_concepts.tsv",
            "vocab_relations": "vocab_relations.tsv",
            "semantic_types": "semantic_types.txt",
            "snapshot": "graph.snapshot",
        },
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    manifest = {"fixture": "e2e", "version": FIXTURE_VERSION, "seed": seed, "question": QUESTION,
                "expected": e2e_expected()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def chunk_groups(chunks: list[Chunk]) -> list[list[int]]:
    return [list(c.paragraphs) for c in chunks]


JudgeFactory = Callable[[TokenCounter | None], FunctionChatProvider]

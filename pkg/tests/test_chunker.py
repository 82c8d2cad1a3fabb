from __future__ import annotations

import itertools
import json

import pytest

from trigraph.chunker import (
    ChunkingError,
    Document,
    WindowState,
    chunk_document,
    force_split_oversized,
    load_corpus,
    parse_verdict,
    split_paragraphs,
    write_manifest,
)
from trigraph.providers import StubChatProvider, StubScript, TokenCounter
from trigraph.testkit.fixtures import chunk_groups, constant_judge, flip_judge, synthetic_corpus, topic_judge
from trigraph.testkit.oracles import oracle_partition

from conftest import DATA


def _doc(paras: list[str], doc_id: str = "d") -> Document:
    return Document(doc_id, "\n\n".join(paras), tuple(paras))


def test_split_two_paragraphs():
    assert split_paragraphs("a\n\nb") == ["a", "b"]


def test_split_whitespace_only():
    assert split_paragraphs("\n\n\n") == []
    assert split_paragraphs("") == []


def test_split_matches_hand_split_fixture():
    text = (DATA / "twenty_paragraphs.txt").read_text(encoding="utf-8")
    expected = json.loads((DATA / "twenty_paragraphs.expected.json").read_text())
    assert split_paragraphs(text) == expected
    assert len(expected) == 20


def test_window_state_is_fifo():
    w = WindowState(3)
    for p in "abcde":
        w.push(p)
    assert w.items() == ["c", "d", "e"] and len(w) == 3
    with pytest.raises(ValueError):
        WindowState(0)


def test_always_true_gives_one_chunk():
    paras = [f"paragraph {i} text" for i in range(7)]
    chunks = chunk_document(_doc(paras), constant_judge(True), TokenCounter(), budget=10_000)
    assert chunk_groups(chunks) == [list(range(7))]


def test_always_false_gives_one_chunk_per_paragraph():
    paras = [f"paragraph {i} text" for i in range(7)]
    chunks = chunk_document(_doc(paras), constant_judge(False), TokenCounter(), budget=10_000)
    assert chunk_groups(chunks) == [[i] for i in range(7)]


def test_judge_flip_at_paragraph_four():
    paras = [f"paragraph number {i} about topic {'A' if i < 3 else 'B'}" for i in range(6)]
    judge = flip_judge(3, paras)
    chunks = chunk_document(_doc(paras), judge, TokenCounter(), budget=10_000)
    assert chunk_groups(chunks) == [[0, 1, 2], [3, 4, 5]]
    assert [r.response for r in judge.audit.by_kind("sem")] == ["True", "True", "False", "True", "True"]


def test_budget_closes_chunk_without_asking_judge():
    paras = ["x" * 40, "y" * 40, "z" * 40]
    judge = constant_judge(True)
    chunks = chunk_document(_doc(paras), judge, TokenCounter(), budget=20)
    assert chunk_groups(chunks) == [[0, 1], [2]]
    assert len(judge.audit) == 1
    assert all(c.token_count <= 20 for c in chunks)


def test_chunk_ids_and_manifest(tmp_path):
    chunks = chunk_document(_doc(["a", "b"], "doc"), constant_judge(False), TokenCounter(), id_prefix="u:")
    assert [c.id for c in chunks] == ["u:doc#0000", "u:doc#0001"]
    path = tmp_path / "m.jsonl"
    write_manifest(chunks, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[1] == {"document_id": "doc", "chunk_id": "u:doc#0001", "paragraph_span": [1, 1], "token_count": 1}


def test_window_never_exceeds_w():
    corpus = synthetic_corpus(1, 10)
    for w in (1, 2, 5):
        judge = constant_judge(True)
        for doc in corpus:
            chunk_document(doc, judge, TokenCounter(), window=w)
        for rec in judge.audit.by_kind("sem"):
            shown = [p for p in rec.slots["window"].split("\n\n") if p] + [rec.slots["paragraph"]]
            assert len(shown) <= w


def test_unparseable_verdict_names_paragraph():
    script = StubScript(fallbacks={"sem": {"fixed": "maybe"}})
    with pytest.raises(ChunkingError, match="paragraph 1"):
        chunk_document(_doc(["a", "b"], "doc"), StubChatProvider(script), TokenCounter())


@pytest.mark.parametrize(
    "text,verdict",
    [("True", True), ("false", False), ("  TRUE.", True), ('"False" because', False), ("**true**", True)],
)
def test_verdict_normalization(text, verdict):
    assert parse_verdict(text) is verdict


@pytest.mark.parametrize("text", ["", "yes", "it is true", "truely"])
def test_verdict_rejects_guesses(text):
    with pytest.raises(ValueError):
        parse_verdict(text)


def test_oversized_paragraph_is_rejected_by_fold():
    with pytest.raises(ChunkingError):
        chunk_document(_doc(["x" * 200]), constant_judge(True), TokenCounter(), budget=10)


def test_force_split_bound():
    counter = TokenCounter("bytes4", 50)
    para = " ".join(f"Sentence {i} has a few words in it." for i in range(20))
    para = para[: 4 * 100]
    pieces = force_split_oversized(para, counter)
    assert 2 <= len(pieces) <= 3
    assert all(counter.count(p) <= 50 for p in pieces)


def test_force_split_is_lossless():
    counter = TokenCounter("bytes4", 7)
    para = "No sentence breaks here just a long run of words that keeps going and going"
    pieces = force_split_oversized(para, counter)
    assert "".join(pieces) == para
    assert all(counter.count(p) <= 7 for p in pieces)


def test_force_split_points_match_fixture():
    fx = json.loads((DATA / "sentence_split.json").read_text())
    counter = TokenCounter(fx["scheme"], fx["budget"])
    pieces = force_split_oversized(fx["paragraph"], counter)
    points = list(itertools.accumulate(len(p) for p in pieces))[:-1]
    assert pieces == fx["pieces"]
    assert points == fx["split_points"]


def test_document_from_text_breaks_oversized():
    fx = json.loads((DATA / "sentence_split.json").read_text())
    counter = TokenCounter(fx["scheme"], fx["budget"])
    doc = Document.from_text("d", "intro\n\n" + fx["paragraph"], counter)
    assert doc.paragraphs[0] == "intro" and len(doc.paragraphs) == 6
    assert all(counter.count(p) <= fx["budget"] for p in doc.paragraphs)


def test_synthetic_corpus_partitions_and_respects_budget():
    counter = TokenCounter("bytes4", 120)
    for doc in synthetic_corpus(0, 50):
        chunks = chunk_document(doc, topic_judge(), counter)
        assert oracle_partition(len(doc.paragraphs), chunk_groups(chunks))
        assert all(c.token_count <= 120 for c in chunks)
        assert all(c.token_count == sum(counter.count(doc.paragraphs[i]) for i in c.paragraphs) for c in chunks)


def test_chunking_is_deterministic():
    doc = synthetic_corpus(2, 1)[0]
    a = chunk_document(doc, topic_judge(), TokenCounter("bytes4", 400))
    b = chunk_document(doc, topic_judge(), TokenCounter("bytes4", 400))
    assert a == b


def test_long_chunk_is_truncated_from_front_for_judge():
    counter = TokenCounter("bytes4", 100)
    paras = ["a" * 100, "b" * 100]
    judge = constant_judge(True, counter=counter)
    chunk_document(_doc(paras), judge, counter, budget=200)
    (rec,) = judge.audit.by_kind("sem")
    assert rec.slots["paragraph"] == "b" * 100
    assert rec.error is None
    for name in ("chunk", "window"):
        assert ("a" * 100).endswith(rec.slots[name])
    assert len(rec.slots["chunk"]) + len(rec.slots["window"]) < 200


def test_load_corpus_formats(tmp_path):
    (tmp_path / "docs").mkdir()
    (tmp_path / "docs" / "b.txt").write_text("one\n\ntwo")
    (tmp_path / "docs" / "a.txt").write_text("x")
    (tmp_path / "c.jsonl").write_text('{"id": "k", "text": "p\\n\\nq"}\n\n')
    assert [d.id for d in load_corpus(tmp_path / "docs")] == ["a", "b"]
    (doc,) = load_corpus(tmp_path / "c.jsonl")
    assert doc.id == "k" and doc.paragraphs == ("p", "q")

from __future__ import annotations

import json

import pytest

from trigraph.snapshot import Snapshot, SnapshotError, dumps, load_snapshot, loads, save_snapshot
from trigraph.taghier import TagSchema
from trigraph.testkit.fixtures import neighborhood_fixture


def test_save_load_save_is_byte_stable(tmp_path):
    snap = Snapshot(neighborhood_fixture(3), TagSchema())
    path = tmp_path / "g.snapshot"
    h1 = save_snapshot(snap, path)
    first = path.read_bytes()
    again = load_snapshot(path)
    h2 = save_snapshot(again, path)
    assert h1 == h2 and path.read_bytes() == first


def test_round_trip_is_field_equal(e2e):
    back = loads(dumps(e2e.snap))
    assert back.store.entities == e2e.snap.store.entities
    assert back.store.relations == e2e.snap.store.relations
    assert back.store.metagraphs == e2e.snap.store.metagraphs
    assert back.store.chunks == e2e.snap.store.chunks
    assert back.hierarchy.nodes == e2e.snap.hierarchy.nodes
    assert back.hierarchy.layers == e2e.snap.hierarchy.layers
    assert back.hierarchy.rounds == e2e.snap.hierarchy.rounds
    assert back.schema == e2e.snap.schema


def test_hash_ignores_insertion_order():
    a = neighborhood_fixture(4)
    b = neighborhood_fixture(4)
    b.entities = dict(reversed(list(b.entities.items())))
    b.relations = dict(reversed(list(b.relations.items())))
    assert Snapshot(a, TagSchema()).content_hash == Snapshot(b, TagSchema()).content_hash


def test_tampered_byte_fails_hash(tmp_path):
    path = tmp_path / "g.snapshot"
    save_snapshot(Snapshot(neighborhood_fixture(5), TagSchema()), path)
    raw = bytearray(path.read_bytes())
    i = raw.index(b'"name":"t1c0e0"') + 8
    raw[i] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(SnapshotError, match="hash"):
        load_snapshot(path)


def test_version_mismatch(tmp_path):
    text = dumps(Snapshot(neighborhood_fixture(0), TagSchema()))
    header, rest = text.split("\n", 1)
    h = json.loads(header)
    h["version"] = 99
    with pytest.raises(SnapshotError, match="version"):
        loads(json.dumps(h) + "\n" + rest)


def test_missing_and_garbage_files(tmp_path):
    with pytest.raises(SnapshotError):
        load_snapshot(tmp_path / "nope")
    (tmp_path / "bad").write_text("not json\n")
    with pytest.raises(SnapshotError):
        load_snapshot(tmp_path / "bad")
    with pytest.raises(SnapshotError):
        loads("")


def test_consistent_hash_but_broken_invariant_is_rejected():
    text = dumps(Snapshot(neighborhood_fixture(0), TagSchema()))
    header, *lines = text.rstrip("\n").split("\n")
    recs = [json.loads(line) for line in lines]
    for r in recs:
        if r["type"] == "relation" and r["kind"] == "GENERATED":
            r["kind"] = "DEFINITION_OF"
            r["similarity"] = 1.0
            break
    import hashlib

    body = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in recs]
    h = json.loads(header)
    h["content_hash"] = hashlib.sha256("\n".join(body).encode()).hexdigest()
    with pytest.raises(SnapshotError):
        loads("\n".join([json.dumps(h), *body]) + "\n")

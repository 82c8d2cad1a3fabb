from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from trigraph import pipeline
from trigraph.providers import FunctionChatProvider, TransportFailure
from trigraph.service import create_app
from trigraph.testkit.fixtures import QUESTION


@pytest.fixture(scope="module")
def client(e2e) -> TestClient:
    return TestClient(create_app(e2e.cfg))


def test_health_reports_ingest_hash(e2e, client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["snapshot_hash"] == e2e.snap.content_hash
    assert body["layers"] == e2e.snap.hierarchy.num_layers


def test_health_hash_matches_file_on_disk(e2e, client):
    from trigraph.snapshot import load_snapshot

    assert client.get("/health").json()["snapshot_hash"] == load_snapshot(e2e.cfg.paths.snapshot).content_hash


def test_query_matches_cli_payload(e2e, client):
    chat, emb = pipeline.build_providers(e2e.cfg)
    expected = pipeline.query_result(pipeline.query(e2e.snap, QUESTION, e2e.cfg, chat, emb))
    resp = client.post("/query", json={"question": QUESTION})
    assert resp.status_code == 200
    assert resp.json() == expected


def test_concurrent_identical_queries(client):
    def ask(_: int) -> bytes:
        r = client.post("/query", json={"question": QUESTION})
        assert r.status_code == 200
        return r.content

    with ThreadPoolExecutor(8) as pool:
        bodies = list(pool.map(ask, range(16)))
    assert len(set(bodies)) == 1


@pytest.mark.parametrize(
    "payload",
    [{}, {"question": ""}, {"question": 3}, {"question": "q", "extra": 1}, ["q"]],
)
def test_malformed_requests_get_4xx(client, payload):
    r = client.post("/query", json=payload)
    assert 400 <= r.status_code < 500


def test_blank_question_is_structured_422(client):
    r = client.post("/query", json={"question": "   "})
    assert r.status_code == 422 and r.json()["stage"] == "input"


def test_provider_failure_is_502_with_stage(e2e):
    def broken(kind, slots):
        raise TransportFailure("upstream down")

    app = create_app(e2e.cfg, e2e.snap, FunctionChatProvider(broken), pipeline.build_providers(e2e.cfg)[1])
    r = TestClient(app).post("/query", json={"question": QUESTION})
    assert r.status_code == 502
    assert r.json()["stage"] == "querytag"


def test_service_never_writes_snapshot(e2e, client):
    before = e2e.cfg.paths.snapshot.stat().st_mtime_ns
    client.post("/query", json={"question": QUESTION})
    assert e2e.cfg.paths.snapshot.stat().st_mtime_ns == before

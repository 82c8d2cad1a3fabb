from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from trigraph import pipeline
from trigraph.config import PipelineConfig, load_config
from trigraph.snapshot import Snapshot
from trigraph.testkit.fixtures import planted_hierarchy_fixture, write_fixture
from trigraph.taghier import Hierarchy, build_hierarchy

DATA = Path(__file__).parent / "data"


@dataclass
class BuiltFixture:
    root: Path
    cfg: PipelineConfig
    manifest: dict
    ingest_hash: str
    snap: Snapshot


def build_e2e(root: Path, seed: int = 0) -> BuiltFixture:
    manifest = write_fixture(root, seed)
    cfg = load_config(root / "config.yaml")
    _, rep = pipeline.ingest(cfg)
    snap, _ = pipeline.build_hierarchy_job(cfg)
    return BuiltFixture(root, cfg, manifest, rep.snapshot_hash, snap)


@pytest.fixture(scope="session")
def e2e(tmp_path_factory) -> BuiltFixture:
    return build_e2e(tmp_path_factory.mktemp("e2e"))


@pytest.fixture
def planted():
    return planted_hierarchy_fixture()


@pytest.fixture
def planted_hierarchy(planted) -> Hierarchy:
    return build_hierarchy(planted.leaves, planted.provider, planted.embedder, planted.schema)


def load_json(name: str):
    return json.loads((DATA / name).read_text(encoding="utf-8"))


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

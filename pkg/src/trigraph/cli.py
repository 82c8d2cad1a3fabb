"""Command-line entry point.

Exit codes:
  0  success
  2  configuration error (bad file, unknown key, bad override)
  3  input or snapshot error (missing file, corrupted snapshot, bad corpus)
  4  provider or pipeline-stage failure
  5  verification failure
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .chunker import ChunkingError
from .config import ConfigError, PipelineConfig, load_config
from .constructor import ExtractionError
from .providers import ProviderError
from .retrieval import QueryError
from .snapshot import SnapshotError, load_snapshot
from .store import StoreError
from .taghier import HierarchyError, explain_round

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_PROVIDER, EXIT_VERIFY = 0, 2, 3, 4, 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trigraph", description="Three-tier knowledge graph retrieval.")
    p.add_argument("--config", type=Path, help="pipeline config file (YAML)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    ingest = sub.add_parser("ingest", help="build tiers 3, 2 and 1 and write the snapshot")
    ingest.add_argument("--dry-run", action="store_true", help="print would-be edges; write nothing")
    sub.add_parser("build-hierarchy", help="summarize meta-graphs and build the tag hierarchy")
    q = sub.add_parser("query", help="answer one question")
    q.add_argument("question")
    q.add_argument("--emit-trace", type=Path, metavar="PATH", help="write the full retrieval trace")
    q.add_argument("--json", action="store_true", help="print the response payload as JSON")
    s = sub.add_parser("serve", help="run the read-only query service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    f = sub.add_parser("fixtures-gen", help="write the seeded end-to-end fixture")
    f.add_argument("out", type=Path)
    f.add_argument("--seed", type=int, default=0)
    v = sub.add_parser("verify", help="run the oracle suite against the snapshot")
    v.add_argument("--explain-round", type=int, metavar="N", help="dump merge round N and exit")
    return p


def _print_json(data: object) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))


def _dispatch(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from . import pipeline

    if args.verb == "ingest":
        if args.dry_run:
            return _dry_run(cfg)
        _, rep = pipeline.ingest(cfg)
        _print_json(rep.to_dict())
        return EXIT_OK
    if args.verb == "build-hierarchy":
        _, rep = pipeline.build_hierarchy_job(cfg)
        _print_json(rep.to_dict())
        return EXIT_OK
    if args.verb == "query":
        snap = load_snapshot(cfg.paths.snapshot)
        chat, embedder = pipeline.build_providers(cfg)
        trace = pipeline.query(snap, args.question, cfg, chat, embedder)
        if args.emit_trace:
            trace.write(args.emit_trace)
        if args.json:
            _print_json(pipeline.query_result(trace))
        else:
            print(trace.final_response)
            for c in trace.citations:
                chain = f"{c.entity_name} -> {c.reference_name}"
                if c.definition_name:
                    chain += f" -> {c.definition_name}"
                print(f"  [{chain}]")
        return EXIT_OK
    if args.verb == "serve":
        from .service import serve

        load_snapshot(cfg.paths.snapshot)
        serve(cfg, args.host, args.port)
        return EXIT_OK
    if args.verb == "verify":
        return _verify(cfg, args.explain_round)
    raise AssertionError(args.verb)


def _dry_run(cfg: PipelineConfig) -> int:
    from . import pipeline
    from .store import CROSS_TIER

    snap, _ = pipeline.ingest(cfg, save=False)
    for r in sorted(snap.store.relations.values(), key=lambda r: (r.kind.value, r.source, r.target)):
        if r.kind in CROSS_TIER:
            print(json.dumps({"kind": r.kind.value, "source": r.source, "target": r.target,
                              "similarity": r.similarity}, sort_keys=True))
    return EXIT_OK


def _verify(cfg: PipelineConfig, explain: int | None) -> int:
    from .verify import verify_snapshot

    snap = load_snapshot(cfg.paths.snapshot)
    if explain is not None:
        if snap.hierarchy is None:
            raise SnapshotError("snapshot has no tag hierarchy")
        _print_json(explain_round(snap.hierarchy, explain))
        return EXIT_OK
    reports = verify_snapshot(snap, cfg)
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "fixtures-gen":
        from .testkit.fixtures import write_fixture

        manifest = write_fixture(args.out, args.seed)
        print(f"wrote fixture to {args.out} (seed {manifest['seed']})")
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .pipeline import JobError

    try:
        return _dispatch(args, cfg)
    except (SnapshotError, FileNotFoundError, ChunkingError, StoreError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except QueryError as exc:
        print(f"query failed at {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.stage == "input" else EXIT_PROVIDER
    except JobError as exc:
        code = EXIT_INPUT if exc.stage == "load" or exc.stage == "query" else EXIT_PROVIDER
        print(f"job failed at {exc.stage}: {exc}", file=sys.stderr)
        return code
    except (ProviderError, ExtractionError, HierarchyError) as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

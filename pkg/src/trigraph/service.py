"""Read-only HTTP query service over one loaded snapshot."""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .config import PipelineConfig
from .pipeline import JobError, build_providers, query, query_result
from .retrieval import QueryError
from .snapshot import Snapshot, load_snapshot


class QueryRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    question: str = Field(min_length=1)


def create_app(cfg: PipelineConfig, snap: Snapshot | None = None, chat: Any = None, embedder: Any = None) -> FastAPI:
    """Build the app; the snapshot is loaded once and never written."""
    if snap is None:
        snap = load_snapshot(cfg.paths.snapshot)
    if chat is None or embedder is None:
        chat, embedder = build_providers(cfg)
    snapshot_hash = snap.content_hash
    layers = snap.hierarchy.num_layers if snap.hierarchy else 0
    app = FastAPI(title="trigraph", version="1")

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {"status": "ok", "snapshot_hash": snapshot_hash, "layers": layers}

    @app.post("/query")
    def run(req: QueryRequest) -> Any:
        if not req.question.strip():
            return JSONResponse({"error": "question is empty", "stage": "input"}, status_code=422)
        try:
            trace = query(snap, req.question, cfg, chat, embedder)
        except QueryError as exc:
            status = 422 if exc.stage == "input" else 502
            return JSONResponse({"error": str(exc), "stage": exc.stage}, status_code=status)
        except JobError as exc:
            return JSONResponse({"error": str(exc), "stage": exc.stage}, status_code=503)
        return query_result(trace)

    return app


def serve(cfg: PipelineConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port, log_level="info")

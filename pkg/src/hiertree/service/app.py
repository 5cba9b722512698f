"""FastAPI service exposing the pipeline: build, classify, evaluate, explain, sweep.

Errors surface as JSON bodies {"detail": {"code": <error class>, "message": ...}}
so thin clients can map them back to exit codes.
"""
from __future__ import annotations

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (
    CacheMiss,
    ConfigError,
    DegenerateClustering,
    ClassSetMismatch,
    HiertreeError,
    InvalidInput,
    InvalidSpec,
    ParseFailure,
    ProviderUnavailable,
    UnknownClass,
)
from . import handlers, schemas

_HTTP_STATUS = (
    (ConfigError, 400),
    (InvalidSpec, 400),
    (InvalidInput, 400),
    (UnknownClass, 404),
    (ProviderUnavailable, 502),  # includes Transport
    (CacheMiss, 502),
    (ParseFailure, 502),
    (DegenerateClustering, 422),
    (ClassSetMismatch, 409),
)


def _status_for(exc: HiertreeError) -> int:
    for klass, status in _HTTP_STATUS:
        if isinstance(exc, klass):
            return status
    return 500


def create_app() -> FastAPI:
    app = FastAPI(
        title="hiertree",
        version=__version__,
        description=(
            "Knowledge-tree construction and hierarchical score fusion for "
            "zero-shot image classification."
        ),
    )

    @app.exception_handler(HiertreeError)
    async def hiertree_error_handler(_: Request, exc: HiertreeError) -> JSONResponse:
        return JSONResponse(
            status_code=_status_for(exc),
            content={"detail": {"code": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return handlers.health()

    @app.post("/tree/build", response_model=schemas.BuildTreeResponse)
    def build_tree(req: schemas.BuildTreeRequest) -> schemas.BuildTreeResponse:
        return handlers.build_tree_handler(req)

    @app.post("/classify", response_model=schemas.ClassifyResponse)
    def classify(req: schemas.ClassifyRequest) -> schemas.ClassifyResponse:
        return handlers.classify_handler(req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        return handlers.evaluate_handler(req)

    @app.post("/explain", response_model=schemas.ExplainResponse)
    def explain(req: schemas.ExplainRequest) -> schemas.ExplainResponse:
        return handlers.explain_handler(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
        return handlers.sweep_handler(req)

    @app.post("/confusion-diff", response_model=schemas.ConfusionDiffResponse)
    def confusion_diff(req: schemas.ConfusionDiffRequest) -> schemas.ConfusionDiffResponse:
        return handlers.confusion_diff_handler(req)

    @app.get("/cache/stats", response_model=schemas.CacheStatsResponse)
    def cache_stats(cache_dir: str = Query(...)) -> schemas.CacheStatsResponse:
        return handlers.cache_stats_handler(cache_dir)

    @app.post("/cache/clear", response_model=schemas.CacheClearResponse)
    def cache_clear(req: schemas.CacheClearRequest) -> schemas.CacheClearResponse:
        return handlers.cache_clear_handler(req)

    return app


app = create_app()

"""HTTP service for the triage workflow.

Read-only access to runs, disagreements, and reports, plus annotation
submission. Every non-2xx response body is the same shape:
``{"status": ..., "code": ..., "message": ...}``. Run results are never
mutated through this API; only annotations are writable.

Endpoints (all JSON, UTF-8):

    GET  /api/v1/runs
    GET  /api/v1/runs/{run_id}/disagreements?class=IRI&annotated=bool
    POST /api/v1/runs/{run_id}/annotations
    GET  /api/v1/runs/{run_id}/report

The review UI's static assets are served at ``/`` when a static directory is
configured.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from .error_analysis import (
    CAUSES,
    AnnotationStore,
    InvalidCause,
    InvalidVerdict,
    UnknownRecord,
    error_report,
    extract_disagreements,
)
from .metrics import NEGATIVE, POSITIVE
from .store import RunStore, StoreError


class ApiFailure(Exception):
    """Carries the (status, code, message) triple every error body shows."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class AnnotationBody(BaseModel):
    record_id: str
    annotator_id: str
    human_verdict: str
    cause: str
    note: str | None = None


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"status": status, "code": code, "message": message}
    )


def create_app(data_dir: str | Path, static_dir: str | Path | None = None) -> FastAPI:
    store = RunStore(data_dir)
    app = FastAPI(title="kgaudit service", version="0.1.0")

    @app.exception_handler(ApiFailure)
    async def handle_api_failure(_request: Request, exc: ApiFailure) -> JSONResponse:
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(StarletteHTTPException)
    async def handle_http_exception(_request: Request, exc: StarletteHTTPException) -> JSONResponse:
        return _error_response(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error_response(422, "invalid_body", str(exc.errors()))

    def _require_run(run_id: str) -> None:
        if not store.exists(run_id):
            raise ApiFailure(404, "unknown_run", f"no run {run_id!r}")

    @app.get("/api/v1/runs")
    def list_runs() -> list[dict]:
        headers = store.list_runs()
        out = []
        for header in headers:
            item = asdict(header)
            if not header.corrupt:
                try:
                    item["disagreements"] = len(extract_disagreements(store, header.run_id))
                    annotation_store = AnnotationStore(store.run_dir(header.run_id))
                    item["annotated"] = len(
                        {a.record_id for a in annotation_store.current().values()}
                    )
                except (StoreError, ValueError, KeyError):
                    item["corrupt"] = True
            out.append(item)
        return out

    # "class" cannot be a Python parameter name, so the documented ?class=
    # query parameter is read from the request directly.
    @app.get("/api/v1/runs/{run_id}/disagreements")
    def get_disagreements(run_id: str, request: Request) -> dict:
        _require_run(run_id)
        class_filter = request.query_params.get("class") or request.query_params.get("class_iri")
        annotated_param = request.query_params.get("annotated")
        annotated_filter: bool | None = None
        if annotated_param is not None:
            if annotated_param.lower() in ("true", "1", "yes"):
                annotated_filter = True
            elif annotated_param.lower() in ("false", "0", "no"):
                annotated_filter = False
            else:
                raise ApiFailure(422, "invalid_query", "annotated must be true or false")
        records = extract_disagreements(store, run_id)
        annotation_store = AnnotationStore(store.run_dir(run_id))
        current = annotation_store.current()
        by_record: dict[str, list[dict]] = {}
        for (record_id, _annotator), annotation in sorted(current.items()):
            by_record.setdefault(record_id, []).append(annotation.to_json())
        items = []
        for record in records:
            if class_filter and record.class_iri != class_filter:
                continue
            has_annotations = bool(by_record.get(record.record_id))
            if annotated_filter is True and not has_annotations:
                continue
            if annotated_filter is False and has_annotations:
                continue
            payload = asdict(record)
            payload["annotations"] = by_record.get(record.record_id, [])
            items.append(payload)
        return {"run_id": run_id, "total": len(records), "records": items}

    @app.post("/api/v1/runs/{run_id}/annotations")
    def post_annotation(run_id: str, body: AnnotationBody) -> JSONResponse:
        _require_run(run_id)
        if body.human_verdict not in (POSITIVE, NEGATIVE):
            raise ApiFailure(422, "invalid_verdict", "human_verdict must be positive or negative")
        if body.cause not in CAUSES:
            raise ApiFailure(422, "invalid_cause", f"cause must be one of {list(CAUSES)}")
        known = {r.record_id for r in extract_disagreements(store, run_id)}
        annotation_store = AnnotationStore(store.run_dir(run_id))
        existing = (body.record_id, body.annotator_id) in annotation_store.current()
        try:
            annotation = annotation_store.record(
                record_id=body.record_id,
                annotator_id=body.annotator_id,
                human_verdict=body.human_verdict,
                cause=body.cause,
                note=body.note,
                known_record_ids=known,
            )
        except UnknownRecord as exc:
            raise ApiFailure(404, "unknown_record", str(exc)) from exc
        except InvalidCause as exc:
            raise ApiFailure(422, "invalid_cause", str(exc)) from exc
        except InvalidVerdict as exc:
            raise ApiFailure(422, "invalid_verdict", str(exc)) from exc
        return JSONResponse(status_code=200 if existing else 201, content=annotation.to_json())

    @app.get("/api/v1/runs/{run_id}/report")
    def get_report(run_id: str) -> dict:
        _require_run(run_id)
        try:
            summary = store.load_summary(run_id)
        except StoreError as exc:
            raise ApiFailure(404, "unknown_run", str(exc)) from exc
        return {
            "run_id": run_id,
            "metrics": summary,
            "error_analysis": error_report(store, run_id),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app

"""HTTP surface for the counseling service.

A thin FastAPI layer: every route parses input, calls one service method and
returns its result. Domain errors map onto status codes in a single place so
the routes stay free of try/except noise. All state lives in the service.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__
from .errors import (
    CounselError,
    NotFinalizable,
    SessionBusy,
    SessionNotActive,
    SessionNotFound,
    UnknownKb,
    UnknownSpec,
    ValidationError,
)
from .session_service import CounselingService

API_PREFIX = "/api/v1"

_STATUS_BY_ERROR: list[tuple[type[CounselError], int]] = [
    (SessionNotFound, 404),
    (UnknownSpec, 404),
    (UnknownKb, 404),
    (SessionBusy, 409),
    (SessionNotActive, 409),
    (NotFinalizable, 409),
    (ValidationError, 422),
]


class CreateSessionBody(BaseModel):
    backend_profile: str = "standard"
    spec_id: str | None = None
    kb_id: str | None = None


class MessageBody(BaseModel):
    text: str = Field(min_length=1, max_length=4000)


def create_app(
    service: CounselingService,
    *,
    api_token: str | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="ecpcounsel", version=__version__, docs_url=None, redoc_url=None)

    async def require_token(request: Request) -> None:
        if api_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {api_token}":
            raise HTTPException(status_code=401, detail="missing or invalid token")

    @app.exception_handler(CounselError)
    async def _domain_error(request: Request, exc: CounselError) -> JSONResponse:
        for error_type, status in _STATUS_BY_ERROR:
            if isinstance(exc, error_type):
                return JSONResponse(
                    status_code=status,
                    content={"error": str(exc), "kind": type(exc).__name__},
                )
        return JSONResponse(status_code=500, content={"error": str(exc)})

    guarded = [Depends(require_token)]

    @app.get(f"{API_PREFIX}/health")
    async def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "spec": service.spec.medication_id,
            "spec_version": service.spec.version,
            "version": __version__,
        }

    @app.post(f"{API_PREFIX}/sessions", status_code=201, dependencies=guarded)
    async def create_session(body: CreateSessionBody) -> dict[str, Any]:
        return service.create_session(
            spec_id=body.spec_id,
            kb_id=body.kb_id,
            backend_profile=body.backend_profile,
        )

    @app.get(f"{API_PREFIX}/sessions", dependencies=guarded)
    async def list_sessions() -> dict[str, Any]:
        return {"sessions": [v.to_dict() for v in service.list_sessions()]}

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}", dependencies=guarded)
    async def get_session(session_id: str) -> dict[str, Any]:
        return service.get_session(session_id).to_dict()

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/messages", dependencies=guarded)
    async def post_message(session_id: str, body: MessageBody) -> dict[str, Any]:
        return service.post_message(session_id, body.text)

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/transcript", dependencies=guarded)
    async def get_transcript(session_id: str) -> dict[str, Any]:
        return {"entries": service.get_transcript(session_id)}

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/finalize", dependencies=guarded)
    async def finalize(session_id: str) -> dict[str, Any]:
        return service.finalize(session_id)

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/summary", dependencies=guarded)
    async def get_summary(session_id: str) -> dict[str, Any]:
        return service.get_summary(session_id)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app

"""HTTP face of the workbench: sessions, checkpoints, live metrics, reports.

Each session owns at most one background run thread; request handlers only
read snapshots or apply checkpoint edits under the session lock, so they
stay responsive while a run is in flight. On startup every persisted
session is reloaded, and any that was killed mid-run picks its run back up
from the evaluation log.
"""

from __future__ import annotations

import dataclasses
import json
import os
import threading
import time
from pathlib import Path

from fastapi import APIRouter, FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles

from . import paramspace as P
from . import pipeline as PL
from .errors import (
    Busy,
    DeckError,
    IllegalPhase,
    InvalidEdit,
    MisfitError,
    NoCheckpoint,
    NotFinished,
    PetromatchError,
    UnknownSession,
    VersionConflict,
)
from .persist import PersistedSession, new_session_id

API_PREFIX = "/api/v1"

_HTTP_STATUS = {
    UnknownSession: 404,
    Busy: 409,
    VersionConflict: 409,
    NoCheckpoint: 409,
    NotFinished: 409,
    IllegalPhase: 422,
    InvalidEdit: 422,
    DeckError: 400,
    MisfitError: 400,
}

_SSE_POLL_S = 0.1


class ManagedSession:
    """A persisted session plus its lock and (at most one) run worker."""

    def __init__(self, session: PersistedSession):
        self.session = session
        self.lock = threading.Lock()
        self.worker: threading.Thread | None = None

    def running(self) -> bool:
        return self.worker is not None and self.worker.is_alive()

    def status(self) -> str:
        return self.session.status(running=self.running())

    def start(self, until: str | None) -> None:
        with self.lock:
            if self.running():
                raise Busy("a run is already in progress")
            self.session.check_advance(until)
            self.worker = threading.Thread(
                target=self._run, args=(until,), daemon=True,
                name=f"petromatch-run-{self.session.id}")
            self.worker.start()

    def _run(self, until: str | None) -> None:
        try:
            self.session.advance(until)
        except PetromatchError:
            pass  # advance left the state terminal and persisted


class SessionRegistry:
    def __init__(self, root: Path, autoresume: bool = True):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, ManagedSession] = {}
        self._lock = threading.Lock()
        for d in sorted(self.root.iterdir()):
            if (d / "state.json").exists():
                managed = ManagedSession(PersistedSession.load(d))
                self._sessions[managed.session.id] = managed
        if autoresume:
            for managed in self._sessions.values():
                target = managed.session.run_target
                if target and managed.session.state.phase not in \
                        PL.TERMINAL_PHASES:
                    managed.start(target)

    def create(self, deck_text: str, observations_text: str,
               config=None) -> ManagedSession:
        with self._lock:
            sid = new_session_id()
            session = PersistedSession.create(
                self.root / sid, deck_text, observations_text, config,
                session_id=sid)
            managed = ManagedSession(session)
            self._sessions[sid] = managed
            return managed

    def get(self, session_id: str) -> ManagedSession:
        managed = self._sessions.get(session_id)
        if managed is None:
            raise UnknownSession(f"no session {session_id!r}")
        return managed

    def all(self) -> list[ManagedSession]:
        return list(self._sessions.values())


def _session_brief(managed: ManagedSession) -> dict:
    s = managed.session
    return {"id": s.id, "created_at": s.created_at,
            "phase": s.state.phase, "status": managed.status()}


def _session_detail(managed: ManagedSession) -> dict:
    s = managed.session
    state = s.state
    detail = _session_brief(managed)
    detail.update({
        "seed": state.seed,
        "failure": state.failure,
        "initial_metric": state.initial_metric,
        "description": (dataclasses.asdict(state.description)
                        if state.description else None),
        "plan": dataclasses.asdict(state.plan) if state.plan else None,
        "parameters": (json.loads(P.manifest_json(state.space))["parameters"]
                       if state.space is not None else None),
        "optimizer": (dataclasses.asdict(state.optimizer_config)
                      if state.optimizer_config else None),
        "best": ({"assignment": dict(state.best[0]), "metric": state.best[1]}
                 if state.best else None),
        "n_evaluations": len(state.evaluations),
        "checkpoint_version": s.checkpoint_version,
        "messages": [{"role": m.role, "agent": m.agent, "text": m.text}
                     for m in state.messages],
    })
    return detail


def _media_type(path: Path) -> str:
    return {
        ".md": "text/markdown; charset=utf-8",
        ".csv": "text/csv; charset=utf-8",
        ".svg": "image/svg+xml",
        ".json": "application/json",
    }.get(path.suffix, "application/octet-stream")


def build_router(registry: SessionRegistry) -> APIRouter:
    router = APIRouter(prefix=API_PREFIX)

    @router.post("/sessions", status_code=201)
    def create_session(payload: dict):
        deck_text = payload.get("deck")
        obs_text = payload.get("observations")
        if not isinstance(deck_text, str) or not isinstance(obs_text, str):
            return _json_error(400, "BadRequest",
                               "body needs 'deck' and 'observations' text")
        try:
            managed = registry.create(deck_text, obs_text,
                                      payload.get("config") or {})
        except ValueError as exc:
            return _json_error(400, "BadRequest", str(exc))
        return _session_brief(managed)

    @router.get("/sessions")
    def list_sessions() -> dict:
        return {"sessions": [_session_brief(m) for m in registry.all()]}

    @router.get("/sessions/{sid}")
    def get_session(sid: str) -> dict:
        return _session_detail(registry.get(sid))

    @router.post("/sessions/{sid}/advance", status_code=202)
    def advance(sid: str, until: str | None = None) -> dict:
        managed = registry.get(sid)
        managed.start(until)
        return {"id": sid, "status": "running", "until": until or "done"}

    @router.get("/sessions/{sid}/checkpoint")
    def get_checkpoint(sid: str) -> dict:
        return registry.get(sid).session.checkpoint_view()

    @router.patch("/sessions/{sid}/checkpoint")
    def patch_checkpoint(sid: str, payload: dict) -> dict:
        managed = registry.get(sid)
        with managed.lock:
            if managed.running():
                raise Busy("a run is in progress")
            return managed.session.apply_checkpoint(payload)

    @router.get("/sessions/{sid}/metrics")
    def metrics(sid: str, request: Request, since: int = 0):
        managed = registry.get(sid)
        if "text/event-stream" in request.headers.get("accept", ""):
            return StreamingResponse(
                _metric_events(managed, since),
                media_type="text/event-stream",
                headers={"cache-control": "no-store"})
        return {"rows": managed.session.metric_rows(since)}

    @router.get("/sessions/{sid}/report")
    def report(sid: str) -> dict:
        return registry.get(sid).session.report_json()

    @router.get("/sessions/{sid}/report/files/{name:path}")
    def report_file(sid: str, name: str):
        base = registry.get(sid).session.paths.report_dir.resolve()
        target = (base / name).resolve()
        if base != target and base not in target.parents:
            return _json_error(404, "NotFound", "no such report file")
        if not target.is_file():
            return _json_error(404, "NotFound", "no such report file")
        return Response(target.read_bytes(), media_type=_media_type(target))

    return router


def _metric_events(managed: ManagedSession, since: int):
    """SSE rows in iter order; the connection is held while the run can
    still produce events and closed once the session is terminal."""
    cursor = since
    while True:
        rows = managed.session.metric_rows(cursor)
        for row in rows:
            cursor = row["iter"]
            yield f"id: {row['iter']}\ndata: {json.dumps(row)}\n\n"
        if managed.session.state.phase in PL.TERMINAL_PHASES \
                and not managed.running():
            yield "event: end\ndata: {}\n\n"
            return
        if not rows:
            time.sleep(_SSE_POLL_S)


def _json_error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": error, "detail": detail})


def default_ui_dir() -> Path:
    env = os.environ.get("PETROMATCH_UI_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "frontend" / "dist"


def create_app(data_dir=None, ui_dir=None, autoresume: bool = True) -> FastAPI:
    root = Path(data_dir or os.environ.get("PETROMATCH_DATA_DIR")
                or "petromatch-data")
    registry = SessionRegistry(root, autoresume=autoresume)
    app = FastAPI(title="petromatch", version="0.1.0",
                  description="Reservoir history-matching sessions")
    app.state.registry = registry
    app.include_router(build_router(registry))

    @app.exception_handler(PetromatchError)
    def _domain_error(_request, exc: PetromatchError):
        status = 500
        for cls, code in _HTTP_STATUS.items():
            if isinstance(exc, cls):
                status = code
                break
        return _json_error(status, type(exc).__name__, str(exc))

    ui = Path(ui_dir) if ui_dir is not None else default_ui_dir()
    if ui.is_dir():
        app.mount("/ui", StaticFiles(directory=ui, html=True), name="ui")
    return app


def bind_address(value: str | None = None) -> tuple[str, int]:
    addr = value or os.environ.get("PETROMATCH_BIND_ADDR") or "127.0.0.1:8866"
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def serve(data_dir=None, bind: str | None = None, ui_dir=None) -> None:
    import uvicorn

    host, port = bind_address(bind)
    uvicorn.run(create_app(data_dir, ui_dir=ui_dir), host=host, port=port,
                log_level="warning")

"""HTTP front door for live consultations.

Endpoints:

- ``POST /sessions`` starts a consultation and returns the opening question.
- ``POST /sessions/{id}/reply`` submits one patient reply and returns the
  next question (or the terminal status).
- ``GET /sessions/{id}/report`` returns the outcome of a finished session.
- ``GET /healthz`` liveness probe, never authenticated.

Every error body has the same shape: ``{"code", "message", "retryable"}``.
State is checkpointed to a key-value store after every successful
transition, so a restarted process serves existing sessions from disk.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Protocol

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .errors import InputError, PreconsultError, SessionError
from .records import record_to_dict
from .orchestrator import (
    ConsultationEngine,
    SessionConfig,
    SessionState,
    SessionStatus,
    state_from_dict,
    state_to_dict,
)

_SESSION_ID = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

# the only per-session override a client may request; everything else is
# fixed when the service is built
_ALLOWED_OVERRIDES = {"controller_strategy", "max_rounds"}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.retryable = retryable

    def body(self) -> dict:
        return {"code": self.code, "message": self.message, "retryable": self.retryable}


# --- checkpoint stores -----------------------------------------------------------

class KeyValueStore(Protocol):
    def get(self, key: str) -> str | None: ...

    def put(self, key: str, value: str) -> None: ...

    def delete(self, key: str) -> None: ...

    def keys(self) -> list[str]: ...


class MemoryStore:
    def __init__(self):
        self._data: dict[str, str] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value: str) -> None:
        with self._lock:
            self._data[key] = value

    def delete(self, key: str) -> None:
        with self._lock:
            self._data.pop(key, None)

    def keys(self) -> list[str]:
        with self._lock:
            return sorted(self._data)


class FileStore:
    """One JSON document per key; writes are atomic via rename."""

    def __init__(self, directory: str | Path):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        if not _SESSION_ID.match(key):
            raise InputError(f"invalid store key {key!r}")
        return self._dir / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")

    def put(self, key: str, value: str) -> None:
        path = self._path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(value, encoding="utf-8")
        os.replace(tmp, path)

    def delete(self, key: str) -> None:
        path = self._path(key)
        if path.exists():
            path.unlink()

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self._dir.glob("*.json"))


# --- session service ---------------------------------------------------------------

class SessionService:
    """Engine plus persistence plus per-session serialization."""

    def __init__(
        self,
        engine: ConsultationEngine,
        store: KeyValueStore | None = None,
    ):
        self.engine = engine
        self.store = store if store is not None else MemoryStore()
        self._cache: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _save(self, state: SessionState) -> None:
        self._cache[state.session_id] = state
        self.store.put(
            state.session_id, json.dumps(state_to_dict(state), ensure_ascii=False)
        )

    def _load(self, session_id: str) -> SessionState:
        if not _SESSION_ID.match(session_id):
            raise ApiError(404, "not_found", f"no session {session_id!r}")
        state = self._cache.get(session_id)
        if state is not None:
            return state
        raw = self.store.get(session_id)
        if raw is None:
            raise ApiError(404, "not_found", f"no session {session_id!r}")
        state = state_from_dict(json.loads(raw))
        self._cache[session_id] = state
        return state

    @staticmethod
    def _view(state: SessionState) -> dict:
        """One TurnResponse: next question plus the full post-round snapshot."""
        question = (
            state.last_question() if state.status is SessionStatus.ACTIVE else None
        )
        return {
            "session_id": state.session_id,
            "status": state.status.value,
            "next_question": question,
            "record_snapshot": record_to_dict(state.record),
            "triage_snapshot": state.triage.to_dict() if state.triage else None,
            "progress": {
                "completed_subtasks": state.completed_subtasks(),
                "active_group": state.active_group.value if state.active_group else None,
                "round": state.round,
            },
        }

    def create(self, overrides: Mapping | None = None) -> dict:
        overrides = dict(overrides or {})
        unknown = set(overrides) - _ALLOWED_OVERRIDES
        if unknown:
            raise ApiError(
                422,
                "invalid_input",
                f"unsupported session overrides: {sorted(unknown)}",
            )
        engine = self.engine
        if overrides:
            try:
                config = SessionConfig.from_dict(
                    {**self.engine.config.to_dict(), **overrides}
                )
            except (InputError, ValueError) as exc:
                raise ApiError(422, "invalid_input", str(exc)) from exc
            # the server's own cap bounds what a client may ask for
            if config.max_rounds > self.engine.config.max_rounds:
                raise ApiError(
                    422,
                    "invalid_input",
                    f"max_rounds may not exceed {self.engine.config.max_rounds}",
                )
            engine = ConsultationEngine(self.engine.roles, config)
        state = self._run_engine(lambda: engine.start_session())
        self._save(state)
        handle = {
            "created_at": datetime.now(timezone.utc).isoformat(),
            "config": state.config.to_dict(),
        }
        return {**handle, **self._view(state)}

    def reply(self, session_id: str, text: str) -> dict:
        if not isinstance(text, str) or not text.strip():
            raise ApiError(422, "invalid_input", "reply text must be a non-empty string")
        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise ApiError(
                409, "busy", f"session {session_id} is processing another reply", retryable=True
            )
        try:
            state = self._load(session_id)
            if state.status is not SessionStatus.ACTIVE:
                raise ApiError(
                    409,
                    "not_active",
                    f"session {session_id} is {state.status.value}; no further replies",
                )
            new_state = self._run_engine(lambda: self.engine.run_round(state, text))
            self._save(new_state)
            return self._view(new_state)
        finally:
            lock.release()

    def report(self, session_id: str) -> dict:
        state = self._load(session_id)
        if state.status is SessionStatus.ACTIVE:
            raise ApiError(
                409,
                "not_finished",
                f"session {session_id} is still active; report is available "
                "once it completes or fails",
            )
        return ConsultationEngine.outcome(state).to_dict()

    @staticmethod
    def _run_engine(action):
        try:
            return action()
        except SessionError as exc:
            if exc.retryable:
                raise ApiError(503, "backend_unavailable", str(exc), retryable=True) from exc
            raise ApiError(500, "session_error", str(exc)) from exc
        except InputError as exc:
            raise ApiError(422, "invalid_input", str(exc)) from exc
        except PreconsultError as exc:
            raise ApiError(500, "internal_error", str(exc)) from exc


# --- HTTP wiring ----------------------------------------------------------------------

def create_app(
    engine: ConsultationEngine,
    store: KeyValueStore | None = None,
    auth_token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="preconsult", docs_url=None, redoc_url=None)
    service = SessionService(engine, store)
    app.state.service = service

    def authorize(request: Request) -> None:
        if not auth_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {auth_token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    async def json_body(request: Request, *, required: bool) -> dict:
        raw = await request.body()
        if not raw:
            if required:
                raise ApiError(422, "invalid_input", "request body must be JSON")
            return {}
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError(422, "invalid_input", f"invalid JSON body: {exc}") from exc
        if not isinstance(data, dict):
            raise ApiError(422, "invalid_input", "request body must be a JSON object")
        return data

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    # engine rounds are slow synchronous work; run them off the event loop
    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        authorize(request)
        body = await json_body(request, required=False)
        return await run_in_threadpool(service.create, body)

    @app.post("/sessions/{session_id}/reply")
    async def reply(session_id: str, request: Request):
        authorize(request)
        body = await json_body(request, required=True)
        return await run_in_threadpool(service.reply, session_id, body.get("text", ""))

    @app.get("/sessions/{session_id}/report")
    async def report(session_id: str, request: Request):
        authorize(request)
        return await run_in_threadpool(service.report, session_id)

    return app


@dataclass(frozen=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint_dir: str = ""
    auth_token_env: str = ""

    @classmethod
    def from_dict(cls, data: Mapping) -> "ServiceSettings":
        return cls(
            host=data.get("host", "127.0.0.1"),
            port=int(data.get("port", 8000)),
            checkpoint_dir=data.get("checkpoint_dir", ""),
            auth_token_env=data.get("auth_token_env", ""),
        )

    def resolve_token(self) -> str | None:
        if not self.auth_token_env:
            return None
        token = os.environ.get(self.auth_token_env, "")
        if not token:
            raise InputError(
                f"auth_token_env names {self.auth_token_env!r} but it is unset"
            )
        return token


def serve(app: FastAPI, host: str, port: int) -> None:  # pragma: no cover - network loop
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="info")

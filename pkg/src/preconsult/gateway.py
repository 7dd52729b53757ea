"""Uniform access to language-model backends.

Two backend kinds share one request/response contract:

* ``http_openai_compatible`` posts to ``{base_url}/chat/completions`` with the
  OpenAI chat JSON body, retrying transient transport failures with
  exponential backoff. The API key is read from the environment variable
  named in the config, never stored.
* ``scripted`` replays recorded replies keyed on
  ``(role_name, fingerprint of the last user message)``. On disk a script is
  a directory holding one ``<role_name>.json`` file per role, each mapping
  fingerprint hex to the recorded reply text.

A gateway wraps one backend, bounds in-flight requests with a global
semaphore (the deployment-level parallelism budget), and keeps a call log so
tests and metrics can attribute traffic per agent role.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

from .errors import (
    BackendTimeoutError,
    BackendUnavailableError,
    ConfigError,
    GatewayError,
    InputError,
    ProtocolError,
    ScriptMissError,
)

logger = logging.getLogger(__name__)

SPEAKERS = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    speaker: str
    text: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise InputError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class ChatRequest:
    role_name: str
    messages: tuple[ChatMessage, ...]
    model_id: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    response_format_hint: str = "free_text"  # or "structured"

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise InputError("request must carry at least one message")
        if self.messages[0].speaker != "system":
            raise InputError("first message must be the system message")
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise InputError("max_tokens must be > 0")

    def last_user_text(self) -> str:
        for msg in reversed(self.messages):
            if msg.speaker == "user":
                return msg.text
        return ""


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: int = 0
    backend_id: str = ""


@dataclass
class BackendConfig:
    kind: str = "http_openai_compatible"  # or "scripted"
    base_url: str = ""
    api_key_env: str = ""
    model_id: str = ""
    timeout_ms: int = 60_000
    max_retries: int = 2
    max_concurrent_requests: int = 60
    backoff_base_ms: int = 250
    script_dir: str = ""

    def __post_init__(self):
        if self.kind not in ("http_openai_compatible", "scripted"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ConfigError("max_concurrent_requests must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_url": self.base_url,
            "api_key_env": self.api_key_env,
            "model_id": self.model_id,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "max_concurrent_requests": self.max_concurrent_requests,
            "backoff_base_ms": self.backoff_base_ms,
            "script_dir": self.script_dir,
        }


def fingerprint(request: ChatRequest) -> str:
    """Stable content hash over role name and ordered message texts."""
    payload = json.dumps(
        [request.role_name, [[m.speaker, m.text] for m in request.messages]],
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def message_fingerprint(text: str) -> str:
    """Content hash of one message text; the scripted-backend lookup key."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Backend(Protocol):
    backend_id: str

    def send(self, request: ChatRequest) -> ChatResponse: ...


class ScriptedBackend:
    """Deterministic playback backend for tests and offline simulation."""

    def __init__(self, entries: Mapping[tuple[str, str], str] | None = None):
        self._entries: dict[tuple[str, str], str] = dict(entries or {})
        self.backend_id = "scripted"

    def record(self, role_name: str, last_user_text: str, reply: str) -> None:
        self._entries[(role_name, message_fingerprint(last_user_text))] = reply

    def send(self, request: ChatRequest) -> ChatResponse:
        fp = message_fingerprint(request.last_user_text())
        key = (request.role_name, fp)
        if key not in self._entries:
            raise ScriptMissError(request.role_name, fp)
        return ChatResponse(text=self._entries[key], latency_ms=0, backend_id=self.backend_id)

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedBackend":
        root = Path(path)
        if not root.is_dir():
            raise ConfigError(f"script directory {root} does not exist")
        entries: dict[tuple[str, str], str] = {}
        for role_file in sorted(root.glob("*.json")):
            role = role_file.stem
            data = json.loads(role_file.read_text(encoding="utf-8"))
            for fp, reply in data.items():
                entries[(role, fp)] = reply
        return cls(entries)

    def write_dir(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        by_role: dict[str, dict[str, str]] = {}
        for (role, fp), reply in self._entries.items():
            by_role.setdefault(role, {})[fp] = reply
        for role, mapping in by_role.items():
            (root / f"{role}.json").write_text(
                json.dumps(mapping, indent=2, ensure_ascii=False, sort_keys=True),
                encoding="utf-8",
            )


class HttpOpenAiBackend:
    """Chat-completions client with bounded retry on transient failures.

    ``post`` is injectable so tests can fault the transport; the default uses
    ``requests``. Only transport-level failures and 5xx replies are retried;
    4xx replies and malformed bodies never are.
    """

    def __init__(
        self,
        config: BackendConfig,
        post: Callable | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.backend_id = config.model_id or config.base_url or "http"
        self._post = post or self._requests_post
        self._sleep = sleep

    @staticmethod
    def _requests_post(url: str, headers: dict, payload: dict, timeout_s: float):
        import requests

        return requests.post(url, headers=headers, json=payload, timeout=timeout_s)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def send(self, request: ChatRequest) -> ChatResponse:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": request.model_id or self.config.model_id,
            "messages": [{"role": m.speaker, "content": m.text} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        attempts = 0
        last_error: GatewayError | None = None
        start = time.monotonic()
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                text = self._attempt(url, payload)
                latency = int((time.monotonic() - start) * 1000)
                return ChatResponse(text=text, latency_ms=latency, backend_id=self.backend_id)
            except GatewayError as exc:
                if not exc.retryable:
                    raise
                last_error = exc
                if attempts <= self.config.max_retries:
                    delay = self.config.backoff_base_ms * (2 ** (attempts - 1)) / 1000.0
                    logger.warning(
                        "transient backend failure (attempt %d/%d): %s",
                        attempts,
                        self.config.max_retries + 1,
                        exc,
                    )
                    self._sleep(delay)
        raise BackendUnavailableError(
            f"backend unavailable after {attempts} attempts: {last_error}", attempts=attempts
        )

    def _attempt(self, url: str, payload: dict) -> str:
        import requests

        try:
            response = self._post(url, self._headers(), payload, self.config.timeout_ms / 1000.0)
        except requests.Timeout as exc:
            raise BackendTimeoutError(f"request timed out: {exc}") from exc
        except requests.ConnectionError as exc:
            err = GatewayError(f"connection failed: {exc}")
            err.retryable = True
            raise err from exc
        status = getattr(response, "status_code", 200)
        if status >= 500 or status == 429:
            err = GatewayError(f"server error HTTP {status}")
            err.retryable = True
            raise err
        if status >= 400:
            raise ProtocolError(f"endpoint rejected request: HTTP {status}")
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise ProtocolError(f"malformed endpoint reply: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise ProtocolError("endpoint reply carried no text")
        return text


def build_backend(config: BackendConfig) -> Backend:
    if config.kind == "scripted":
        if config.script_dir:
            return ScriptedBackend.from_dir(config.script_dir)
        return ScriptedBackend()
    if not config.base_url:
        raise ConfigError("http backend requires base_url")
    return HttpOpenAiBackend(config)


@dataclass(frozen=True)
class CallRecord:
    role_name: str
    request_fingerprint: str
    last_user_fingerprint: str
    last_user_text: str
    response_text: str
    backend_id: str
    ok: bool


class LlmGateway:
    """Single entry point for model calls.

    Bounds global parallelism with a semaphore sized to the config's
    ``max_concurrent_requests`` and records every call for attribution.
    Safe for concurrent use from many sessions.
    """

    def __init__(self, backend: Backend, max_concurrent_requests: int = 60):
        if max_concurrent_requests < 1:
            raise ConfigError("max_concurrent_requests must be >= 1")
        self.backend = backend
        self.max_concurrent_requests = max_concurrent_requests
        self._semaphore = threading.BoundedSemaphore(max_concurrent_requests)
        self._log_lock = threading.Lock()
        self._calls: list[CallRecord] = []

    @classmethod
    def from_config(cls, config: BackendConfig) -> "LlmGateway":
        return cls(build_backend(config), config.max_concurrent_requests)

    @property
    def calls(self) -> list[CallRecord]:
        with self._log_lock:
            return list(self._calls)

    def calls_for_role(self, role_name: str) -> list[CallRecord]:
        return [c for c in self.calls if c.role_name == role_name]

    def reset_log(self) -> None:
        with self._log_lock:
            self._calls.clear()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._semaphore:
            try:
                response = self.backend.send(request)
                ok = True
                text = response.text
            except GatewayError:
                ok = False
                text = ""
                raise
            finally:
                last_user = request.last_user_text()
                record = CallRecord(
                    role_name=request.role_name,
                    request_fingerprint=fingerprint(request),
                    last_user_fingerprint=message_fingerprint(last_user),
                    last_user_text=last_user,
                    response_text=text,
                    backend_id=getattr(self.backend, "backend_id", ""),
                    ok=ok,
                )
                with self._log_lock:
                    self._calls.append(record)
        return response


def complete(config: BackendConfig, request: ChatRequest) -> ChatResponse:
    """One-shot completion against a freshly built backend.

    Long-lived callers should hold an :class:`LlmGateway` instead so the
    concurrency budget is shared.
    """
    return LlmGateway.from_config(config).complete(request)


def script_from_calls(calls: list[CallRecord]) -> ScriptedBackend:
    """Turn a call log into a replayable script (record/replay workflow)."""
    backend = ScriptedBackend()
    for call in calls:
        if call.ok:
            backend.record(call.role_name, call.last_user_text, call.response_text)
    return backend

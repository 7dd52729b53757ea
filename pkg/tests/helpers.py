"""Deterministic rule-driven backend for exercising the engine offline.

Unlike a fingerprint-keyed script, this backend computes each role's reply
from the prompt it actually received, so full sessions can run without
enumerating every exchange up front.
"""

from __future__ import annotations

import json
import re
import threading
import time

from preconsult.gateway import ChatRequest, ChatResponse

_PENDING_LINE = re.compile(r"^- (t\d+) \(rank (\d+)\)", re.MULTILINE)
_RUBRIC_LINE = re.compile(r"^([A-Z]+) \(", re.MULTILINE)
_SUBTASK_KEY = re.compile(r"\b(t\d+)\b")
_FOCUS = re.compile(r"Focus: (t\d+)")
_ROUND_MARK = re.compile(r"\[round (\d+)\]")


def scripted_question(round: int, key: str) -> str:
    """The question the rule backend asks; tests hand-compute transcripts with it."""
    return f"Q{round}: please describe {key}."


def pending_from_prompt(user_text: str) -> list[tuple[str, int]]:
    return [(key, int(rank)) for key, rank in _PENDING_LINE.findall(user_text)]


class RuleBackend:
    """Answers each role by rule; thread-safe; optionally slow.

    monitor_mode:
      - ``complete_current``: the lowest-rank pending subtask scores 1.0,
        everything else 0.0 (one completion per round).
      - ``never``: all pending subtasks score 0.0 forever.
    """

    def __init__(
        self,
        monitor_mode: str = "complete_current",
        record_fields: dict | None = None,
        triage_primary: str = "Orthopedics",
        triage_secondary: str = "Spine Surgery",
        evaluator_scores: dict | None = None,
        latency: float = 0.0,
    ):
        self.monitor_mode = monitor_mode
        self.record_fields = record_fields or {
            "cc": "Neck and shoulder pain with limited mobility for half a month.",
            "hpi": "Pain for half a month, worse with desk work, eased by rest.",
            "ph": "No chronic disease, no surgery, no transfusion, no allergies.",
        }
        self.triage_primary = triage_primary
        self.triage_secondary = triage_secondary
        self.evaluator_scores = evaluator_scores or {}
        self.latency = latency
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            if self.latency:
                time.sleep(self.latency)
            return ChatResponse(text=self._reply(request))
        finally:
            with self._lock:
                self._in_flight -= 1

    def _reply(self, request: ChatRequest) -> str:
        role = request.role_name
        user = request.last_user_text()
        if role == "monitor":
            return self._monitor(user)
        if role == "controller":
            pending = pending_from_prompt(user)
            key = min(pending, key=lambda e: e[1])[0]
            return json.dumps({"selected": key, "rationale": "lowest rank first"})
        if role == "recipient":
            return json.dumps(self.record_fields)
        if role == "prompter":
            key = _SUBTASK_KEY.search(user).group(1)
            return f"Focus: {key}"
        if role == "inquirer":
            key = _FOCUS.search(user).group(1)
            last_round = max(int(r) for r in _ROUND_MARK.findall(user))
            return scripted_question(last_round + 1, key)
        if role == "triager":
            return json.dumps(
                {
                    "primary": [{"department": self.triage_primary, "confidence": 0.9}],
                    "secondary": [{"department": self.triage_secondary, "confidence": 0.8}],
                }
            )
        if role == "virtual_patient":
            return "It started about two weeks ago and has been steady since."
        if role == "evaluator":
            codes = _RUBRIC_LINE.findall(user)
            return json.dumps(
                {
                    code: {"score": self.evaluator_scores.get(code, 4), "rationale": "meets the bar"}
                    for code in codes
                }
            )
        raise AssertionError(f"unexpected role {role!r}")

    def _monitor(self, user: str) -> str:
        pending = pending_from_prompt(user)
        assert pending, "monitor prompt carried no pending subtasks"
        if self.monitor_mode == "complete_current":
            focus = min(pending, key=lambda e: e[1])[0]
            scores = {
                key: {"validity": 1.0 if key == focus else 0.0,
                      "completeness": 1.0 if key == focus else 0.0}
                for key, _ in pending
            }
        elif self.monitor_mode == "never":
            scores = {key: {"validity": 0.0, "completeness": 0.0} for key, _ in pending}
        else:
            raise AssertionError(f"unknown monitor_mode {self.monitor_mode!r}")
        return json.dumps(scores)


def make_engine(backend, strategy: str = "default_order", cap: int = 60, **config_kwargs):
    """Engine over a fake backend with the packaged assets."""
    from preconsult import (
        AgentRoles,
        ConsultationEngine,
        LlmGateway,
        SessionConfig,
        build_default_hierarchy,
        default_taxonomy,
    )

    gateway = LlmGateway(backend, max_concurrent_requests=cap)
    roles = AgentRoles(gateway, build_default_hierarchy(), default_taxonomy())
    config = SessionConfig(controller_strategy=strategy, **config_kwargs)
    return ConsultationEngine(roles, config)


class FlakyBackend:
    """Wraps another backend, failing the first ``failures`` sends."""

    def __init__(self, inner, failures: int, exc_factory):
        self.inner = inner
        self.remaining = failures
        self.exc_factory = exc_factory
        self.attempts = 0

    def send(self, request: ChatRequest) -> ChatResponse:
        self.attempts += 1
        if self.remaining > 0:
            self.remaining -= 1
            raise self.exc_factory()
        return self.inner.send(request)


class SequenceBackend:
    """Returns canned texts in order, recording every request it saw."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests: list[ChatRequest] = []

    def send(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        assert self.replies, "SequenceBackend exhausted"
        return ChatResponse(text=self.replies.pop(0))

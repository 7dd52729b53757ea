"""The six in-dialogue agent roles: prompt template + structured-output
parser pairs over the gateway.

Each role is stateless; all conversation state lives in the session. A
structured role asks for strict JSON, and on an unusable reply re-asks once
(configurable) with a format reminder before giving up with a
:class:`RoleParseError` that carries the raw text.

Prompt templates are plain-text assets with named ``{placeholder}`` slots;
pass ``template_dir`` to swap the whole set.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .errors import RoleParseError
from .gateway import ChatMessage, ChatRequest, LlmGateway
from .records import DialogueTranscript, MedicalRecord, Speaker, apply_record_update
from .tasks import CompletionScore, PendingTaskSet, SubtaskId, TaskHierarchy
from .triage import DepartmentTaxonomy

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")

REPAIR_REMINDER = (
    "Your previous reply could not be used: {problem}. "
    "Reply again following the required format exactly, with no extra text."
)


class _ParseFailure(Exception):
    """Internal: reply text did not satisfy the role's schema."""


@dataclass
class RoleSettings:
    """Knobs shared by all roles; defaults follow the engine's config."""

    repair_retries: int = 1
    transcript_tail_turns: int = 0  # 0 = pass the full transcript
    decision_temperature: float = 0.0
    generative_temperature: float = 0.7
    max_tokens: int = 1024


@dataclass(frozen=True)
class ParsedRoleReply:
    raw_text: str
    parsed_payload: Any
    parse_attempts: int


@dataclass(frozen=True)
class MonitorAssessment:
    subtask: SubtaskId
    score: CompletionScore
    rationale: str = ""


@dataclass(frozen=True)
class ControllerDecision:
    selected: SubtaskId
    rationale: str = ""
    via_fallback: bool = False


@dataclass(frozen=True)
class TriagerOutput:
    primary_candidates: tuple[tuple[str, float], ...]
    secondary_candidates: tuple[tuple[str, float], ...]

    def top(self) -> tuple[str, str]:
        return self.primary_candidates[0][0], self.secondary_candidates[0][0]

    def to_dict(self) -> dict:
        return {
            "primary": [{"department": d, "confidence": c} for d, c in self.primary_candidates],
            "secondary": [{"department": d, "confidence": c} for d, c in self.secondary_candidates],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TriagerOutput":
        return cls(
            primary_candidates=tuple(
                (e["department"], float(e["confidence"])) for e in data["primary"]
            ),
            secondary_candidates=tuple(
                (e["department"], float(e["confidence"])) for e in data["secondary"]
            ),
        )


@dataclass(frozen=True)
class DegradationEvent:
    """A role fell back to a degraded behavior instead of failing the round."""

    round: int
    role: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"round": self.round, "role": self.role, "kind": self.kind, "detail": self.detail}


# --- rendering ----------------------------------------------------------------

def render_template(template: str, **values: str) -> str:
    """Fill named placeholders, leaving unknown braces (JSON examples) alone."""

    def sub(match: re.Match) -> str:
        name = match.group(1)
        return str(values[name]) if name in values else match.group(0)

    return _PLACEHOLDER.sub(sub, template)


def render_record(record: MedicalRecord) -> str:
    def show(value: str) -> str:
        return value if value else "(not collected yet)"

    return (
        f"Chief Complaint: {show(record.cc)}\n"
        f"History of Present Illness: {show(record.hpi)}\n"
        f"Past History: {show(record.ph)}"
    )


def render_transcript(transcript: DialogueTranscript, tail_turns: int = 0) -> str:
    turns = transcript.tail(tail_turns)
    if not turns:
        return "(no dialogue yet)"
    labels = {Speaker.INQUIRER: "Doctor", Speaker.PATIENT: "Patient"}
    return "\n".join(f"[round {t.round}] {labels[t.role]}: {t.text}" for t in turns)


def render_pending_block(pending: PendingTaskSet, hierarchy: TaskHierarchy) -> str:
    lines = []
    for sid in pending.ids():
        sub = hierarchy.subtask(sid)
        lines.append(f"- {sid.key} (rank {sub.default_rank}) {sub.name}: {sub.description}")
    return "\n".join(lines)


class PromptLibrary:
    """Loads and caches the per-role template assets."""

    def __init__(self, template_dir: str | Path | None = None):
        self._dir = Path(template_dir) if template_dir else Path(__file__).parent / "assets" / "prompts"
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            self._cache[name] = (self._dir / f"{name}.txt").read_text(encoding="utf-8").strip()
        return self._cache[name]


# --- structured ask loop --------------------------------------------------------

def extract_json_object(text: str) -> Any:
    """Parse a JSON object from model text, tolerating surrounding prose."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            return json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            pass
    raise _ParseFailure("reply is not valid JSON")


def structured_ask(
    gateway: LlmGateway,
    role_name: str,
    system: str,
    user: str,
    parse: Callable[[str], Any],
    *,
    temperature: float,
    max_tokens: int = 1024,
    repair_retries: int = 1,
    structured: bool = True,
) -> ParsedRoleReply:
    """Ask, parse, and repair-retry once on schema violations."""
    messages: list[ChatMessage] = [ChatMessage("system", system), ChatMessage("user", user)]
    attempts = 0
    while True:
        attempts += 1
        request = ChatRequest(
            role_name=role_name,
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=max_tokens,
            response_format_hint="structured" if structured else "free_text",
        )
        response = gateway.complete(request)
        try:
            payload = parse(response.text)
        except _ParseFailure as exc:
            if attempts > repair_retries:
                raise RoleParseError(
                    role_name, str(exc), raw_text=response.text, attempts=attempts
                ) from exc
            messages.append(ChatMessage("assistant", response.text))
            messages.append(ChatMessage("user", REPAIR_REMINDER.format(problem=exc)))
            continue
        return ParsedRoleReply(raw_text=response.text, parsed_payload=payload, parse_attempts=attempts)


def default_order_selection(pending: PendingTaskSet, hierarchy: TaskHierarchy) -> SubtaskId:
    """The pending subtask with the lowest clinical default rank."""
    return min(pending.ids(), key=lambda sid: hierarchy.subtask(sid).default_rank)


class AgentRoles:
    """Executors for the in-dialogue roles, bound to one gateway."""

    def __init__(
        self,
        gateway: LlmGateway,
        hierarchy: TaskHierarchy,
        taxonomy: DepartmentTaxonomy,
        settings: RoleSettings | None = None,
        template_dir: str | Path | None = None,
    ):
        self.gateway = gateway
        self.hierarchy = hierarchy
        self.taxonomy = taxonomy
        self.settings = settings or RoleSettings()
        self.prompts = PromptLibrary(template_dir)

    # -- helpers ---------------------------------------------------------

    def _tail(self, transcript: DialogueTranscript) -> str:
        return render_transcript(transcript, self.settings.transcript_tail_turns)

    def _ask(self, role: str, user: str, parse, *, decision: bool, structured: bool = True):
        return structured_ask(
            self.gateway,
            role,
            self.prompts.get(f"{role}_system"),
            user,
            parse,
            temperature=(
                self.settings.decision_temperature
                if decision
                else self.settings.generative_temperature
            ),
            max_tokens=self.settings.max_tokens,
            repair_retries=self.settings.repair_retries,
            structured=structured,
        )

    # -- monitor -----------------------------------------------------------

    def monitor_assess(
        self,
        record: MedicalRecord,
        transcript: DialogueTranscript,
        pending: PendingTaskSet,
        round: int,
    ) -> list[MonitorAssessment]:
        """Score every pending subtask of the active group, exactly once each."""
        if pending.empty:
            raise RoleParseError("monitor", "pending set is empty; nothing to assess")
        expected = {sid.key: sid for sid in pending.ids()}
        user = render_template(
            self.prompts.get("monitor_user"),
            round=str(round),
            group=pending.group.value,
            pending_block=render_pending_block(pending, self.hierarchy),
            record=render_record(record),
            transcript_tail=self._tail(transcript),
        )

        def parse(text: str) -> list[MonitorAssessment]:
            data = extract_json_object(text)
            if not isinstance(data, dict):
                raise _ParseFailure("expected a JSON object keyed by subtask")
            missing = sorted(set(expected) - set(data))
            if missing:
                raise _ParseFailure(f"incomplete coverage: missing {', '.join(missing)}")
            extra = sorted(set(data) - set(expected))
            if extra:
                raise _ParseFailure(f"unexpected subtask keys: {', '.join(extra)}")
            out = []
            for key, sid in expected.items():
                entry = data[key]
                if not isinstance(entry, dict):
                    raise _ParseFailure(f"{key} must map to an object with scores")
                try:
                    score = CompletionScore(
                        validity=float(entry["validity"]),
                        completeness=float(entry["completeness"]),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise _ParseFailure(f"{key}: bad score fields ({exc})") from exc
                except Exception as exc:  # range violations from CompletionScore
                    raise _ParseFailure(f"{key}: {exc}") from exc
                out.append(
                    MonitorAssessment(
                        subtask=sid, score=score, rationale=str(entry.get("rationale", ""))
                    )
                )
            return out

        return self._ask("monitor", user, parse, decision=True).parsed_payload

    # -- controller ----------------------------------------------------------

    def controller_select(
        self,
        pending: PendingTaskSet,
        record: MedicalRecord,
        transcript: DialogueTranscript,
        strategy: str,
        round: int,
        events: list[DegradationEvent] | None = None,
    ) -> ControllerDecision:
        """Pick the next subtask to pursue.

        ``default_order`` is a pure rank argmin and never touches the model.
        ``agent_driven`` asks the Controller model and validates its choice
        against the pending set, falling back to default order (and noting
        the degradation) if the model cannot produce a usable pick.
        """
        if pending.empty:
            raise RoleParseError("controller", "pending set is empty; nothing to select")
        if strategy == "default_order":
            return ControllerDecision(selected=default_order_selection(pending, self.hierarchy))

        allowed = {sid.key: sid for sid in pending.ids()}
        user = render_template(
            self.prompts.get("controller_user"),
            round=str(round),
            group=pending.group.value,
            pending_block=render_pending_block(pending, self.hierarchy),
            record=render_record(record),
            transcript_tail=self._tail(transcript),
        )

        def parse(text: str) -> ControllerDecision:
            stripped = text.strip()
            rationale = ""
            if stripped.lower() in allowed:
                key = stripped.lower()
            else:
                data = extract_json_object(text)
                if not isinstance(data, dict) or "selected" not in data:
                    raise _ParseFailure('expected {"selected": "<subtask key>"}')
                key = str(data["selected"]).strip().lower()
                rationale = str(data.get("rationale", ""))
                if key not in allowed:
                    raise _ParseFailure(f"selected {key!r} is not a pending subtask")
            return ControllerDecision(selected=allowed[key], rationale=rationale)

        try:
            return self._ask("controller", user, parse, decision=True).parsed_payload
        except RoleParseError as exc:
            fallback = default_order_selection(pending, self.hierarchy)
            logger.warning("controller fallback to default order at round %d: %s", round, exc)
            if events is not None:
                events.append(
                    DegradationEvent(
                        round=round,
                        role="controller",
                        kind="fallback_default_order",
                        detail=exc.reason,
                    )
                )
            return ControllerDecision(selected=fallback, via_fallback=True)

    # -- recipient -------------------------------------------------------------

    def recipient_update(
        self,
        record: MedicalRecord,
        transcript: DialogueTranscript,
        round: int,
        events: list[DegradationEvent] | None = None,
    ) -> MedicalRecord:
        """Fold the round's new information into the record.

        A scribe failure must not abort the consultation: on an unusable
        reply the record is carried forward unchanged and the degradation is
        noted.
        """
        if transcript.last_patient_round() < round:
            raise RoleParseError(
                "recipient", f"transcript has no patient turn for round {round}"
            )
        user = render_template(
            self.prompts.get("recipient_user"),
            round=str(round),
            record=render_record(record),
            transcript=render_transcript(transcript),
        )

        def parse(text: str) -> dict:
            data = extract_json_object(text)
            if not isinstance(data, dict):
                raise _ParseFailure("expected a JSON object")
            missing = [f for f in ("cc", "hpi", "ph") if f not in data]
            if missing:
                raise _ParseFailure(f"missing fields: {', '.join(missing)}")
            return {f: str(data[f]) for f in ("cc", "hpi", "ph")}

        try:
            update = self._ask("recipient", user, parse, decision=True).parsed_payload
        except RoleParseError as exc:
            logger.warning("recipient carry-forward at round %d: %s", round, exc)
            if events is not None:
                events.append(
                    DegradationEvent(
                        round=round, role="recipient", kind="carry_forward", detail=exc.reason
                    )
                )
            return record
        return apply_record_update(record, round, update)

    # -- prompter ----------------------------------------------------------------

    def prompter_compose(
        self,
        record: MedicalRecord,
        current: SubtaskId,
        round: int,
        events: list[DegradationEvent] | None = None,
    ) -> str:
        """Guidance for the Inquirer; a fixed template backstops the model so
        a briefing always exists."""
        subtask = self.hierarchy.subtask(current)
        user = render_template(
            self.prompts.get("prompter_user"),
            subtask_key=current.key,
            subtask_name=subtask.name,
            subtask_description=subtask.description,
            record=render_record(record),
        )

        def parse(text: str) -> str:
            stripped = text.strip()
            if not stripped:
                raise _ParseFailure("empty guidance")
            return stripped

        try:
            return self._ask("prompter", user, parse, decision=False, structured=False).parsed_payload
        except RoleParseError as exc:
            if events is not None:
                events.append(
                    DegradationEvent(
                        round=round, role="prompter", kind="template_fallback", detail=exc.reason
                    )
                )
            return render_template(
                self.prompts.get("prompter_fallback"),
                subtask_name=subtask.name,
                subtask_description=subtask.description,
            ).strip()

    # -- inquirer -----------------------------------------------------------------

    def inquirer_ask(
        self,
        guidance: str,
        record: MedicalRecord,
        transcript: DialogueTranscript,
        round: int,
    ) -> str:
        """One patient-facing question; never empty, never a verbatim repeat."""
        if not guidance:
            raise RoleParseError("inquirer", "guidance must be non-empty")
        prior_questions = {
            t.text for t in transcript.turns if t.role is Speaker.INQUIRER
        }
        user = render_template(
            self.prompts.get("inquirer_user"),
            guidance=guidance,
            record=render_record(record),
            transcript_tail=self._tail(transcript),
        )

        def parse(text: str) -> str:
            question = text.strip()
            if not question:
                raise _ParseFailure("empty question")
            if question in prior_questions:
                raise _ParseFailure("question repeats an earlier inquirer turn verbatim")
            return question

        return self._ask("inquirer", user, parse, decision=False, structured=False).parsed_payload

    # -- triager -------------------------------------------------------------------

    def triager_classify(
        self,
        record: MedicalRecord,
        previous: TriagerOutput | None,
        round: int,
    ) -> TriagerOutput:
        """Ranked primary/secondary department candidates, refined across calls."""
        user = render_template(
            self.prompts.get("triager_user"),
            taxonomy=self.taxonomy.describe(),
            record=render_record(record),
            previous_triage=(
                json.dumps(previous.to_dict(), ensure_ascii=False) if previous else "none"
            ),
        )

        def parse(text: str) -> TriagerOutput:
            data = extract_json_object(text)
            if not isinstance(data, dict):
                raise _ParseFailure("expected a JSON object")
            for level in ("primary", "secondary"):
                if not isinstance(data.get(level), list) or not data[level]:
                    raise _ParseFailure(f"{level} candidates must be a non-empty list")

            def read(level: str, canonical) -> list[tuple[str, float]]:
                out = []
                for entry in data[level]:
                    try:
                        name = canonical(str(entry["department"]))
                        confidence = float(entry["confidence"])
                    except (KeyError, TypeError, ValueError) as exc:
                        raise _ParseFailure(f"bad {level} candidate: {exc}") from exc
                    except Exception as exc:  # unknown department
                        raise _ParseFailure(str(exc)) from exc
                    if not 0.0 <= confidence <= 1.0:
                        raise _ParseFailure(f"confidence {confidence} out of [0, 1]")
                    out.append((name, confidence))
                return out

            primaries = read("primary", self.taxonomy.canonical_primary)
            secondaries = read("secondary", self.taxonomy.canonical_secondary)
            primary_names = {name for name, _ in primaries}
            for name, _ in secondaries:
                parent = self.taxonomy.parent_of(name)
                if parent not in primary_names:
                    raise _ParseFailure(
                        f"secondary {name!r} belongs to {parent!r}, which is not a primary candidate"
                    )
            return TriagerOutput(
                primary_candidates=tuple(primaries), secondary_candidates=tuple(secondaries)
            )

        return self._ask("triager", user, parse, decision=True).parsed_payload

    # -- opening --------------------------------------------------------------------

    def opening_question(self) -> str:
        """Fixed presenting-complaint opener; no model call."""
        return self.prompts.get("opening_question")

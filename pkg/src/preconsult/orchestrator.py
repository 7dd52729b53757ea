"""Session state machine: one opening bootstrap, then one full agent cycle
per patient reply.

Round numbering: the opening question is round 1. ``state.round`` is always
the round of the question currently awaiting (or just given) a patient
reply, so a completed session's ``round`` equals the number of questions
asked. Each :meth:`ConsultationEngine.run_round` call processes exactly one
patient reply and either asks the next question, completes the session, or
fails it at the round cap.

``run_round`` mutates a copy: if any stage raises, the caller's state is
exactly as it was before the call.
"""

from __future__ import annotations

import copy
import uuid
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Mapping

from .errors import (
    BackendUnavailableError,
    GatewayError,
    InputError,
    RoleParseError,
    ScriptMissError,
    SessionError,
)
from .records import (
    DialogueTranscript,
    MedicalRecord,
    Speaker,
    Turn,
    append_turn,
    record_from_dict,
    record_to_dict,
    transcript_from_dict,
    transcript_to_dict,
)
from .roles import AgentRoles, DegradationEvent, TriagerOutput
from .tasks import (
    BoundaryRule,
    PendingTaskSet,
    SubtaskId,
    TaskGroup,
    contract_pending_set,
    force_complete,
    init_pending_set,
    pending_from_dict,
    pending_to_dict,
)


class SessionStatus(str, Enum):
    ACTIVE = "active"
    COMPLETED = "completed"
    FAILED_INCOMPLETE = "failed_incomplete"


CONTROLLER_STRATEGIES = ("agent_driven", "default_order")


@dataclass(frozen=True)
class SessionConfig:
    max_rounds: int = 30
    threshold: float = 0.85
    boundary: BoundaryRule = BoundaryRule.COMPLETE_AT_THRESHOLD
    controller_strategy: str = "agent_driven"
    triage_step_cap: int = 4
    repair_retries: int = 1
    transcript_tail_turns: int = 0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise InputError("max_rounds must be at least 1")
        if not 0.0 < self.threshold <= 1.0:
            raise InputError("threshold must be in (0, 1]")
        if self.controller_strategy not in CONTROLLER_STRATEGIES:
            raise InputError(
                f"controller_strategy must be one of {CONTROLLER_STRATEGIES}, "
                f"got {self.controller_strategy!r}"
            )
        if self.triage_step_cap < 1:
            raise InputError("triage_step_cap must be at least 1")
        if self.repair_retries < 0:
            raise InputError("repair_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_rounds": self.max_rounds,
            "threshold": self.threshold,
            "boundary": self.boundary.value,
            "controller_strategy": self.controller_strategy,
            "triage_step_cap": self.triage_step_cap,
            "repair_retries": self.repair_retries,
            "transcript_tail_turns": self.transcript_tail_turns,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SessionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown session config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "boundary" in kwargs:
            kwargs["boundary"] = BoundaryRule(kwargs["boundary"])
        return cls(**kwargs)


@dataclass
class SessionState:
    session_id: str
    config: SessionConfig
    round: int = 0
    status: SessionStatus = SessionStatus.ACTIVE
    active_group: TaskGroup | None = TaskGroup.T1
    pending: PendingTaskSet | None = None
    current_task: SubtaskId | None = None
    record: MedicalRecord = field(default_factory=MedicalRecord)
    transcript: DialogueTranscript = field(default_factory=DialogueTranscript)
    triage: TriagerOutput | None = None
    triage_history: list[TriagerOutput] = field(default_factory=list)
    triage_steps_used: int = 0
    t1_force_completed: bool = False
    per_group_rounds: dict[str, int] = field(default_factory=dict)
    trajectory: list[float] = field(default_factory=list)
    degradations: list[DegradationEvent] = field(default_factory=list)
    last_guidance: str = ""

    def completed_subtasks(self) -> int:
        """Finished subtasks across all groups; force-completed count as done."""
        total = sum(group.size for group in TaskGroup)
        if self.active_group is None or self.pending is None:
            return total
        remaining = len(self.pending)
        group = self.active_group.successor()
        while group is not None:
            remaining += group.size
            group = group.successor()
        return total - remaining

    def completion_fraction(self) -> float:
        return self.completed_subtasks() / sum(group.size for group in TaskGroup)

    def last_question(self) -> str:
        for turn in reversed(self.transcript.turns):
            if turn.role is Speaker.INQUIRER:
                return turn.text
        return ""


@dataclass(frozen=True)
class SessionOutcome:
    session_id: str
    status: SessionStatus
    rounds_used: int
    record: MedicalRecord
    transcript: DialogueTranscript
    triage: TriagerOutput | None
    triage_steps: tuple[TriagerOutput, ...]
    trajectory: tuple[float, ...]
    per_group_rounds: Mapping[str, int]
    t1_force_completed: bool
    degradations: tuple[DegradationEvent, ...]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "status": self.status.value,
            "rounds_used": self.rounds_used,
            "record": record_to_dict(self.record),
            "transcript": transcript_to_dict(self.transcript),
            "triage": self.triage.to_dict() if self.triage else None,
            "triage_steps": [t.to_dict() for t in self.triage_steps],
            "trajectory": list(self.trajectory),
            "per_group_rounds": dict(self.per_group_rounds),
            "t1_force_completed": self.t1_force_completed,
            "degradations": [d.to_dict() for d in self.degradations],
        }


class ConsultationEngine:
    """Drives one consultation session over a bound set of agent roles."""

    def __init__(self, roles: AgentRoles, config: SessionConfig | None = None):
        self.roles = roles
        self.config = config or SessionConfig()
        self.roles.settings.repair_retries = self.config.repair_retries
        self.roles.settings.transcript_tail_turns = self.config.transcript_tail_turns

    # -- lifecycle -------------------------------------------------------

    def start_session(self, session_id: str | None = None) -> SessionState:
        """Bootstrap: select the first focus subtask, ask the fixed opener."""
        state = SessionState(
            session_id=session_id or uuid.uuid4().hex[:12],
            config=self.config,
            pending=init_pending_set(
                self.roles.hierarchy,
                TaskGroup.T1,
                threshold=self.config.threshold,
                boundary=self.config.boundary,
            ),
        )
        decision = self.roles.controller_select(
            state.pending,
            state.record,
            state.transcript,
            self.config.controller_strategy,
            round=0,
            events=state.degradations,
        )
        state.current_task = decision.selected
        self._ask_question(state, self.roles.opening_question())
        return state

    def run_round(self, state: SessionState, patient_text: str) -> SessionState:
        """Process one patient reply; returns the successor state.

        Any failure leaves the input state untouched and raises a
        :class:`SessionError` whose ``retryable`` flag says whether replaying
        the same reply is worth attempting.
        """
        if state.status is not SessionStatus.ACTIVE:
            raise SessionError(
                f"session {state.session_id} is {state.status.value}, not active"
            )
        if not patient_text or not patient_text.strip():
            raise SessionError("patient reply must be non-empty")

        new = copy.deepcopy(state)
        try:
            self._process_reply(new, patient_text.strip())
        except SessionError:
            raise
        except (BackendUnavailableError, RoleParseError) as exc:
            raise SessionError(str(exc), retryable=True) from exc
        except (ScriptMissError, GatewayError, InputError) as exc:
            raise SessionError(str(exc), retryable=False) from exc
        return new

    # -- the round pipeline -----------------------------------------------

    def _process_reply(self, state: SessionState, patient_text: str) -> None:
        k = state.round
        state.transcript = append_turn(
            state.transcript, Turn(round=k, role=Speaker.PATIENT, text=patient_text)
        )
        state.record = self.roles.recipient_update(
            state.record, state.transcript, round=k, events=state.degradations
        )

        if state.active_group is TaskGroup.T1:
            self._triage_step(state, k)

        if state.pending is not None and not state.pending.empty:
            assessments = self.roles.monitor_assess(
                state.record, state.transcript, state.pending, round=k
            )
            state.pending = contract_pending_set(
                state.pending, {a.subtask: a.score for a in assessments}
            )

        self._advance_if_group_done(state)
        state.trajectory.append(state.completion_fraction())
        if state.status is not SessionStatus.ACTIVE:
            return

        if k >= state.config.max_rounds:
            state.status = SessionStatus.FAILED_INCOMPLETE
            state.current_task = None
            return

        decision = self.roles.controller_select(
            state.pending,
            state.record,
            state.transcript,
            state.config.controller_strategy,
            round=k,
            events=state.degradations,
        )
        state.current_task = decision.selected
        guidance = self.roles.prompter_compose(
            state.record, state.current_task, round=k, events=state.degradations
        )
        state.last_guidance = guidance
        question = self.roles.inquirer_ask(
            guidance, state.record, state.transcript, round=k
        )
        self._ask_question(state, question)

    def _triage_step(self, state: SessionState, k: int) -> None:
        """One Triager refinement; the step cap force-completes the group so
        department identification can never stall the whole consultation."""
        if state.triage_steps_used < state.config.triage_step_cap:
            state.triage = self.roles.triager_classify(state.record, state.triage, round=k)
            state.triage_history.append(state.triage)
            state.triage_steps_used += 1
        if (
            state.triage_steps_used >= state.config.triage_step_cap
            and state.pending is not None
            and not state.pending.empty
        ):
            state.pending = force_complete(state.pending)
            state.t1_force_completed = True

    def _advance_if_group_done(self, state: SessionState) -> None:
        if state.pending is None or not state.pending.empty:
            return
        successor = state.active_group.successor() if state.active_group else None
        if successor is None:
            state.status = SessionStatus.COMPLETED
            state.active_group = None
            state.pending = None
            state.current_task = None
            return
        state.active_group = successor
        state.pending = init_pending_set(
            self.roles.hierarchy,
            successor,
            threshold=state.config.threshold,
            boundary=state.config.boundary,
        )

    def _ask_question(self, state: SessionState, question: str) -> None:
        next_round = state.round + 1
        state.transcript = append_turn(
            state.transcript, Turn(round=next_round, role=Speaker.INQUIRER, text=question)
        )
        group_key = state.active_group.value if state.active_group else "done"
        state.per_group_rounds[group_key] = state.per_group_rounds.get(group_key, 0) + 1
        state.round = next_round

    # -- outcome ------------------------------------------------------------

    @staticmethod
    def outcome(state: SessionState) -> SessionOutcome:
        if state.status is SessionStatus.ACTIVE:
            raise SessionError("session is still active; no outcome yet")
        return SessionOutcome(
            session_id=state.session_id,
            status=state.status,
            rounds_used=state.round,
            record=state.record,
            transcript=state.transcript,
            triage=state.triage,
            triage_steps=tuple(state.triage_history),
            trajectory=tuple(state.trajectory),
            per_group_rounds=dict(state.per_group_rounds),
            t1_force_completed=state.t1_force_completed,
            degradations=tuple(state.degradations),
        )


def build_engine(
    backend_config,
    config: SessionConfig | None = None,
    *,
    template_dir=None,
    hierarchy=None,
    taxonomy=None,
) -> ConsultationEngine:
    """Wire gateway, assets, and roles into a ready engine."""
    from .gateway import LlmGateway
    from .roles import RoleSettings
    from .tasks import build_default_hierarchy
    from .triage import default_taxonomy

    config = config or SessionConfig()
    gateway = LlmGateway.from_config(backend_config)
    roles = AgentRoles(
        gateway,
        hierarchy or build_default_hierarchy(),
        taxonomy or default_taxonomy(),
        RoleSettings(
            repair_retries=config.repair_retries,
            transcript_tail_turns=config.transcript_tail_turns,
        ),
        template_dir=template_dir,
    )
    return ConsultationEngine(roles, config)


# --- checkpoint serialization ------------------------------------------------

def state_to_dict(state: SessionState) -> dict:
    return {
        "session_id": state.session_id,
        "config": state.config.to_dict(),
        "round": state.round,
        "status": state.status.value,
        "active_group": state.active_group.value if state.active_group else None,
        "pending": pending_to_dict(state.pending) if state.pending else None,
        "current_task": state.current_task.key if state.current_task else None,
        "record": record_to_dict(state.record),
        "transcript": transcript_to_dict(state.transcript),
        "triage": state.triage.to_dict() if state.triage else None,
        "triage_history": [t.to_dict() for t in state.triage_history],
        "triage_steps_used": state.triage_steps_used,
        "t1_force_completed": state.t1_force_completed,
        "per_group_rounds": dict(state.per_group_rounds),
        "trajectory": list(state.trajectory),
        "degradations": [d.to_dict() for d in state.degradations],
        "last_guidance": state.last_guidance,
    }


def state_from_dict(data: Mapping) -> SessionState:
    return SessionState(
        session_id=data["session_id"],
        config=SessionConfig.from_dict(data["config"]),
        round=data["round"],
        status=SessionStatus(data["status"]),
        active_group=TaskGroup(data["active_group"]) if data["active_group"] else None,
        pending=pending_from_dict(data["pending"]) if data["pending"] else None,
        current_task=(
            SubtaskId.from_key(data["current_task"]) if data["current_task"] else None
        ),
        record=record_from_dict(data["record"]),
        transcript=transcript_from_dict(data["transcript"]),
        triage=TriagerOutput.from_dict(data["triage"]) if data["triage"] else None,
        triage_history=[TriagerOutput.from_dict(t) for t in data["triage_history"]],
        triage_steps_used=data["triage_steps_used"],
        t1_force_completed=data["t1_force_completed"],
        per_group_rounds=dict(data["per_group_rounds"]),
        trajectory=list(data["trajectory"]),
        degradations=[
            DegradationEvent(**d) for d in data["degradations"]
        ],
        last_guidance=data.get("last_guidance", ""),
    )

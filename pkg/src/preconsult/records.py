"""Evolving medical record (CC / HPI / PH) and dialogue transcript.

Both carry full history: the record keeps one revision entry per field
change, the transcript keeps every turn. Replaying revisions from an empty
record reproduces the current field values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import InputError, OrderingError

RECORD_FIELDS = ("cc", "hpi", "ph")


class Speaker(str, Enum):
    INQUIRER = "inquirer"
    PATIENT = "patient"


@dataclass(frozen=True)
class Turn:
    round: int
    role: Speaker
    text: str

    def __post_init__(self):
        if self.round < 1:
            raise OrderingError("turn round must be >= 1")
        if not self.text.strip():
            raise InputError("turn text must be non-empty")
        object.__setattr__(self, "role", Speaker(self.role))


@dataclass(frozen=True)
class Revision:
    round: int
    field: str
    previous: str
    new: str


@dataclass(frozen=True)
class MedicalRecord:
    cc: str = ""
    hpi: str = ""
    ph: str = ""
    revisions: tuple[Revision, ...] = ()

    def value(self, field_name: str) -> str:
        return getattr(self, field_name)

    @property
    def last_round(self) -> int:
        """Round of the newest revision; 0 for a virgin record."""
        return self.revisions[-1].round if self.revisions else 0

    def is_empty(self) -> bool:
        return not (self.cc or self.hpi or self.ph)


@dataclass(frozen=True)
class DialogueTranscript:
    turns: tuple[Turn, ...] = ()

    def __len__(self) -> int:
        return len(self.turns)

    def last_patient_round(self) -> int:
        for turn in reversed(self.turns):
            if turn.role is Speaker.PATIENT:
                return turn.round
        return 0

    def tail(self, max_turns: int) -> tuple[Turn, ...]:
        if max_turns <= 0:
            return self.turns
        return self.turns[-max_turns:]


def append_turn(transcript: DialogueTranscript, turn: Turn) -> DialogueTranscript:
    """Extend the transcript by one turn, enforcing round ordering.

    Rounds never decrease, and within a round the inquirer question precedes
    the patient answer.
    """
    if transcript.turns:
        last = transcript.turns[-1]
        if turn.round < last.round:
            raise OrderingError(
                f"turn round {turn.round} precedes current round {last.round}"
            )
        if turn.round == last.round:
            if not (last.role is Speaker.INQUIRER and turn.role is Speaker.PATIENT):
                raise OrderingError(
                    f"round {turn.round} already has a {turn.role.value} turn"
                )
        elif turn.role is Speaker.PATIENT:
            raise OrderingError(
                f"round {turn.round} has no inquirer question to answer"
            )
    elif turn.role is Speaker.PATIENT:
        raise OrderingError("a round's inquirer turn must precede its patient turn")
    return DialogueTranscript(turns=transcript.turns + (turn,))


def apply_record_update(
    record: MedicalRecord, round: int, update: Mapping[str, str]
) -> MedicalRecord:
    """Replace record fields with the update, keeping history.

    One revision entry is appended per field whose text actually changed;
    unchanged fields leave no trace. ``round`` must be strictly newer than
    the last revision's round.
    """
    if round <= record.last_round:
        raise OrderingError(
            f"update round {round} is not after last revision round {record.last_round}"
        )
    unknown = set(update) - set(RECORD_FIELDS)
    if unknown:
        raise InputError(f"unknown record fields: {sorted(unknown)}")
    new_values = {f: record.value(f) for f in RECORD_FIELDS}
    revisions = list(record.revisions)
    for f in RECORD_FIELDS:
        if f not in update:
            continue
        new_text = str(update[f])
        if new_text != new_values[f]:
            revisions.append(Revision(round=round, field=f, previous=new_values[f], new=new_text))
            new_values[f] = new_text
    return MedicalRecord(revisions=tuple(revisions), **new_values)


def replay_revisions(revisions: Iterable[Revision]) -> MedicalRecord:
    """Rebuild a record from its revision history alone."""
    values = {f: "" for f in RECORD_FIELDS}
    replayed = []
    for rev in revisions:
        values[rev.field] = rev.new
        replayed.append(rev)
    return MedicalRecord(revisions=tuple(replayed), **values)


# --- JSON schema used by persistence, the service API, and the UI -----------

def record_to_dict(record: MedicalRecord) -> dict:
    return {
        "cc": record.cc,
        "hpi": record.hpi,
        "ph": record.ph,
        "revisions": [
            {"round": r.round, "field": r.field, "previous": r.previous, "new": r.new}
            for r in record.revisions
        ],
    }


def record_from_dict(data: Mapping) -> MedicalRecord:
    return MedicalRecord(
        cc=data.get("cc", ""),
        hpi=data.get("hpi", ""),
        ph=data.get("ph", ""),
        revisions=tuple(
            Revision(
                round=r["round"], field=r["field"], previous=r["previous"], new=r["new"]
            )
            for r in data.get("revisions", [])
        ),
    )


def transcript_to_dict(transcript: DialogueTranscript) -> dict:
    return {
        "turns": [
            {"round": t.round, "role": t.role.value, "text": t.text}
            for t in transcript.turns
        ]
    }


def transcript_from_dict(data: Mapping) -> DialogueTranscript:
    transcript = DialogueTranscript()
    for t in data.get("turns", []):
        transcript = append_turn(
            transcript, Turn(round=t["round"], role=Speaker(t["role"]), text=t["text"])
        )
    return transcript

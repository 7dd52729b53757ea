"""Hierarchical task model: the four task groups, 13 subtasks, and the
threshold-gated pending-set contraction that drives all scheduling.

Everything here is a pure value type; functions return new objects and are
safe to call from any thread.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, InputError, SchemaError

DEFAULT_THRESHOLD = 0.85

#: Number of subtasks each decomposable group carries. The chief-complaint
#: group is continuous and never decomposed, so it has no entry.
GROUP_SIZES = {"T1": 2, "T2": 6, "T3": 5}


class TaskGroup(str, Enum):
    """The three decomposable task groups, in clinical execution order."""

    T1 = "T1"  # department triage
    T2 = "T2"  # history of present illness
    T3 = "T3"  # past history

    @property
    def order(self) -> int:
        return int(self.value[1])

    @property
    def size(self) -> int:
        return GROUP_SIZES[self.value]

    def successor(self) -> "TaskGroup | None":
        seq = [TaskGroup.T1, TaskGroup.T2, TaskGroup.T3]
        i = seq.index(self)
        return seq[i + 1] if i + 1 < len(seq) else None


class BoundaryRule(str, Enum):
    """What happens to a subtask whose combined score lands exactly on the
    threshold.

    ``complete_at_threshold`` retains a subtask only while its score is
    strictly below the threshold, so hitting the threshold completes it.
    ``pending_at_threshold`` keeps it pending until the score strictly
    exceeds the threshold.
    """

    COMPLETE_AT_THRESHOLD = "complete_at_threshold"
    PENDING_AT_THRESHOLD = "pending_at_threshold"


@dataclass(frozen=True, order=True)
class SubtaskId:
    """Identifier of one domain subtask: group plus 1-based index."""

    group: TaskGroup
    index: int

    def __post_init__(self):
        if not isinstance(self.group, TaskGroup):
            object.__setattr__(self, "group", TaskGroup(self.group))
        size = self.group.size
        if not 1 <= self.index <= size:
            raise InputError(
                f"subtask index {self.index} out of range 1..{size} for {self.group.value}"
            )

    @property
    def key(self) -> str:
        """Compact form used in prompts and wire payloads, e.g. ``t21``."""
        return f"t{self.group.order}{self.index}"

    @classmethod
    def from_key(cls, key: str) -> "SubtaskId":
        key = key.strip().lower()
        if len(key) != 3 or key[0] != "t" or not key[1:].isdigit():
            raise InputError(f"malformed subtask key {key!r}")
        group = TaskGroup(f"T{key[1]}")
        return cls(group, int(key[2]))

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.key


@dataclass(frozen=True)
class Subtask:
    """One domain subtask with its clinical priority position."""

    id: SubtaskId
    name: str
    description: str
    default_rank: int

    def __post_init__(self):
        if self.default_rank < 1:
            raise InputError("default_rank must be >= 1")
        if not self.name:
            raise InputError("subtask name must be non-empty")


@dataclass(frozen=True)
class TaskHierarchy:
    """The 13 decomposed subtasks plus the marker for the continuous
    chief-complaint task handled by the Recipient every round."""

    groups: Mapping[TaskGroup, tuple[Subtask, ...]]
    cc_task_name: str = "Chief Complaint Generation"

    def __post_init__(self):
        total = 0
        for group in TaskGroup:
            subtasks = self.groups.get(group, ())
            if len(subtasks) != group.size:
                raise SchemaError(
                    f"{group.value} must carry exactly {group.size} subtasks, got {len(subtasks)}"
                )
            ranks = sorted(s.default_rank for s in subtasks)
            if ranks != list(range(1, group.size + 1)):
                raise SchemaError(f"{group.value} ranks must be a permutation of 1..{group.size}")
            for s in subtasks:
                if s.id.group is not group:
                    raise SchemaError(f"subtask {s.id.key} listed under wrong group {group.value}")
            total += len(subtasks)
        if total != 13:
            raise SchemaError(f"hierarchy must hold exactly 13 subtasks, got {total}")

    def subtasks(self, group: TaskGroup) -> tuple[Subtask, ...]:
        return self.groups[group]

    def all_subtasks(self) -> tuple[Subtask, ...]:
        return tuple(s for g in TaskGroup for s in self.groups[g])

    def subtask(self, sid: SubtaskId) -> Subtask:
        for s in self.groups[sid.group]:
            if s.id == sid:
                return s
        raise InputError(f"unknown subtask {sid.key}")

    @property
    def total_subtasks(self) -> int:
        return 13


@dataclass(frozen=True)
class CompletionScore:
    """Monitor verdict for one subtask on the two assessment dimensions."""

    validity: float
    completeness: float

    def __post_init__(self):
        for name in ("validity", "completeness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must be in [0, 1], got {v}")

    @property
    def combined(self) -> float:
        """Arithmetic mean of the two dimensions."""
        return (self.validity + self.completeness) / 2.0


@dataclass(frozen=True)
class PendingTaskSet:
    """Unfinished subtasks of one group with their latest scores.

    A removed subtask leaves a tombstone in ``removed`` and can never be
    re-inserted for the same session and group; contraction only ever
    filters.
    """

    group: TaskGroup
    entries: Mapping[SubtaskId, CompletionScore | None]
    threshold: float = DEFAULT_THRESHOLD
    boundary: BoundaryRule = BoundaryRule.COMPLETE_AT_THRESHOLD
    removed: frozenset[SubtaskId] = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        object.__setattr__(self, "entries", dict(self.entries))
        object.__setattr__(self, "boundary", BoundaryRule(self.boundary))
        for sid in self.entries:
            if sid.group is not self.group:
                raise InputError(f"{sid.key} does not belong to group {self.group.value}")
            if sid in self.removed:
                raise InputError(f"{sid.key} was removed earlier and cannot be re-inserted")

    def __contains__(self, sid: SubtaskId) -> bool:
        return sid in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[SubtaskId, ...]:
        return tuple(sorted(self.entries))

    @property
    def empty(self) -> bool:
        """A group is complete exactly when its pending set is empty."""
        return not self.entries

    def is_retained(self, score: CompletionScore) -> bool:
        if self.boundary is BoundaryRule.COMPLETE_AT_THRESHOLD:
            return score.combined < self.threshold
        return score.combined <= self.threshold


def build_default_hierarchy() -> TaskHierarchy:
    """The canonical 13-subtask pre-consultation hierarchy.

    Names, descriptions, and the clinical default order ship as a package
    asset so alternative decompositions can be tested from a file with the
    same schema.
    """
    return load_hierarchy(_asset_path("hierarchy.json"))


def load_hierarchy(source: str | Path) -> TaskHierarchy:
    """Load a task hierarchy from a JSON file (same schema as the default)."""
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read hierarchy file {path}: {exc}") from exc
    if not isinstance(data, dict) or "groups" not in data:
        raise SchemaError("hierarchy file must be an object with a 'groups' key")
    groups: dict[TaskGroup, tuple[Subtask, ...]] = {}
    for group in TaskGroup:
        raw = data["groups"].get(group.value)
        if raw is None:
            raise SchemaError(f"hierarchy file missing group {group.value}")
        subtasks = []
        for item in raw:
            try:
                subtasks.append(
                    Subtask(
                        id=SubtaskId(group, int(item["index"])),
                        name=str(item["name"]),
                        description=str(item["description"]),
                        default_rank=int(item["rank"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad subtask entry in {group.value}: {exc}") from exc
        groups[group] = tuple(subtasks)
    return TaskHierarchy(groups=groups, cc_task_name=data.get("cc_task", "Chief Complaint Generation"))


def init_pending_set(
    hierarchy: TaskHierarchy,
    group: TaskGroup,
    threshold: float = DEFAULT_THRESHOLD,
    boundary: BoundaryRule = BoundaryRule.COMPLETE_AT_THRESHOLD,
) -> PendingTaskSet:
    """Fresh pending set on group entry: every subtask of the group, unscored."""
    group = TaskGroup(group)
    return PendingTaskSet(
        group=group,
        entries={s.id: None for s in hierarchy.subtasks(group)},
        threshold=threshold,
        boundary=boundary,
    )


def contract_pending_set(
    pending: PendingTaskSet, assessments: Mapping[SubtaskId, CompletionScore]
) -> PendingTaskSet:
    """Apply one round of threshold gating.

    Assessed subtasks whose combined score clears the threshold are removed
    (tombstoned); retained ones carry their new score. Subtasks absent from
    ``assessments`` are kept unchanged. The result is always a subset of the
    input.
    """
    for sid in assessments:
        if sid not in pending:
            raise InputError(f"assessment for {sid.key} which is not pending")
    entries: dict[SubtaskId, CompletionScore | None] = {}
    dropped: set[SubtaskId] = set()
    for sid, score in pending.entries.items():
        if sid in assessments:
            new_score = assessments[sid]
            if pending.is_retained(new_score):
                entries[sid] = new_score
            else:
                dropped.add(sid)
        else:
            entries[sid] = score
    return replace(pending, entries=entries, removed=pending.removed | frozenset(dropped))


def force_complete(pending: PendingTaskSet) -> PendingTaskSet:
    """Tombstone every remaining subtask, emptying the set."""
    return replace(
        pending, entries={}, removed=pending.removed | frozenset(pending.entries)
    )


# --- serialization -----------------------------------------------------------

def pending_to_dict(pending: PendingTaskSet) -> dict:
    return {
        "group": pending.group.value,
        "threshold": pending.threshold,
        "boundary": pending.boundary.value,
        "entries": {
            sid.key: (
                None
                if score is None
                else {"validity": score.validity, "completeness": score.completeness}
            )
            for sid, score in sorted(pending.entries.items())
        },
        "removed": sorted(sid.key for sid in pending.removed),
    }


def pending_from_dict(data: Mapping) -> PendingTaskSet:
    return PendingTaskSet(
        group=TaskGroup(data["group"]),
        entries={
            SubtaskId.from_key(k): (None if v is None else CompletionScore(**v))
            for k, v in data["entries"].items()
        },
        threshold=data["threshold"],
        boundary=BoundaryRule(data["boundary"]),
        removed=frozenset(SubtaskId.from_key(k) for k in data["removed"]),
    )


def _asset_path(name: str) -> Path:
    return Path(__file__).parent / "assets" / name

"""Department taxonomy and triage accuracy metrics.

The taxonomy is a two-level tree: primary departments with secondary
sub-specialties, each secondary owned by exactly one primary. Matching is
exact string equality after canonical normalization (trim + case-fold).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import InputError, SchemaError


def _canon(name: str) -> str:
    return " ".join(name.strip().split()).casefold()


@dataclass(frozen=True)
class DepartmentTaxonomy:
    primaries: tuple[str, ...]
    children: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        if not self.primaries:
            raise SchemaError("taxonomy must define at least one primary department")
        if len({_canon(p) for p in self.primaries}) != len(self.primaries):
            raise SchemaError("duplicate primary department names")
        object.__setattr__(self, "children", {p: tuple(v) for p, v in self.children.items()})
        seen: dict[str, str] = {}
        for primary, secondaries in self.children.items():
            if primary not in self.primaries:
                raise SchemaError(f"children listed under unknown primary {primary!r}")
            for s in secondaries:
                key = _canon(s)
                if key in seen:
                    raise SchemaError(f"secondary {s!r} listed under both {seen[key]!r} and {primary!r}")
                seen[key] = primary

    @property
    def secondaries(self) -> tuple[str, ...]:
        return tuple(s for p in self.primaries for s in self.children.get(p, ()))

    def canonical_primary(self, name: str) -> str:
        key = _canon(name)
        for p in self.primaries:
            if _canon(p) == key:
                return p
        raise InputError(f"unknown primary department {name!r}")

    def canonical_secondary(self, name: str) -> str:
        key = _canon(name)
        for s in self.secondaries:
            if _canon(s) == key:
                return s
        raise InputError(f"unknown secondary department {name!r}")

    def parent_of(self, secondary: str) -> str:
        canonical = self.canonical_secondary(secondary)
        for primary, secondaries in self.children.items():
            if canonical in secondaries:
                return primary
        raise InputError(f"unknown secondary department {secondary!r}")

    def describe(self) -> str:
        """Plain-text rendering used inside triager prompts."""
        lines = []
        for p in self.primaries:
            subs = ", ".join(self.children.get(p, ()))
            lines.append(f"- {p}: {subs}" if subs else f"- {p}")
        return "\n".join(lines)


def load_taxonomy(source: str | Path) -> DepartmentTaxonomy:
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read taxonomy file {path}: {exc}") from exc
    if not isinstance(data, dict) or "departments" not in data:
        raise SchemaError("taxonomy file must be an object with a 'departments' key")
    primaries = []
    children = {}
    for entry in data["departments"]:
        try:
            name = str(entry["primary"])
            secondaries = [str(s) for s in entry.get("secondaries", [])]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad taxonomy entry: {exc}") from exc
        primaries.append(name)
        children[name] = tuple(secondaries)
    return DepartmentTaxonomy(primaries=tuple(primaries), children=children)


def default_taxonomy() -> DepartmentTaxonomy:
    """Bundled English default: 9 primary departments, 35 sub-specialties."""
    return load_taxonomy(Path(__file__).parent / "assets" / "taxonomy.json")


@dataclass(frozen=True)
class TriageEvaluation:
    per_step_primary_accuracy: tuple[float, ...]
    per_step_secondary_accuracy: tuple[float, ...]
    per_department_accuracy: Mapping[str, float]
    confusion: Mapping[tuple[str, str], int]
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "per_step_primary_accuracy": list(self.per_step_primary_accuracy),
            "per_step_secondary_accuracy": list(self.per_step_secondary_accuracy),
            "per_department_accuracy": dict(self.per_department_accuracy),
            "confusion": [
                {"truth": t, "predicted": p, "count": c}
                for (t, p), c in sorted(self.confusion.items())
            ],
            "sample_count": self.sample_count,
        }


def score_triage(
    predictions: Sequence[Sequence[tuple[str, str]]],
    truths: Sequence[tuple[str, str]],
    taxonomy: DepartmentTaxonomy,
) -> TriageEvaluation:
    """Exact-match accuracy per refinement step and level.

    ``predictions[i]`` is case *i*'s per-step ``(primary, secondary)``
    sequence; a case that stopped refining early is carried forward at its
    final prediction. The two accuracy levels are computed independently:
    secondary correctness never implies or requires primary correctness.
    The confusion matrix is taken from the final step at the primary level.
    """
    if len(predictions) != len(truths):
        raise InputError(
            f"predictions ({len(predictions)}) and truths ({len(truths)}) differ in length"
        )
    if not predictions:
        raise InputError("empty prediction set")
    for steps in predictions:
        if not steps:
            raise InputError("every case needs at least one prediction step")

    norm_truths = [
        (taxonomy.canonical_primary(p), taxonomy.canonical_secondary(s)) for p, s in truths
    ]
    norm_predictions = [
        [(taxonomy.canonical_primary(p), taxonomy.canonical_secondary(s)) for p, s in steps]
        for steps in predictions
    ]

    max_steps = max(len(steps) for steps in norm_predictions)
    primary_acc = []
    secondary_acc = []
    n = len(norm_truths)
    for step in range(max_steps):
        p_hits = 0
        s_hits = 0
        for steps, (tp, ts) in zip(norm_predictions, norm_truths):
            pp, ps = steps[min(step, len(steps) - 1)]
            p_hits += pp == tp
            s_hits += ps == ts
        primary_acc.append(p_hits / n)
        secondary_acc.append(s_hits / n)

    confusion: dict[tuple[str, str], int] = {}
    dept_hits: dict[str, int] = {}
    dept_totals: dict[str, int] = {}
    for steps, (tp, _) in zip(norm_predictions, norm_truths):
        pp, _ = steps[-1]
        confusion[(tp, pp)] = confusion.get((tp, pp), 0) + 1
        dept_totals[tp] = dept_totals.get(tp, 0) + 1
        dept_hits[tp] = dept_hits.get(tp, 0) + (pp == tp)
    per_department = {d: dept_hits[d] / dept_totals[d] for d in dept_totals}

    return TriageEvaluation(
        per_step_primary_accuracy=tuple(primary_acc),
        per_step_secondary_accuracy=tuple(secondary_acc),
        per_department_accuracy=per_department,
        confusion=confusion,
        sample_count=n,
    )


def format_triage_table(evaluation: TriageEvaluation) -> str:
    """Step-by-level accuracy as a plain-text table."""
    lines = [
        f"{'Iteration Step':<16}{'Primary Department':>20}{'Secondary Department':>22}",
        "-" * 58,
    ]
    for i, (p, s) in enumerate(
        zip(evaluation.per_step_primary_accuracy, evaluation.per_step_secondary_accuracy), 1
    ):
        lines.append(f"{'Step ' + str(i):<16}{p * 100:>19.1f}%{s * 100:>21.1f}%")
    return "\n".join(lines)

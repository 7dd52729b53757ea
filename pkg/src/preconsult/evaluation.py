"""Post-hoc quality judging on a seven-dimension 0-5 rubric.

Interaction dimensions (CI, CQ, IC, OP) are scored from the dialogue
transcript alone; content dimensions (CCS, HPIS, PHS) from the generated
record against a reference standard. The judge never sees material outside
its dimension family, so a contaminated record cannot sway interaction
scores and vice versa.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EvaluationError, InputError, RoleParseError
from .gateway import LlmGateway
from .records import DialogueTranscript, MedicalRecord
from .roles import (
    PromptLibrary,
    _ParseFailure,
    extract_json_object,
    render_record,
    render_template,
    render_transcript,
    structured_ask,
)

INTERACTION_CODES = ("CI", "CQ", "IC", "OP")
CONTENT_CODES = ("CCS", "HPIS", "PHS")

SCORE_MIN, SCORE_MAX = 0, 5


@dataclass(frozen=True)
class RubricDimension:
    code: str
    name: str
    description: str
    anchors: Mapping[int, str]

    def __post_init__(self):
        bad = [lvl for lvl in self.anchors if not SCORE_MIN <= lvl <= SCORE_MAX]
        if bad:
            raise InputError(f"{self.code}: anchor levels {bad} outside {SCORE_MIN}..{SCORE_MAX}")


@dataclass(frozen=True)
class RubricSpec:
    dimensions: tuple[RubricDimension, ...]

    def __post_init__(self):
        codes = [d.code for d in self.dimensions]
        if len(set(codes)) != len(codes):
            raise InputError("duplicate rubric dimension codes")
        missing = set(INTERACTION_CODES + CONTENT_CODES) - set(codes)
        if missing:
            raise InputError(f"rubric is missing dimensions: {sorted(missing)}")

    def dimension(self, code: str) -> RubricDimension:
        for dim in self.dimensions:
            if dim.code == code:
                return dim
        raise InputError(f"unknown rubric dimension {code!r}")

    def subset(self, codes: Iterable[str]) -> tuple[RubricDimension, ...]:
        return tuple(self.dimension(c) for c in codes)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(d.code for d in self.dimensions)


def load_rubric(source: str | Path | None = None) -> RubricSpec:
    path = Path(source) if source else Path(__file__).parent / "assets" / "rubric.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    dims = []
    for entry in data["dimensions"]:
        dims.append(
            RubricDimension(
                code=entry["code"],
                name=entry["name"],
                description=entry["description"],
                anchors={int(level): text for level, text in entry["anchors"].items()},
            )
        )
    return RubricSpec(dimensions=tuple(dims))


@dataclass(frozen=True)
class DimensionScore:
    code: str
    score: int
    rationale: str = ""

    def __post_init__(self):
        if not isinstance(self.score, int) or not SCORE_MIN <= self.score <= SCORE_MAX:
            raise InputError(
                f"{self.code}: score must be an integer in {SCORE_MIN}..{SCORE_MAX}, "
                f"got {self.score!r}"
            )


@dataclass(frozen=True)
class EvaluationReport:
    session_id: str
    scores: Mapping[str, DimensionScore]

    def __post_init__(self):
        for code, entry in self.scores.items():
            if entry.code != code:
                raise InputError(f"score keyed {code!r} carries code {entry.code!r}")

    def score(self, code: str) -> int:
        return self.scores[code].score

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "scores": {
                code: {"score": s.score, "rationale": s.rationale}
                for code, s in self.scores.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvaluationReport":
        return cls(
            session_id=data["session_id"],
            scores={
                code: DimensionScore(code=code, score=int(e["score"]), rationale=e.get("rationale", ""))
                for code, e in data["scores"].items()
            },
        )


def render_rubric_block(dimensions: Iterable[RubricDimension]) -> str:
    lines = []
    for dim in dimensions:
        lines.append(f"{dim.code} ({dim.name}): {dim.description}")
        for level in sorted(dim.anchors):
            lines.append(f"  score {level}: {dim.anchors[level]}")
    return "\n".join(lines)


def _parse_scores(expected: tuple[str, ...]):
    def parse(text: str) -> dict[str, DimensionScore]:
        data = extract_json_object(text)
        if not isinstance(data, dict):
            raise _ParseFailure("expected a JSON object keyed by dimension code")
        missing = sorted(set(expected) - set(data))
        if missing:
            raise _ParseFailure(f"missing dimensions: {', '.join(missing)}")
        extra = sorted(set(data) - set(expected))
        if extra:
            raise _ParseFailure(f"unexpected dimensions: {', '.join(extra)}")
        out = {}
        for code in expected:
            entry = data[code]
            if not isinstance(entry, dict) or "score" not in entry:
                raise _ParseFailure(f'{code} must be {{"score": <0..5>, "rationale": "..."}}')
            raw = entry["score"]
            if isinstance(raw, bool) or not isinstance(raw, (int, float)) or raw != int(raw):
                raise _ParseFailure(f"{code}: score must be a whole number, got {raw!r}")
            score = int(raw)
            if not SCORE_MIN <= score <= SCORE_MAX:
                raise _ParseFailure(f"{code}: score {score} outside {SCORE_MIN}..{SCORE_MAX}")
            out[code] = DimensionScore(
                code=code, score=score, rationale=str(entry.get("rationale", ""))
            )
        return out

    return parse


def _reference_fields(reference) -> MedicalRecord:
    if isinstance(reference, MedicalRecord):
        return reference
    if isinstance(reference, Mapping):
        return MedicalRecord(
            cc=str(reference.get("cc", "")),
            hpi=str(reference.get("hpi", "")),
            ph=str(reference.get("ph", "")),
        )
    return MedicalRecord(
        cc=getattr(reference, "cc", ""),
        hpi=getattr(reference, "hpi", ""),
        ph=getattr(reference, "ph", ""),
    )


def evaluate_session(
    gateway: LlmGateway,
    *,
    session_id: str,
    transcript: DialogueTranscript,
    record: MedicalRecord,
    reference,
    rubric: RubricSpec | None = None,
    repair_retries: int = 1,
    temperature: float = 0.0,
    max_tokens: int = 2048,
    template_dir: str | Path | None = None,
) -> EvaluationReport:
    """Run the two judge calls and assemble one report.

    Unusable judge output (after one repair retry per call) aborts with
    :class:`EvaluationError`; out-of-range scores are rejected, never clamped.
    """
    rubric = rubric or load_rubric()
    prompts = PromptLibrary(template_dir)
    reference_record = _reference_fields(reference)

    def ask(kind: str, codes: tuple[str, ...], user: str) -> dict[str, DimensionScore]:
        try:
            reply = structured_ask(
                gateway,
                "evaluator",
                prompts.get(f"evaluator_{kind}_system"),
                user,
                _parse_scores(codes),
                temperature=temperature,
                max_tokens=max_tokens,
                repair_retries=repair_retries,
            )
        except RoleParseError as exc:
            raise EvaluationError(
                f"{kind} judging failed for session {session_id}: {exc.reason}"
            ) from exc
        return reply.parsed_payload

    interaction_user = render_template(
        prompts.get("evaluator_interaction_user"),
        rubric_block=render_rubric_block(rubric.subset(INTERACTION_CODES)),
        transcript=render_transcript(transcript),
    )
    content_user = render_template(
        prompts.get("evaluator_content_user"),
        rubric_block=render_rubric_block(rubric.subset(CONTENT_CODES)),
        record=render_record(record),
        reference_record=render_record(reference_record),
    )

    scores = {}
    scores.update(ask("interaction", INTERACTION_CODES, interaction_user))
    scores.update(ask("content", CONTENT_CODES, content_user))
    return EvaluationReport(session_id=session_id, scores=scores)


# --- aggregation ---------------------------------------------------------------

@dataclass(frozen=True)
class DimensionSummary:
    code: str
    mean: float
    stdev: float  # population standard deviation
    count: int


@dataclass(frozen=True)
class ScoreSummary:
    dimensions: tuple[DimensionSummary, ...]
    overall_mean: float

    def dimension(self, code: str) -> DimensionSummary:
        for dim in self.dimensions:
            if dim.code == code:
                return dim
        raise InputError(f"no summary for dimension {code!r}")

    def to_dict(self) -> dict:
        return {
            "dimensions": {
                d.code: {"mean": d.mean, "stdev": d.stdev, "count": d.count}
                for d in self.dimensions
            },
            "overall_mean": self.overall_mean,
        }


def aggregate_reports(reports: Iterable[EvaluationReport]) -> ScoreSummary:
    """Per-dimension mean and population standard deviation, plus the
    unweighted mean of dimension means."""
    reports = list(reports)
    if not reports:
        raise InputError("no reports to aggregate")
    codes = tuple(reports[0].scores.keys())
    for report in reports:
        if tuple(report.scores.keys()) != codes:
            raise InputError(
                f"report {report.session_id} has mismatched dimensions"
            )
    summaries = []
    for code in codes:
        values = [r.score(code) for r in reports]
        summaries.append(
            DimensionSummary(
                code=code,
                mean=statistics.mean(values),
                stdev=statistics.pstdev(values),
                count=len(values),
            )
        )
    overall = statistics.mean(s.mean for s in summaries)
    return ScoreSummary(dimensions=tuple(summaries), overall_mean=overall)

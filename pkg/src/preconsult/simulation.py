"""EHR-grounded virtual patient and the batch simulation harness.

A batch runs each EHR case through a full consultation in a worker thread,
isolates per-case failures, and aggregates in dataset order so the report
is identical at any parallelism level.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import EvaluationError, InputError, PreconsultError, RoleParseError
from .evaluation import (
    EvaluationReport,
    RubricSpec,
    ScoreSummary,
    aggregate_reports,
    evaluate_session,
    load_rubric,
)
from .gateway import LlmGateway
from .orchestrator import (
    ConsultationEngine,
    SessionConfig,
    SessionOutcome,
    SessionStatus,
)
from .records import DialogueTranscript
from .roles import (
    PromptLibrary,
    _ParseFailure,
    render_template,
    render_transcript,
    structured_ask,
)
from .triage import DepartmentTaxonomy, TriageEvaluation, score_triage

logger = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1

PATIENT_FALLBACK_REPLY = "No."


@dataclass(frozen=True)
class EhrRecord:
    """One reference case: ground-truth documentation plus triage labels."""

    case_id: str
    cc: str
    hpi: str
    ph: str
    primary_dept: str = ""
    secondary_dept: str = ""

    def __post_init__(self):
        if not self.case_id:
            raise InputError("case_id must be non-empty")
        if not self.cc:
            raise InputError(f"{self.case_id}: cc must be non-empty")

    @property
    def has_triage_truth(self) -> bool:
        return bool(self.primary_dept and self.secondary_dept)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "cc": self.cc,
            "hpi": self.hpi,
            "ph": self.ph,
            "primary_dept": self.primary_dept,
            "secondary_dept": self.secondary_dept,
        }


def load_dataset(source: str | Path) -> list[EhrRecord]:
    """Read a JSONL case file: a schema header line, then one case per line.

    Malformed lines abort with their 1-based line number; silent skipping
    would bias batch metrics.
    """
    path = Path(source)
    records: list[EhrRecord] = []
    seen: set[str] = set()
    header_seen = False
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path.name}:{lineno}: invalid JSON ({exc})") from exc
            if not header_seen:
                header_seen = True
                version = data.get("schema_version")
                if version != DATASET_SCHEMA_VERSION:
                    raise InputError(
                        f"{path.name}:{lineno}: expected schema_version "
                        f"{DATASET_SCHEMA_VERSION}, got {version!r}"
                    )
                continue
            try:
                record = EhrRecord(
                    case_id=str(data["case_id"]),
                    cc=str(data["cc"]),
                    hpi=str(data.get("hpi", "")),
                    ph=str(data.get("ph", "")),
                    primary_dept=str(data.get("primary_dept", "")),
                    secondary_dept=str(data.get("secondary_dept", "")),
                )
            except KeyError as exc:
                raise InputError(f"{path.name}:{lineno}: missing field {exc}") from exc
            except PreconsultError as exc:
                raise InputError(f"{path.name}:{lineno}: {exc}") from exc
            if record.case_id in seen:
                raise InputError(f"{path.name}:{lineno}: duplicate case_id {record.case_id!r}")
            seen.add(record.case_id)
            records.append(record)
    if not header_seen:
        raise InputError(f"{path.name}: empty dataset")
    return records


def write_dataset(records: Iterable[EhrRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": DATASET_SCHEMA_VERSION}) + "\n")
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def default_dataset_path() -> Path:
    return Path(__file__).parent / "assets" / "demo_cases.jsonl"


# --- virtual patient ----------------------------------------------------------

def virtual_patient_reply(
    gateway: LlmGateway,
    ehr: EhrRecord,
    question: str,
    transcript: DialogueTranscript,
    *,
    temperature: float = 0.7,
    repair_retries: int = 1,
    max_tokens: int = 512,
    template_dir: str | Path | None = None,
) -> str:
    """Answer one question strictly from the EHR.

    An unusable reply degrades to a flat denial; a patient with nothing to
    say must not abort the consultation.
    """
    if not question.strip():
        raise InputError("question must be non-empty")
    prompts = PromptLibrary(template_dir)
    system = render_template(
        prompts.get("virtual_patient_system"),
        ehr_cc=ehr.cc,
        ehr_hpi=ehr.hpi,
        ehr_ph=ehr.ph,
    )
    user = render_template(
        prompts.get("virtual_patient_user"),
        transcript_tail=render_transcript(transcript, 8),
        question=question,
    )

    def parse(text: str) -> str:
        reply = text.strip()
        if not reply:
            raise _ParseFailure("empty patient reply")
        return reply

    try:
        return structured_ask(
            gateway,
            "virtual_patient",
            system,
            user,
            parse,
            temperature=temperature,
            max_tokens=max_tokens,
            repair_retries=repair_retries,
            structured=False,
        ).parsed_payload
    except RoleParseError:
        return PATIENT_FALLBACK_REPLY


# --- batch harness ---------------------------------------------------------------

@dataclass(frozen=True)
class SessionSummary:
    case_id: str
    outcome: SessionOutcome | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is not None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "outcome": self.outcome.to_dict() if self.outcome else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class BatchReport:
    n_cases: int
    completed: int
    failed_incomplete: int
    errors: Mapping[str, str]
    avg_rounds: float
    completion_curve: tuple[float, ...]
    summaries: tuple[SessionSummary, ...]
    triage_eval: TriageEvaluation | None = None
    score_summary: ScoreSummary | None = None
    evaluations: tuple[EvaluationReport, ...] = ()

    @property
    def failures(self) -> int:
        """Sessions that did not complete: round-cap failures plus errors."""
        return self.failed_incomplete + len(self.errors)

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "completed": self.completed,
            "failed_incomplete": self.failed_incomplete,
            "failures": self.failures,
            "errors": dict(self.errors),
            "avg_rounds": self.avg_rounds,
            "completion_curve": list(self.completion_curve),
            "triage_eval": self.triage_eval.to_dict() if self.triage_eval else None,
            "score_summary": self.score_summary.to_dict() if self.score_summary else None,
            "evaluations": [e.to_dict() for e in self.evaluations],
            "summaries": [s.to_dict() for s in self.summaries],
        }


def run_case(
    engine: ConsultationEngine,
    gateway: LlmGateway,
    ehr: EhrRecord,
    *,
    template_dir: str | Path | None = None,
) -> SessionOutcome:
    """Drive one case to a terminal status."""
    state = engine.start_session(session_id=ehr.case_id)
    while state.status is SessionStatus.ACTIVE:
        question = state.last_question()
        reply = virtual_patient_reply(
            gateway,
            ehr,
            question,
            state.transcript,
            repair_retries=engine.config.repair_retries,
            template_dir=template_dir,
        )
        state = engine.run_round(state, reply)
    return ConsultationEngine.outcome(state)


def extend_curve(trajectory: Sequence[float], length: int) -> list[float]:
    """Pad a completion trajectory to ``length`` by holding its final value."""
    if not trajectory:
        return [0.0] * length
    padded = list(trajectory[:length])
    padded.extend([trajectory[-1]] * (length - len(padded)))
    return padded


def run_batch(
    engine: ConsultationEngine,
    dataset: Sequence[EhrRecord],
    *,
    parallelism: int = 1,
    evaluate: bool = False,
    evaluator_gateway: LlmGateway | None = None,
    rubric: RubricSpec | None = None,
    patient_gateway: LlmGateway | None = None,
    template_dir: str | Path | None = None,
) -> BatchReport:
    """Run every case, tolerating per-case errors, and aggregate.

    Aggregation happens in dataset order after all workers finish, so the
    report does not depend on scheduling; ``parallelism`` only changes wall
    time.
    """
    if not dataset:
        raise InputError("empty dataset")
    if parallelism < 1:
        raise InputError("parallelism must be >= 1")
    gateway = patient_gateway or engine.roles.gateway

    def worker(ehr: EhrRecord) -> SessionSummary:
        try:
            outcome = run_case(engine, gateway, ehr, template_dir=template_dir)
            return SessionSummary(case_id=ehr.case_id, outcome=outcome)
        except PreconsultError as exc:
            logger.warning("case %s errored: %s", ehr.case_id, exc)
            return SessionSummary(case_id=ehr.case_id, outcome=None, error=str(exc))

    if parallelism == 1:
        summaries = [worker(ehr) for ehr in dataset]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            summaries = list(pool.map(worker, dataset))

    completed = sum(
        1 for s in summaries if s.ok and s.outcome.status is SessionStatus.COMPLETED
    )
    failed = sum(
        1
        for s in summaries
        if s.ok and s.outcome.status is SessionStatus.FAILED_INCOMPLETE
    )
    errors = {s.case_id: s.error for s in summaries if not s.ok}

    terminal = [s.outcome for s in summaries if s.ok]
    avg_rounds = (
        sum(o.rounds_used for o in terminal) / len(terminal) if terminal else 0.0
    )

    max_rounds = engine.config.max_rounds
    curve: tuple[float, ...] = ()
    if terminal:
        padded = [extend_curve(o.trajectory, max_rounds) for o in terminal]
        curve = tuple(
            sum(p[i] for p in padded) / len(padded) for i in range(max_rounds)
        )

    triage_eval = None
    by_case = {ehr.case_id: ehr for ehr in dataset}
    triage_predictions = []
    triage_truths = []
    for summary in summaries:
        if not summary.ok or not summary.outcome.triage_steps:
            continue
        ehr = by_case[summary.case_id]
        if not ehr.has_triage_truth:
            continue
        triage_predictions.append([t.top() for t in summary.outcome.triage_steps])
        triage_truths.append((ehr.primary_dept, ehr.secondary_dept))
    if triage_truths:
        triage_eval = score_triage(
            triage_predictions, triage_truths, engine.roles.taxonomy
        )

    score_summary = None
    evaluations: tuple[EvaluationReport, ...] = ()
    if evaluate:
        judge = evaluator_gateway or gateway
        rubric = rubric or load_rubric()
        reports = []
        for summary in summaries:
            if not summary.ok:
                continue
            ehr = by_case[summary.case_id]
            try:
                reports.append(
                    evaluate_session(
                        judge,
                        session_id=summary.case_id,
                        transcript=summary.outcome.transcript,
                        record=summary.outcome.record,
                        reference=ehr,
                        rubric=rubric,
                        repair_retries=engine.config.repair_retries,
                        template_dir=template_dir,
                    )
                )
            except EvaluationError as exc:
                logger.warning("evaluation failed for %s: %s", summary.case_id, exc)
        if reports:
            score_summary = aggregate_reports(reports)
            evaluations = tuple(reports)

    return BatchReport(
        n_cases=len(dataset),
        completed=completed,
        failed_incomplete=failed,
        errors=errors,
        avg_rounds=avg_rounds,
        completion_curve=curve,
        summaries=tuple(summaries),
        triage_eval=triage_eval,
        score_summary=score_summary,
        evaluations=evaluations,
    )


# --- strategy comparison -----------------------------------------------------------

@dataclass(frozen=True)
class StrategyComparison:
    reports: Mapping[str, BatchReport]

    def to_dict(self) -> dict:
        return {name: report.to_dict() for name, report in self.reports.items()}


def compare_strategies(
    make_engine: Callable[[SessionConfig], ConsultationEngine],
    dataset: Sequence[EhrRecord],
    base_config: SessionConfig | None = None,
    *,
    parallelism: int = 1,
    strategies: Sequence[str] = ("agent_driven", "default_order"),
    **batch_kwargs,
) -> StrategyComparison:
    """Same dataset under each controller strategy; everything else fixed."""
    base = base_config or SessionConfig()
    reports = {}
    for strategy in strategies:
        config = SessionConfig.from_dict(
            {**base.to_dict(), "controller_strategy": strategy}
        )
        engine = make_engine(config)
        reports[strategy] = run_batch(
            engine, dataset, parallelism=parallelism, **batch_kwargs
        )
    return StrategyComparison(reports=reports)


def format_comparison_table(comparison: StrategyComparison) -> str:
    lines = [
        f"{'Strategy':<16}{'Completed':>10}{'Failures':>10}{'Avg rounds':>12}",
        "-" * 48,
    ]
    for name, report in comparison.reports.items():
        lines.append(
            f"{name:<16}{report.completed:>10}{report.failures:>10}"
            f"{report.avg_rounds:>12.2f}"
        )
    return "\n".join(lines)


# --- writers -------------------------------------------------------------------------

def write_report_json(report: BatchReport | StrategyComparison, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def write_curve_csv(
    curves: Mapping[str, Sequence[float]], path: str | Path
) -> None:
    """One row per round; one named completion-fraction column per curve."""
    names = list(curves)
    if not names:
        raise InputError("no curves to write")
    length = max(len(curves[n]) for n in names)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round"] + names)
        for i in range(length):
            row = [i + 1]
            for name in names:
                curve = curves[name]
                row.append(f"{curve[i]:.6f}" if i < len(curve) else "")
            writer.writerow(row)

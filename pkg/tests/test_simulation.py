import csv
import json

import pytest

from helpers import RuleBackend, SequenceBackend, make_engine
from preconsult.errors import GatewayError, InputError
from preconsult.gateway import LlmGateway
from preconsult.orchestrator import SessionConfig
from preconsult.records import DialogueTranscript
from preconsult.simulation import (
    EhrRecord,
    compare_strategies,
    default_dataset_path,
    extend_curve,
    load_dataset,
    run_batch,
    run_case,
    virtual_patient_reply,
    write_curve_csv,
    write_dataset,
    write_report_json,
)

CASE = EhrRecord(
    case_id="c1",
    cc="Neck pain for two weeks.",
    hpi="Started after a long drive.",
    ph="No chronic illness.",
    primary_dept="Orthopedics",
    secondary_dept="Spine Surgery",
)


class TestDatasetIo:
    def test_bundled_dataset_loads(self):
        records = load_dataset(default_dataset_path())
        assert len(records) >= 5
        assert records[0].case_id == "demo-001"
        assert all(r.has_triage_truth for r in records)

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        write_dataset([CASE], path)
        assert load_dataset(path) == [CASE]

    def test_bad_json_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"schema_version": 1}\n{broken\n', encoding="utf-8")
        with pytest.raises(InputError, match="bad.jsonl:2"):
            load_dataset(path)

    def test_missing_field_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"schema_version": 1}\n{"cc": "pain"}\n', encoding="utf-8")
        with pytest.raises(InputError, match=":2"):
            load_dataset(path)

    def test_duplicate_case_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        rows = [
            {"schema_version": 1},
            {"case_id": "x", "cc": "a"},
            {"case_id": "x", "cc": "b"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        with pytest.raises(InputError, match="duplicate"):
            load_dataset(path)

    def test_wrong_schema_version_rejected(self, tmp_path):
        path = tmp_path / "v9.jsonl"
        path.write_text('{"schema_version": 9}\n', encoding="utf-8")
        with pytest.raises(InputError, match="schema_version"):
            load_dataset(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(InputError):
            load_dataset(path)


class TestVirtualPatient:
    def test_answers_from_backend(self):
        backend = SequenceBackend(["It began two weeks ago."])
        reply = virtual_patient_reply(
            LlmGateway(backend), CASE, "When did it start?", DialogueTranscript()
        )
        assert reply == "It began two weeks ago."
        system = backend.requests[0].messages[0].text
        assert CASE.cc in system
        assert CASE.hpi in system

    def test_unusable_reply_degrades_to_denial(self):
        backend = SequenceBackend(["", "   "])
        reply = virtual_patient_reply(
            LlmGateway(backend), CASE, "Any allergies?", DialogueTranscript()
        )
        assert reply == "No."

    def test_empty_question_rejected(self):
        with pytest.raises(InputError):
            virtual_patient_reply(
                LlmGateway(SequenceBackend([])), CASE, "  ", DialogueTranscript()
            )


class TestExtendCurve:
    def test_pads_with_final_value(self):
        assert extend_curve([0.2, 0.5], 4) == [0.2, 0.5, 0.5, 0.5]

    def test_truncates_overlong(self):
        assert extend_curve([0.1, 0.2, 0.3], 2) == [0.1, 0.2]

    def test_empty_is_all_zero(self):
        assert extend_curve([], 3) == [0.0, 0.0, 0.0]


class PoisonBackend:
    """Delegates to an inner backend, erroring whenever a marker appears."""

    def __init__(self, inner, marker):
        self.inner = inner
        self.marker = marker

    def send(self, request):
        if any(self.marker in m.text for m in request.messages):
            raise GatewayError(f"poisoned request for {self.marker!r}")
        return self.inner.send(request)


def small_dataset(n=4, poison_idx=None):
    records = []
    for i in range(n):
        marker = "POISON" if i == poison_idx else f"case {i}"
        records.append(
            EhrRecord(
                case_id=f"c{i}",
                cc=f"Complaint with {marker}.",
                hpi=f"History {i}.",
                ph="Nothing notable.",
                primary_dept="Orthopedics",
                secondary_dept="Spine Surgery",
            )
        )
    return records


class TestRunBatch:
    def test_single_case_full_run(self):
        engine = make_engine(RuleBackend())
        outcome = run_case(engine, engine.roles.gateway, CASE)
        assert outcome.status.value == "completed"
        assert outcome.rounds_used == 13

    def test_errors_isolated_and_conserved(self):
        engine = make_engine(RuleBackend())
        engine.roles.gateway.backend = PoisonBackend(RuleBackend(), "POISON")
        report = run_batch(engine, small_dataset(4, poison_idx=2), parallelism=2)
        assert report.n_cases == 4
        assert report.completed == 3
        assert set(report.errors) == {"c2"}
        assert report.failures == 1
        assert report.completed + report.failures == report.n_cases
        assert [s.case_id for s in report.summaries] == ["c0", "c1", "c2", "c3"]

    def test_failed_incomplete_counted_as_failures(self):
        engine = make_engine(RuleBackend(monitor_mode="never"), max_rounds=6)
        report = run_batch(engine, small_dataset(3))
        assert report.completed == 0
        assert report.failed_incomplete == 3
        assert report.failures == 3
        assert report.avg_rounds == 6.0

    def test_triage_eval_uses_per_step_history(self):
        engine = make_engine(RuleBackend())
        report = run_batch(engine, small_dataset(3))
        assert report.triage_eval is not None
        assert report.triage_eval.sample_count == 3
        # the rule triager is right from step 1 on
        assert report.triage_eval.per_step_primary_accuracy[0] == 1.0

    def test_evaluation_summary_attached(self):
        engine = make_engine(RuleBackend(evaluator_scores={"CI": 2}))
        report = run_batch(engine, small_dataset(2), evaluate=True)
        assert report.score_summary is not None
        assert report.score_summary.dimension("CI").mean == 2.0
        assert len(report.evaluations) == 2

    def test_empty_dataset_rejected(self):
        engine = make_engine(RuleBackend())
        with pytest.raises(InputError):
            run_batch(engine, [])

    def test_report_json_writer(self, tmp_path):
        engine = make_engine(RuleBackend())
        report = run_batch(engine, small_dataset(2))
        out = tmp_path / "report.json"
        write_report_json(report, out)
        data = json.loads(out.read_text(encoding="utf-8"))
        assert data["n_cases"] == 2
        assert len(data["completion_curve"]) == 30


class TestCompareStrategies:
    def test_both_strategies_reported(self, tmp_path):
        comparison = compare_strategies(
            lambda config: make_engine(
                RuleBackend(), strategy=config.controller_strategy
            ),
            small_dataset(2),
            SessionConfig(),
        )
        assert set(comparison.reports) == {"agent_driven", "default_order"}
        for report in comparison.reports.values():
            assert report.completed == 2
        csv_path = tmp_path / "curves.csv"
        write_curve_csv(
            {n: r.completion_curve for n, r in comparison.reports.items()}, csv_path
        )
        with csv_path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["round", "agent_driven", "default_order"]
        assert len(rows) == 31

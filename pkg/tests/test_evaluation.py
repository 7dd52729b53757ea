import json
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import RuleBackend, SequenceBackend
from preconsult.errors import EvaluationError, InputError
from preconsult.evaluation import (
    CONTENT_CODES,
    INTERACTION_CODES,
    DimensionScore,
    EvaluationReport,
    aggregate_reports,
    evaluate_session,
    load_rubric,
)
from preconsult.gateway import LlmGateway
from preconsult.records import (
    DialogueTranscript,
    MedicalRecord,
    Speaker,
    Turn,
    append_turn,
)

ALL_CODES = INTERACTION_CODES + CONTENT_CODES


def transcript():
    t = append_turn(DialogueTranscript(), Turn(1, Speaker.INQUIRER, "What brings you in?"))
    return append_turn(t, Turn(1, Speaker.PATIENT, "My neck hurts."))


def judge_reply(codes, score=4):
    return json.dumps({c: {"score": score, "rationale": "ok"} for c in codes})


def reference():
    return {"cc": "ref cc", "hpi": "ref hpi", "ph": "ref ph"}


class TestRubric:
    def test_packaged_rubric_has_seven_dimensions(self):
        rubric = load_rubric()
        assert rubric.codes == ALL_CODES
        for dim in rubric.dimensions:
            assert dim.description

    def test_past_history_anchors_cover_sparse_levels(self):
        phs = load_rubric().dimension("PHS")
        assert set(phs.anchors) == {0, 1, 3, 5}

    def test_subset_preserves_order(self):
        rubric = load_rubric()
        assert tuple(d.code for d in rubric.subset(CONTENT_CODES)) == CONTENT_CODES


class TestEvaluateSession:
    def test_two_calls_assemble_full_report(self):
        backend = SequenceBackend(
            [judge_reply(INTERACTION_CODES, 5), judge_reply(CONTENT_CODES, 3)]
        )
        report = evaluate_session(
            LlmGateway(backend),
            session_id="s1",
            transcript=transcript(),
            record=MedicalRecord(cc="c", hpi="h", ph="p"),
            reference=reference(),
        )
        assert set(report.scores) == set(ALL_CODES)
        assert report.score("CI") == 5
        assert report.score("PHS") == 3
        assert len(backend.requests) == 2

    def test_interaction_judge_sees_dialogue_not_reference(self):
        backend = SequenceBackend(
            [judge_reply(INTERACTION_CODES), judge_reply(CONTENT_CODES)]
        )
        evaluate_session(
            LlmGateway(backend),
            session_id="s1",
            transcript=transcript(),
            record=MedicalRecord(cc="generated cc text"),
            reference={"cc": "reference cc text", "hpi": "", "ph": ""},
        )
        interaction_prompt = backend.requests[0].last_user_text()
        content_prompt = backend.requests[1].last_user_text()
        assert "My neck hurts." in interaction_prompt
        assert "reference cc text" not in interaction_prompt
        assert "generated cc text" not in interaction_prompt
        assert "reference cc text" in content_prompt
        assert "generated cc text" in content_prompt
        assert "My neck hurts." not in content_prompt

    def test_out_of_range_score_never_clamped(self):
        bad = json.dumps({c: {"score": 6, "rationale": ""} for c in INTERACTION_CODES})
        backend = SequenceBackend([bad, bad])
        with pytest.raises(EvaluationError):
            evaluate_session(
                LlmGateway(backend),
                session_id="s1",
                transcript=transcript(),
                record=MedicalRecord(),
                reference=reference(),
            )

    def test_fractional_score_rejected(self):
        bad = json.dumps({c: {"score": 3.5, "rationale": ""} for c in INTERACTION_CODES})
        backend = SequenceBackend([bad, bad])
        with pytest.raises(EvaluationError):
            evaluate_session(
                LlmGateway(backend),
                session_id="s1",
                transcript=transcript(),
                record=MedicalRecord(),
                reference=reference(),
            )

    def test_partial_coverage_repaired(self):
        partial = json.dumps({"CI": {"score": 4}})
        backend = SequenceBackend(
            [partial, judge_reply(INTERACTION_CODES), judge_reply(CONTENT_CODES)]
        )
        report = evaluate_session(
            LlmGateway(backend),
            session_id="s1",
            transcript=transcript(),
            record=MedicalRecord(),
            reference=reference(),
        )
        assert len(backend.requests) == 3
        assert set(report.scores) == set(ALL_CODES)

    def test_report_dict_roundtrip(self):
        report = EvaluationReport(
            session_id="s1",
            scores={c: DimensionScore(c, 4, "fine") for c in ALL_CODES},
        )
        assert EvaluationReport.from_dict(report.to_dict()) == report


def report_with(scores_by_code):
    return EvaluationReport(
        session_id=f"s{id(scores_by_code)}",
        scores={c: DimensionScore(c, s) for c, s in scores_by_code.items()},
    )


class TestAggregation:
    def test_two_report_example(self):
        reports = [
            report_with({c: 3 for c in ALL_CODES}),
            report_with({c: 5 for c in ALL_CODES}),
        ]
        summary = aggregate_reports(reports)
        for dim in summary.dimensions:
            assert dim.mean == 4.0
            assert dim.stdev == 1.0
            assert dim.count == 2
        assert summary.overall_mean == 4.0

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            aggregate_reports([])

    def test_mismatched_dimensions_rejected(self):
        full = report_with({c: 4 for c in ALL_CODES})
        partial = EvaluationReport(
            session_id="p", scores={"CI": DimensionScore("CI", 4)}
        )
        with pytest.raises(InputError):
            aggregate_reports([full, partial])

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.lists(st.integers(min_value=0, max_value=5), min_size=7, max_size=7),
            min_size=1,
            max_size=12,
        )
    )
    def test_matches_statistics_module(self, rows):
        reports = [report_with(dict(zip(ALL_CODES, row))) for row in rows]
        summary = aggregate_reports(reports)
        for i, code in enumerate(ALL_CODES):
            column = [row[i] for row in rows]
            dim = summary.dimension(code)
            assert dim.mean == pytest.approx(statistics.mean(column), abs=1e-12)
            assert dim.stdev == pytest.approx(statistics.pstdev(column), abs=1e-12)


class TestRuleBackendJudge:
    def test_rule_backend_scores_requested_codes_only(self):
        gateway = LlmGateway(RuleBackend(evaluator_scores={"CI": 5}))
        report = evaluate_session(
            gateway,
            session_id="s1",
            transcript=transcript(),
            record=MedicalRecord(cc="c"),
            reference=reference(),
        )
        assert report.score("CI") == 5
        assert report.score("CQ") == 4
        assert [c.role_name for c in gateway.calls] == ["evaluator", "evaluator"]

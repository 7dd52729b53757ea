import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preconsult.errors import InputError
from preconsult.records import (
    DialogueTranscript,
    MedicalRecord,
    Speaker,
    Turn,
    append_turn,
    apply_record_update,
    record_from_dict,
    record_to_dict,
    replay_revisions,
    transcript_from_dict,
    transcript_to_dict,
)


class TestTranscript:
    def test_first_turn_must_be_inquirer(self):
        with pytest.raises(InputError):
            append_turn(DialogueTranscript(), Turn(1, Speaker.PATIENT, "hello"))

    def test_round_ordering_enforced(self):
        t = append_turn(DialogueTranscript(), Turn(1, Speaker.INQUIRER, "q1"))
        t = append_turn(t, Turn(1, Speaker.PATIENT, "a1"))
        with pytest.raises(InputError):
            append_turn(t, Turn(1, Speaker.PATIENT, "a1 again"))
        t = append_turn(t, Turn(2, Speaker.INQUIRER, "q2"))
        with pytest.raises(InputError):
            append_turn(t, Turn(1, Speaker.PATIENT, "stale round"))

    def test_patient_needs_question_in_same_round(self):
        t = append_turn(DialogueTranscript(), Turn(1, Speaker.INQUIRER, "q1"))
        with pytest.raises(InputError):
            append_turn(t, Turn(2, Speaker.PATIENT, "answer without question"))

    def test_empty_text_rejected(self):
        with pytest.raises(InputError):
            Turn(1, Speaker.INQUIRER, "   ")

    def test_tail_window(self):
        t = DialogueTranscript()
        for k in range(1, 5):
            t = append_turn(t, Turn(k, Speaker.INQUIRER, f"q{k}"))
            t = append_turn(t, Turn(k, Speaker.PATIENT, f"a{k}"))
        assert len(t.tail(3)) == 3
        assert t.tail(0) == t.turns
        assert [x.text for x in t.tail(2)] == ["q4", "a4"]

    def test_serialization_roundtrip(self):
        t = append_turn(DialogueTranscript(), Turn(1, Speaker.INQUIRER, "q"))
        t = append_turn(t, Turn(1, Speaker.PATIENT, "a"))
        assert transcript_from_dict(transcript_to_dict(t)) == t


class TestRecordUpdates:
    def test_update_records_revisions_per_changed_field(self):
        record = MedicalRecord()
        updated = apply_record_update(
            record, 1, {"cc": "pain", "hpi": "", "ph": ""}
        )
        assert updated.cc == "pain"
        assert [r.field for r in updated.revisions] == ["cc"]

    def test_identical_update_adds_no_revisions(self):
        record = apply_record_update(
            MedicalRecord(), 1, {"cc": "pain", "hpi": "h", "ph": "p"}
        )
        again = apply_record_update(record, 2, {"cc": "pain", "hpi": "h", "ph": "p"})
        assert again.revisions == record.revisions
        assert again == record

    def test_round_must_advance(self):
        record = apply_record_update(MedicalRecord(), 2, {"cc": "x", "hpi": "", "ph": ""})
        with pytest.raises(InputError):
            apply_record_update(record, 2, {"cc": "y", "hpi": "", "ph": ""})
        with pytest.raises(InputError):
            apply_record_update(record, 1, {"cc": "y", "hpi": "", "ph": ""})

    def test_unknown_field_rejected(self):
        with pytest.raises(InputError):
            apply_record_update(MedicalRecord(), 1, {"cc": "x", "bogus": "y"})

    def test_serialization_roundtrip(self):
        record = apply_record_update(MedicalRecord(), 1, {"cc": "x", "hpi": "y", "ph": "z"})
        record = apply_record_update(record, 3, {"cc": "x2", "hpi": "y", "ph": "z"})
        assert record_from_dict(record_to_dict(record)) == record


field_texts = st.text(
    alphabet=st.characters(whitelist_categories=("L", "N", "Zs")), max_size=12
).map(str.strip)


@st.composite
def update_sequences(draw):
    n = draw(st.integers(min_value=1, max_value=8))
    updates = []
    for i in range(n):
        updates.append(
            (
                i + 1,
                {
                    "cc": draw(field_texts),
                    "hpi": draw(field_texts),
                    "ph": draw(field_texts),
                },
            )
        )
    return updates


class TestEventSourcing:
    @settings(max_examples=100, deadline=None)
    @given(update_sequences())
    def test_replaying_revisions_rebuilds_fields(self, updates):
        record = MedicalRecord()
        for round_no, update in updates:
            record = apply_record_update(record, round_no, update)
        replayed = replay_revisions(record.revisions)
        assert (replayed.cc, replayed.hpi, replayed.ph) == (
            record.cc,
            record.hpi,
            record.ph,
        )

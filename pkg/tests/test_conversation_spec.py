"""Spec parsing, progress tracking and the reconfirmation cascade."""
from __future__ import annotations

import pytest

from ecpcounsel.conversation_spec import (
    ProgressTracker,
    StepKind,
    StepStatus,
    RiskLevel,
    coverage_report,
    mandatory_coverage,
    mark_step,
    next_pending_steps,
    parse_spec,
    serialize_spec,
)
from ecpcounsel.errors import (
    DocumentSyntaxError,
    MissingValue,
    PrerequisiteNotDone,
    UnknownStep,
    ValidationError,
    ValueNotAllowed,
)

MINIMAL = """
medication_id: demo
version: "1"
steps:
  - id: a
    title: A
    goal: Ask the thing.
    kind: elicit
    risk_level: high
    mandatory: true
    data_key: thing
  - id: b
    title: B
    goal: Decide from the thing.
    kind: decide
    risk_level: critical
    mandatory: true
    requires: [a]
  - id: c
    title: C
    goal: Tell them something.
    kind: inform
    risk_level: low
    mandatory: false
    requires: [b]
"""


# -------- parsing and validation --------


def test_parse_fixture_spec(spec):
    assert spec.medication_id == "emergency_contraceptive_pill"
    assert len(spec.steps) == 35
    assert sum(1 for s in spec.steps if s.mandatory) == 27
    assert spec.steps[0].kind is StepKind.ELICIT
    assert spec.steps[0].data_key == "hours_since_intercourse"


def test_round_trip_preserves_spec(spec, minimal_spec):
    for original in (spec, minimal_spec):
        assert parse_spec(serialize_spec(original)) == original


def test_broken_yaml_is_syntax_error():
    with pytest.raises(DocumentSyntaxError):
        parse_spec("steps: [unclosed")


def test_missing_top_level_key():
    with pytest.raises(DocumentSyntaxError):
        parse_spec("medication_id: x\nsteps: []")


def test_duplicate_step_id_rejected():
    doc = MINIMAL + """
  - id: a
    title: Again
    goal: Duplicate.
    kind: inform
    risk_level: low
    mandatory: false
"""
    with pytest.raises(ValidationError, match="duplicate step id"):
        parse_spec(doc)


def test_forward_requires_rejected():
    doc = MINIMAL.replace("requires: [a]", "requires: [zzz]")
    with pytest.raises(ValidationError, match="zzz"):
        parse_spec(doc)


def test_critical_steps_must_be_mandatory():
    doc = MINIMAL.replace(
        "risk_level: critical\n    mandatory: true",
        "risk_level: critical\n    mandatory: false",
    )
    with pytest.raises(ValidationError, match="critical"):
        parse_spec(doc)


def test_data_key_only_on_elicit():
    doc = MINIMAL.replace("kind: inform", "kind: inform\n    data_key: oops")
    with pytest.raises(ValidationError, match="data_key"):
        parse_spec(doc)


# -------- progress tracking --------


def _fresh():
    return parse_spec(MINIMAL)


def test_initial_statuses_pending():
    s = _fresh()
    t = ProgressTracker(s)
    assert all(v is StepStatus.PENDING for v in t.statuses.values())
    assert mandatory_coverage(s, t) == 0.0


def test_mark_elicit_requires_value():
    s = _fresh()
    t = ProgressTracker(s)
    with pytest.raises(MissingValue):
        mark_step(t, "a", StepStatus.DONE)
    mark_step(t, "a", StepStatus.DONE, value="24 hours", turn=1)
    assert t.collected["thing"].value == "24 hours"


def test_value_not_allowed_on_non_elicit():
    s = _fresh()
    t = ProgressTracker(s)
    mark_step(t, "a", StepStatus.DONE, value="x", turn=1)
    with pytest.raises(ValueNotAllowed):
        mark_step(t, "b", StepStatus.DONE, value="verdict")


def test_prerequisites_enforced():
    s = _fresh()
    t = ProgressTracker(s)
    with pytest.raises(PrerequisiteNotDone):
        mark_step(t, "b", StepStatus.DONE)


def test_unknown_step_rejected():
    s = _fresh()
    t = ProgressTracker(s)
    with pytest.raises(UnknownStep):
        mark_step(t, "nope", StepStatus.DONE)


def test_next_pending_respects_requires():
    s = _fresh()
    t = ProgressTracker(s)
    assert [x.id for x in next_pending_steps(s, t)] == ["a"]
    mark_step(t, "a", StepStatus.DONE, value="v", turn=1)
    assert [x.id for x in next_pending_steps(s, t)] == ["b"]


def test_coverage_counts_only_mandatory():
    s = _fresh()
    t = ProgressTracker(s)
    mark_step(t, "a", StepStatus.DONE, value="v", turn=1)
    assert mandatory_coverage(s, t) == 0.5
    mark_step(t, "b", StepStatus.DONE)
    assert mandatory_coverage(s, t) == 1.0
    report = coverage_report(s, t)
    assert report.complete
    assert report.mandatory_remaining == []


def test_changed_answer_flips_dependents_to_reconfirm():
    s = _fresh()
    t = ProgressTracker(s)
    mark_step(t, "a", StepStatus.DONE, value="24 hours", turn=1)
    mark_step(t, "b", StepStatus.DONE)
    mark_step(t, "c", StepStatus.DONE)

    mark_step(t, "a", StepStatus.DONE, value="80 hours", turn=3)
    assert t.statuses["b"] is StepStatus.RECONFIRM_NEEDED
    assert t.statuses["c"] is StepStatus.RECONFIRM_NEEDED
    assert t.collected["thing"].value == "80 hours"
    # re-confirmable steps come back as workable
    assert [x.id for x in next_pending_steps(s, t)] == ["b"]


def test_same_answer_does_not_cascade():
    s = _fresh()
    t = ProgressTracker(s)
    mark_step(t, "a", StepStatus.DONE, value="24 hours", turn=1)
    mark_step(t, "b", StepStatus.DONE)
    mark_step(t, "a", StepStatus.DONE, value="24 hours", turn=2)
    assert t.statuses["b"] is StepStatus.DONE


def test_dependents_of_is_transitive(spec):
    hours = spec.steps[0].id
    deps = spec.dependents_of(hours)
    # the final product decision sits several requires-hops away
    assert any(spec.step(d).kind is StepKind.DECIDE for d in deps)
    for d in deps:
        assert d != hours


def test_risk_levels_parsed(spec):
    critical = [s for s in spec.steps if s.risk_level is RiskLevel.CRITICAL]
    assert critical, "fixture spec must contain critical steps"
    assert all(s.mandatory for s in critical)

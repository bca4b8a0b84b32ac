"""Scenario loader, exclusion oracle, script stepping, and suite grading."""
from __future__ import annotations

import pytest

from ecpcounsel.conversation_spec import mandatory_coverage
from ecpcounsel.errors import DocumentSyntaxError, ScenarioStuck, ValidationError
from ecpcounsel.scenario_harness import (
    Scenario,
    load_scenario,
    load_scenario_dir,
    oracle_safe_products,
    run_scenario,
    run_suite,
)

_MINIMAL_DOC = """
id: demo
risk_area: timing
use_context: pharmacy counter
evaluation_parameters: [completion]
customer_script:
  - say: "Hi."
expected:
  complete: false
"""


# -------- loader --------


def test_load_scenario_defaults():
    scenario = load_scenario(_MINIMAL_DOC)
    assert scenario.id == "demo"
    assert scenario.backend_profile == "standard"
    assert scenario.evaluation_parameters == ("completion",)
    assert scenario.customer_script == ({"say": "Hi."},)


def test_load_scenario_rejects_non_yaml():
    with pytest.raises(DocumentSyntaxError):
        load_scenario("id: [unclosed")


def test_load_scenario_rejects_missing_keys():
    with pytest.raises(DocumentSyntaxError, match="customer_script"):
        load_scenario("id: x\nexpected: {}")


def test_load_scenario_rejects_unknown_profile():
    doc = _MINIMAL_DOC + "backend_profile: chaos\n"
    with pytest.raises(ValidationError, match="chaos"):
        load_scenario(doc)


def test_load_scenario_rejects_empty_script():
    with pytest.raises(ValidationError, match="non-empty"):
        load_scenario("id: x\ncustomer_script: []\nexpected: {}")


def test_load_scenario_rejects_entry_without_say_or_branch():
    doc = """
id: x
customer_script:
  - when: "hello"
expected: {}
"""
    with pytest.raises(ValidationError, match="say or branch"):
        load_scenario(doc)


def test_load_scenario_dir_reads_fixture_corpus(scenarios):
    assert len(scenarios) >= 10
    assert len({s.id for s in scenarios}) == len(scenarios)


def test_load_scenario_dir_rejects_empty(tmp_path):
    with pytest.raises(ValidationError, match="no scenario files"):
        load_scenario_dir(tmp_path)


# -------- exclusion oracle --------


def test_oracle_no_terms_means_all_safe(kb):
    assert oracle_safe_products(kb, [], [], {}) == {"norlevex", "ulipra", "gestrapid"}


def test_oracle_unconditional_exclusion(kb):
    assert oracle_safe_products(kb, [], ["Rifampicin"], {}) == set()


def test_oracle_conditional_needs_affirmative_answer(kb):
    # without an answer the conditional entry stays dormant
    assert oracle_safe_products(kb, [], ["Asthma"], {}) == {
        "norlevex", "ulipra", "gestrapid"
    }
    assert oracle_safe_products(kb, [], ["Asthma"], {"Asthma": True}) == {
        "norlevex", "gestrapid"
    }
    assert oracle_safe_products(kb, [], ["Asthma"], {"Asthma": False}) == {
        "norlevex", "ulipra", "gestrapid"
    }


def test_oracle_allergy_side(kb):
    assert oracle_safe_products(kb, ["potato starch"], [], {}) == {"ulipra", "gestrapid"}
    assert oracle_safe_products(
        kb, ["lactose monohydrate"], [], {"lactose monohydrate": True}
    ) == {"gestrapid"}


def test_oracle_table_scoping(kb):
    # a term reported in the wrong table must not exclude anything
    assert oracle_safe_products(kb, ["Rifampicin"], [], {}) == {
        "norlevex", "ulipra", "gestrapid"
    }


def test_oracle_case_and_spacing_insensitive(kb):
    direct = oracle_safe_products(kb, [], ["severe  malabsorption DISORDER"], {})
    assert direct == set()


# -------- script stepping --------


def test_when_guard_mismatch_raises_stuck(spec, kb):
    scenario = load_scenario("""
id: stuck_demo
customer_script:
  - say: "Hi, I need the morning after pill."
  - when: "capital of France"
    say: "This guard can never match."
expected: {}
""")
    with pytest.raises(ScenarioStuck, match="capital of France"):
        run_scenario(spec, kb, scenario)


def test_branch_without_match_raises_stuck(spec, kb):
    scenario = load_scenario("""
id: branch_stuck
customer_script:
  - say: "Hi, I need the morning after pill."
  - branch:
      - when: "capital of France"
        say: "Paris."
expected: {}
""")
    with pytest.raises(ScenarioStuck, match="no branch matched"):
        run_scenario(spec, kb, scenario)


# -------- grading --------


def test_grade_flags_wrong_expectation(spec, kb):
    scenario = load_scenario("""
id: wrong_expectation
customer_script:
  - say: "Hi, I need the morning after pill."
expected:
  complete: true
""")
    result = run_scenario(spec, kb, scenario)
    assert not result.passed
    assert any("complete" in f for f in result.failures)


def test_grade_checks_safe_products_against_oracle(spec, kb):
    # expected safe set disagrees with the oracle for the stated terms, so
    # the verdict must fail even if the runtime were to agree with the YAML
    scenario = load_scenario("""
id: oracle_disagreement
customer_script:
  - say: "Hi, I need the morning after pill."
expected:
  safe_products: [norlevex]
  oracle:
    allergy_terms: []
    med_terms: []
    condition_answers: {}
""")
    result = run_scenario(spec, kb, scenario)
    assert not result.passed
    assert any("oracle" in f.lower() or "safe" in f.lower() for f in result.failures)


def test_grade_reports_missing_flag(spec, kb):
    scenario = load_scenario("""
id: missing_flag
customer_script:
  - say: "Hi, I need the morning after pill."
expected:
  flags_contain: [escalation]
""")
    result = run_scenario(spec, kb, scenario)
    assert not result.passed
    assert any("escalation" in f for f in result.failures)


# -------- full suite --------


def test_suite_runs_fixture_corpus_clean(spec, kb, scenarios):
    report = run_suite(spec, kb, scenarios)
    failed = [(r.scenario_id, r.failures) for r in report.results if not r.passed]
    assert report.all_passed, failed
    assert report.total == len(scenarios)
    completed = sum(
        1 for r in report.results if mandatory_coverage(spec, r.memory.tracker) == 1.0
    )
    assert completed >= 10


def test_suite_is_deterministic(spec, kb, scenarios):
    first = run_suite(spec, kb, scenarios)
    second = run_suite(spec, kb, scenarios)
    for a, b in zip(first.results, second.results):
        assert a.transcript == b.transcript

"""Knowledge base parsing and the product partition.

The partition oracle below re-derives safe/excluded sets with plain loops so
the production implementation has something genuinely independent to agree
with, including on randomized term subsets.
"""
from __future__ import annotations

import random

import pytest

from ecpcounsel.errors import (
    DanglingReference,
    DocumentSyntaxError,
    DuplicateName,
    UnansweredCondition,
    ValidationError,
)
from ecpcounsel.knowledge_base import (
    Table,
    load_kb,
    normalize_term,
    products_excluded_by,
)
from ecpcounsel.matching_tools import (
    check_pill_contraindicating_allergies,
    check_pill_contraindicating_medications_and_diseases,
)


# -------- oracle --------


def oracle_partition(kb, matched_terms, condition_answers, table=None):
    """Safe ids / excluded id->reasons computed with plain loops."""
    answers = {normalize_term(k): v for k, v in (condition_answers or {}).items()}
    tables = [table] if table else [Table.ALLERGIES, Table.MEDICATIONS_AND_DISEASES]
    in_force = []
    for term in matched_terms:
        for t in tables:
            entry = kb.entry(t, term)
            if entry is None:
                continue
            if entry.conditional:
                key = normalize_term(entry.term)
                if key not in answers:
                    raise UnansweredCondition(entry.term)
                if not answers[key]:
                    continue
            in_force.append((t, normalize_term(entry.term)))
    safe, excluded = [], {}
    for product in kb.products:
        reasons = []
        for t, key in in_force:
            listed = (
                product.contraindicating_allergies
                if t is Table.ALLERGIES
                else product.contraindicating_conditions
            )
            if key in {normalize_term(x) for x in listed}:
                if key not in [normalize_term(r) for r in reasons]:
                    reasons.append(key)
        if reasons:
            excluded[product.id] = sorted(reasons)
        else:
            safe.append(product.id)
    return safe, excluded


def _as_oracle_shape(partition):
    safe = partition.safe_ids()
    excluded = {
        p.id: sorted(normalize_term(r) for r in reasons) for p, reasons in partition.excluded
    }
    return safe, excluded


# -------- parsing --------


def test_fixture_kb_shape(kb):
    assert [p.id for p in kb.products] == ["norlevex", "ulipra", "gestrapid"]
    assert len(kb.allergies) == 12
    assert len(kb.medications_and_diseases) == 10
    assert len(kb.aliases) == 10


def test_entry_lookup_is_case_insensitive(kb):
    assert kb.entry(Table.ALLERGIES, "Lactose Monohydrate") is not None
    assert kb.entry(Table.MEDICATIONS_AND_DISEASES, "asthma") is not None
    assert kb.entry(Table.ALLERGIES, "no such thing") is None


def test_conditional_entries_carry_questions(kb):
    asthma = kb.entry(Table.MEDICATIONS_AND_DISEASES, "Asthma")
    assert asthma.conditional
    assert "glucocorticoid" in asthma.severity_question.lower()
    lactose = kb.entry(Table.ALLERGIES, "lactose monohydrate")
    assert lactose.conditional
    assert "severe" in lactose.severity_question.lower()


def test_alias_map_normalizes_keys(kb):
    aliases = kb.alias_map()
    assert aliases[normalize_term("Celiac disease")] == "Severe Malabsorption Disorder"
    assert aliases[normalize_term("hypericum")] == "St John's Wort"


_KB_STUB = """
products:
  - id: p1
    name: Pill One
    active_substance: levonorgestrel
    excipients: [lactose monohydrate]
    contraindicating_allergies: [lactose monohydrate]
    contraindicating_conditions: [Liver disease]
allergies:
  - term: lactose monohydrate
medications_and_diseases:
  - term: Liver disease
aliases: []
"""


def test_minimal_kb_parses():
    kb = load_kb(_KB_STUB)
    assert kb.products[0].excipients == ("lactose monohydrate",)


def test_duplicate_term_rejected():
    doc = _KB_STUB.replace(
        "allergies:\n  - term: lactose monohydrate",
        "allergies:\n  - term: lactose monohydrate\n  - term: Lactose  Monohydrate",
    )
    with pytest.raises(DuplicateName):
        load_kb(doc)


def test_dangling_product_reference_rejected():
    doc = _KB_STUB.replace("contraindicating_conditions: [Liver disease]",
                           "contraindicating_conditions: [Gout]")
    with pytest.raises(DanglingReference):
        load_kb(doc)


def test_dangling_alias_rejected():
    doc = _KB_STUB.replace("aliases: []",
                           "aliases:\n  - alias: crohn\n    category: Nonexistent")
    with pytest.raises(DanglingReference):
        load_kb(doc)


def test_broken_yaml_rejected():
    with pytest.raises(DocumentSyntaxError):
        load_kb("products: [")


def test_severity_question_requires_condition():
    doc = _KB_STUB.replace(
        "  - term: Liver disease",
        "  - term: Liver disease\n    severity_question: How severe?",
    )
    with pytest.raises(ValidationError):
        load_kb(doc)


# -------- partition --------


def test_empty_terms_keep_everything_safe(kb):
    partition = products_excluded_by(kb, [])
    assert partition.safe_ids() == ["norlevex", "ulipra", "gestrapid"]
    assert partition.excluded == []


def test_malabsorption_excludes_all_products(kb):
    partition = products_excluded_by(kb, ["Severe Malabsorption Disorder"])
    assert partition.safe_ids() == []
    for product, reasons in partition.excluded:
        assert "Severe Malabsorption Disorder" in reasons


def test_conditional_term_needs_answer(kb):
    with pytest.raises(UnansweredCondition) as exc:
        products_excluded_by(kb, ["Asthma"], table=Table.MEDICATIONS_AND_DISEASES)
    assert exc.value.term == "Asthma"
    assert "glucocorticoid" in (exc.value.question or "").lower()


def test_conditional_answer_gates_exclusion(kb):
    on = products_excluded_by(kb, ["Asthma"], {"Asthma": True},
                              table=Table.MEDICATIONS_AND_DISEASES)
    off = products_excluded_by(kb, ["Asthma"], {"Asthma": False},
                               table=Table.MEDICATIONS_AND_DISEASES)
    assert on.excluded_ids() == ["ulipra"]
    assert off.excluded == []


def test_table_scoping(kb):
    # "asthma" exists in both tables; scoped to allergies it is unconditional
    # and contraindicates nothing in the fixture products
    partition = products_excluded_by(kb, ["asthma"], table=Table.ALLERGIES)
    assert partition.excluded == []


def test_tool_wrappers_match_scoped_partitions(kb):
    a = check_pill_contraindicating_allergies(kb, ["lactose monohydrate"],
                                              {"lactose monohydrate": True})
    b = products_excluded_by(kb, ["lactose monohydrate"],
                             {"lactose monohydrate": True}, table=Table.ALLERGIES)
    assert a.safe_ids() == b.safe_ids() == ["gestrapid"]
    c = check_pill_contraindicating_medications_and_diseases(kb, ["Rifampicin"])
    assert c.safe_ids() == []


def test_partition_agrees_with_oracle_on_random_subsets(kb):
    rng = random.Random(20260825)
    allergy_terms = [e.term for e in kb.allergies]
    med_terms = [e.term for e in kb.medications_and_diseases]
    conditional = [
        e.term for t in Table for e in kb.entries(t) if e.conditional
    ]
    for _ in range(300):
        terms = rng.sample(allergy_terms, rng.randint(0, 3)) + rng.sample(
            med_terms, rng.randint(0, 3)
        )
        answers = {t: rng.random() < 0.5 for t in conditional}
        expected_safe, expected_excluded = oracle_partition(kb, terms, answers)
        got_safe, got_excluded = _as_oracle_shape(products_excluded_by(kb, terms, answers))
        assert got_safe == expected_safe
        assert got_excluded == expected_excluded


def test_exclusion_is_monotone_in_terms(kb):
    rng = random.Random(77)
    med_terms = [e.term for e in kb.medications_and_diseases]
    conditional = [e.term for t in Table for e in kb.entries(t) if e.conditional]
    answers = {t: True for t in conditional}
    for _ in range(200):
        base = rng.sample(med_terms, rng.randint(0, 4))
        extra = rng.choice(med_terms)
        before = set(products_excluded_by(kb, base, answers).excluded_ids())
        after = set(products_excluded_by(kb, base + [extra], answers).excluded_ids())
        assert before <= after

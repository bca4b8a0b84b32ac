"""Similarity scoring and table lookup tests.

The oracle here is a plain dynamic-programming edit distance written
independently of the package implementation; the package must agree with it
on every input, not just the famous examples.
"""
from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecpcounsel.errors import ValidationError
from ecpcounsel.knowledge_base import Table
from ecpcounsel.matching_tools import (
    DEFAULT_THRESHOLD,
    STRICT_THRESHOLD,
    MatchThresholds,
    classify_contraindication,
    find_most_similar_word_allergies,
    find_most_similar_word_regular_medications_and_diseases,
    similarity,
)


# -------- the oracle --------


def _levenshtein(a: str, b: str) -> int:
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[len(b)]


def _norm(text: str) -> str:
    return " ".join(text.lower().split())


def _edit_sim(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - _levenshtein(a, b) / longest


def oracle_similarity(a: str, b: str) -> float:
    na, nb = _norm(a), _norm(b)
    best = _edit_sim(na, nb)
    for ta in na.split():
        for tb in nb.split():
            best = max(best, _edit_sim(ta, tb))
    return best


# -------- frozen reference values --------


def test_astma_vs_asthma_score():
    # one insertion against length six
    assert similarity("astma", "asthma") == pytest.approx(1 - 1 / 6)
    assert round(similarity("astma", "asthma"), 4) == 0.8333


def test_token_level_match_spans_multiword_terms():
    # "lactose" equals one token of "lactose monohydrate" exactly
    assert similarity("lactose", "lactose monohydrate") == 1.0
    assert similarity("hypericum tea", "hypericum") == 1.0


def test_case_and_whitespace_insensitive():
    assert similarity("Asthma", "asthma") == 1.0
    assert similarity("  corn   starch ", "corn starch") == 1.0


def test_disjoint_strings_score_low():
    assert similarity("blue cars", "asthma") < DEFAULT_THRESHOLD


@given(st.text(max_size=24), st.text(max_size=24))
@settings(max_examples=300, deadline=None)
def test_similarity_agrees_with_oracle(a, b):
    assert similarity(a, b) == pytest.approx(oracle_similarity(a, b), abs=1e-12)


@given(st.text(max_size=24))
@settings(max_examples=100, deadline=None)
def test_similarity_is_reflexive_and_bounded(a):
    s = similarity(a, a)
    assert s == 1.0
    t = similarity(a, "xyzzyq")
    assert 0.0 <= t <= 1.0


@given(st.text(max_size=24), st.text(max_size=24))
@settings(max_examples=200, deadline=None)
def test_similarity_is_symmetric(a, b):
    assert similarity(a, b) == similarity(b, a)


# -------- table lookup --------


def test_astma_strict_lookup_returns_exactly_asthma(kb):
    result = find_most_similar_word_allergies(kb, "astma", STRICT_THRESHOLD)
    assert result.terms() == ["asthma"]
    assert result.scores()["asthma"] == pytest.approx(1 - 1 / 6)


def test_starch_matches_both_starches(kb):
    result = find_most_similar_word_allergies(kb, "starch", DEFAULT_THRESHOLD)
    top = [t for t, s in result.matches if s == 1.0]
    assert sorted(top) == ["corn starch", "potato starch"]


def test_results_are_sorted_best_first(kb):
    result = find_most_similar_word_allergies(kb, "lactose", DEFAULT_THRESHOLD)
    scores = [s for _, s in result.matches]
    assert scores == sorted(scores, reverse=True)
    assert result.matches[0][0] == "lactose monohydrate"


def test_no_match_below_threshold(kb):
    result = find_most_similar_word_allergies(kb, "blue cars", DEFAULT_THRESHOLD)
    assert result.matches == ()


def test_med_table_lookup_covers_aliases(kb):
    result = find_most_similar_word_regular_medications_and_diseases(
        kb, "celiac", DEFAULT_THRESHOLD
    )
    assert "Celiac disease" in result.terms()
    result = find_most_similar_word_regular_medications_and_diseases(
        kb, "hypericum", DEFAULT_THRESHOLD
    )
    assert "hypericum" in [t.lower() for t in result.terms()]


def test_threshold_validation(kb):
    with pytest.raises(ValidationError):
        find_most_similar_word_allergies(kb, "asthma", 0.0)
    with pytest.raises(ValidationError):
        find_most_similar_word_allergies(kb, "asthma", 1.5)


def test_match_thresholds_ordering_enforced():
    with pytest.raises(ValidationError):
        MatchThresholds(default_threshold=0.9, strict_threshold=0.8)


@given(kb_query=st.text(alphabet="abcdefghijklmnopqrstuvwxyz ", min_size=1, max_size=20))
@settings(max_examples=150, deadline=None)
def test_strict_matches_subset_of_default(kb, kb_query):
    # property over random queries against both fixture tables
    for find in (
        find_most_similar_word_allergies,
        find_most_similar_word_regular_medications_and_diseases,
    ):
        strict = set(find(kb, kb_query, STRICT_THRESHOLD).terms())
        loose = set(find(kb, kb_query, DEFAULT_THRESHOLD).terms())
        assert strict <= loose


# -------- re-labeling --------


def test_classify_relabels_via_alias_table(kb):
    assert classify_contraindication(kb, "Celiac disease") == "Severe Malabsorption Disorder"


def test_classify_identity_for_canonical_terms(kb):
    assert classify_contraindication(kb, "Asthma") == "Asthma"
    assert classify_contraindication(kb, "Rifampicin") == "Rifampicin"


def test_classify_alias_hit_is_case_insensitive(kb):
    assert classify_contraindication(kb, "hypericum") == "St John's Wort"


def test_classify_unknown_term_returns_none(kb):
    assert classify_contraindication(kb, "paracetamol") is None

"""Fuzzy term matching and the contraindication lookup tools.

These are the functions the agents invoke when a customer phrase has to be
mapped onto knowledge base vocabulary. Misspellings ("astma"), partial names
("lactose" for "lactose monohydrate") and lay synonyms (via the alias table)
all have to land on the right canonical term, or be escalated as a question
rather than guessed.

Similarity is symmetric and ranges over [0, 1]:

    score(a, b) = max( nes(a, b),  max over token pairs (ta, tb) of nes(ta, tb) )

where nes is normalized edit similarity, 1 - levenshtein(x, y) / max(len(x),
len(y)), computed on lowercased, whitespace collapsed input. The token
component lets a single word find a multi-word term that contains it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import BackendUnavailable, ValidationError
from .knowledge_base import (
    CategoryAlias,
    KnowledgeBase,
    Partition,
    Table,
    normalize_term,
    products_excluded_by,
)

DEFAULT_THRESHOLD = 0.6
STRICT_THRESHOLD = 0.8
SCORE_DECIMALS = 4  # similarity scores are reported to 4 decimal places


@dataclass(frozen=True)
class MatchThresholds:
    default_threshold: float = DEFAULT_THRESHOLD
    strict_threshold: float = STRICT_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 < self.default_threshold <= self.strict_threshold <= 1.0):
            raise ValidationError(
                "thresholds must satisfy 0 < default <= strict <= 1, got "
                f"{self.default_threshold} / {self.strict_threshold}"
            )


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance, two-row dynamic programming."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def _edit_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def similarity(a: str, b: str) -> float:
    """Similarity in [0, 1] between two free-text terms.

    Normalized-equal strings score 1.0. The token component means a query
    equal to one word of a longer term also scores 1.0, which is wanted: a
    customer who says "lactose" means the lactose-bearing ingredient.
    """
    na, nb = normalize_term(a), normalize_term(b)
    best = _edit_similarity(na, nb)
    tokens_a = na.split()
    tokens_b = nb.split()
    for ta in tokens_a:
        for tb in tokens_b:
            s = _edit_similarity(ta, tb)
            if s > best:
                best = s
    return best


@dataclass(frozen=True)
class MatchResult:
    query: str
    matches: tuple[tuple[str, float], ...]  # (canonical vocabulary term, score), best first
    threshold_used: float

    def terms(self) -> list[str]:
        return [t for t, _ in self.matches]

    def scores(self) -> dict[str, float]:
        return dict(self.matches)


def _find(vocabulary: Sequence[str], query: str, threshold: float) -> MatchResult:
    if not (0.0 < threshold <= 1.0):
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    scored = [(term, similarity(query, term)) for term in vocabulary]
    kept = [(t, s) for t, s in scored if s >= threshold]
    kept.sort(key=lambda pair: (-pair[1], normalize_term(pair[0])))
    return MatchResult(query=query, matches=tuple(kept), threshold_used=threshold)


def find_most_similar_word_allergies(
    kb: KnowledgeBase, term: str, threshold: float = DEFAULT_THRESHOLD
) -> MatchResult:
    """Match a phrase against the allergy table."""
    vocabulary = [e.term for e in kb.allergies]
    vocabulary += [a.alias for a in kb.aliases if _alias_targets(kb, a, Table.ALLERGIES)]
    return _find(vocabulary, term, threshold)


def find_most_similar_word_regular_medications_and_diseases(
    kb: KnowledgeBase, term: str, threshold: float = DEFAULT_THRESHOLD
) -> MatchResult:
    """Match a phrase against the medications and diseases table plus its aliases.

    Alias hits come back under the alias spelling; contraindication
    classification turns them into their category term.
    """
    vocabulary = [e.term for e in kb.medications_and_diseases]
    vocabulary += [a.alias for a in kb.aliases if _alias_targets(kb, a, Table.MEDICATIONS_AND_DISEASES)]
    return _find(vocabulary, term, threshold)


def _alias_targets(kb: KnowledgeBase, alias: CategoryAlias, table: Table) -> bool:
    return kb.entry(table, alias.category) is not None


def check_pill_contraindicating_allergies(
    kb: KnowledgeBase,
    matched_terms: Sequence[str],
    condition_answers: Mapping[str, bool] | None = None,
) -> Partition:
    """Product partition considering only allergy entries."""
    return products_excluded_by(kb, matched_terms, condition_answers, table=Table.ALLERGIES)


def check_pill_contraindicating_medications_and_diseases(
    kb: KnowledgeBase,
    matched_terms: Sequence[str],
    condition_answers: Mapping[str, bool] | None = None,
) -> Partition:
    """Product partition considering only medication and disease entries."""
    return products_excluded_by(kb, matched_terms, condition_answers, table=Table.MEDICATIONS_AND_DISEASES)


def classify_contraindication(kb: KnowledgeBase, term: str, backend=None) -> str | None:
    """Map a term onto its canonical category in the medications and diseases table.

    Resolution order: identity for terms already canonical, then the alias
    table, then (only when a judgment backend is wired in) a model call. The
    result is always a canonical table term or None; the backend cannot
    introduce vocabulary.
    """
    canonical = kb.entry(Table.MEDICATIONS_AND_DISEASES, term)
    if canonical is not None:
        return canonical.term
    category = kb.alias_map().get(normalize_term(term))
    if category is not None:
        entry = kb.entry(Table.MEDICATIONS_AND_DISEASES, category)
        return entry.term if entry is not None else None
    if backend is None:
        return None
    answer = _judge_category(kb, term, backend)
    if answer is None:
        return None
    entry = kb.entry(Table.MEDICATIONS_AND_DISEASES, answer)
    return entry.term if entry is not None else None


def _judge_category(kb: KnowledgeBase, term: str, backend) -> str | None:
    # Imported here to keep the matching layer importable without the
    # backend machinery.
    from .lm_backend import CompletionKind, Prompt, PromptTurn, complete as backend_complete
    from .errors import BackendError

    categories = [e.term for e in kb.medications_and_diseases]
    prompt = Prompt(
        system=(
            "Decide whether the given term is a specific form of one of the "
            "known contraindication categories. Answer with exactly one "
            "category name from the list, or the word none."
        ),
        history=(
            PromptTurn(role="state", content=f"term={term!r} categories={categories!r}"),
        ),
        tool_schemas=(),
    )
    try:
        completion = backend_complete(backend, prompt)
    except BackendError as exc:
        raise BackendUnavailable(f"category judgment failed for {term!r}: {exc}") from exc
    if completion.kind is not CompletionKind.UTTERANCE:
        return None
    text = normalize_term(str(completion.content))
    if text == "none":
        return None
    for category in categories:
        if normalize_term(category) == text:
            return category
    return None

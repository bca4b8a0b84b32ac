"""Product and contraindication data: loading, lookup, exclusion logic.

The knowledge base is a single YAML document with four sections::

    products:
      - id: norlevex
        name: Norlevex 1.5 mg
        active_substance: levonorgestrel
        excipients: [lactose monohydrate, potato starch, magnesium stearate]
        contraindicating_allergies: [levonorgestrel, lactose monohydrate, ...]
        contraindicating_conditions: [Severe Malabsorption Disorder, ...]
    allergies:
      - term: lactose monohydrate
        kind: allergy
        condition: severe lactose intolerance
        severity_question: Is your lactose intolerance severe?
    medications_and_diseases:
      - term: Asthma
        kind: disease
        condition: treated with glucocorticoid medication
        severity_question: Do you currently use glucocorticoid medication for your asthma?
    aliases:
      - alias: Celiac disease
        category: Severe Malabsorption Disorder

An entry with a ``condition`` only contraindicates when the recorded answer
for its term is true; asking that question is the caller's job, signalled by
UnansweredCondition.

Terms are unique within each table after normalization. The same term may
appear in both tables (an allergy questionnaire and a disease list can
legitimately share a word such as asthma); the two entries are independent.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import DanglingReference, DocumentSyntaxError, DuplicateName, UnansweredCondition, ValidationError


class Table(str, Enum):
    ALLERGIES = "allergies"
    MEDICATIONS_AND_DISEASES = "medications_and_diseases"


class EntryKind(str, Enum):
    ALLERGY = "allergy"
    MEDICATION = "medication"
    DISEASE = "disease"
    STATE = "state"


def normalize_term(term: str) -> str:
    """Lowercase and collapse whitespace; the comparison key for all terms."""
    return " ".join(term.lower().split())


@dataclass(frozen=True)
class ContraindicationEntry:
    term: str
    table: Table
    kind: EntryKind
    condition: str | None = None
    severity_question: str | None = None

    @property
    def conditional(self) -> bool:
        return self.condition is not None


@dataclass(frozen=True)
class CategoryAlias:
    alias: str
    category: str


@dataclass(frozen=True)
class Product:
    id: str
    name: str
    active_substance: str
    excipients: tuple[str, ...]
    contraindicating_allergies: tuple[str, ...]
    contraindicating_conditions: tuple[str, ...]


@dataclass(frozen=True)
class KnowledgeBase:
    products: tuple[Product, ...]
    allergies: tuple[ContraindicationEntry, ...]
    medications_and_diseases: tuple[ContraindicationEntry, ...]
    aliases: tuple[CategoryAlias, ...]

    def entries(self, table: Table) -> tuple[ContraindicationEntry, ...]:
        if table is Table.ALLERGIES:
            return self.allergies
        return self.medications_and_diseases

    def entry(self, table: Table, term: str) -> ContraindicationEntry | None:
        key = normalize_term(term)
        for e in self.entries(table):
            if normalize_term(e.term) == key:
                return e
        return None

    def alias_map(self) -> dict[str, str]:
        """normalized alias -> canonical category term."""
        return {normalize_term(a.alias): a.category for a in self.aliases}

    def product(self, product_id: str) -> Product | None:
        for p in self.products:
            if p.id == product_id:
                return p
        return None


def terms(kb: KnowledgeBase, table: Table) -> list[str]:
    """Canonical terms of one table, in document order."""
    return [e.term for e in kb.entries(table)]


_ENTRY_KIND_DEFAULT = {Table.ALLERGIES: EntryKind.ALLERGY, Table.MEDICATIONS_AND_DISEASES: EntryKind.DISEASE}


def _parse_entries(raw: object, table: Table) -> list[ContraindicationEntry]:
    if not isinstance(raw, list):
        raise DocumentSyntaxError(f"{table.value} must be a list")
    out: list[ContraindicationEntry] = []
    for item in raw:
        if isinstance(item, str):
            out.append(ContraindicationEntry(term=item, table=table, kind=_ENTRY_KIND_DEFAULT[table]))
            continue
        if not isinstance(item, Mapping) or "term" not in item:
            raise DocumentSyntaxError(f"{table.value} entries need a term")
        condition = item.get("condition")
        question = item.get("severity_question")
        if condition is not None and not str(condition).strip():
            raise ValidationError(f"entry {item['term']}: condition must be non-empty when present")
        if question is not None and condition is None:
            raise ValidationError(f"entry {item['term']}: severity_question requires a condition")
        try:
            kind = EntryKind(str(item.get("kind", _ENTRY_KIND_DEFAULT[table].value)))
        except ValueError as exc:
            raise ValidationError(f"entry {item['term']}: {exc}") from exc
        out.append(
            ContraindicationEntry(
                term=str(item["term"]),
                table=table,
                kind=kind,
                condition=(str(condition) if condition is not None else None),
                severity_question=(str(question) if question is not None else None),
            )
        )
    return out


def load_kb(document: str) -> KnowledgeBase:
    """Parse and validate a knowledge base document.

    Referential integrity: every term a product or alias mentions must exist
    in the corresponding table, and terms must be unique per table.
    """
    try:
        raw = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError(f"knowledge base is not valid YAML: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise DocumentSyntaxError("knowledge base must be a mapping at top level")
    for key in ("products", "allergies", "medications_and_diseases"):
        if key not in raw:
            raise DocumentSyntaxError(f"knowledge base missing required key: {key}")

    allergies = _parse_entries(raw["allergies"], Table.ALLERGIES)
    meds = _parse_entries(raw["medications_and_diseases"], Table.MEDICATIONS_AND_DISEASES)

    for table_name, entries in (("allergies", allergies), ("medications_and_diseases", meds)):
        seen: set[str] = set()
        for e in entries:
            key = normalize_term(e.term)
            if key in seen:
                raise DuplicateName(f"duplicate term in {table_name}: {e.term}")
            seen.add(key)

    allergy_terms = {normalize_term(e.term) for e in allergies}
    med_terms = {normalize_term(e.term) for e in meds}

    aliases: list[CategoryAlias] = []
    seen_aliases: set[str] = set()
    for item in raw.get("aliases") or []:
        if not isinstance(item, Mapping) or "alias" not in item or "category" not in item:
            raise DocumentSyntaxError("aliases entries need alias and category")
        alias = CategoryAlias(alias=str(item["alias"]), category=str(item["category"]))
        key = normalize_term(alias.alias)
        if key in seen_aliases:
            raise DuplicateName(f"duplicate alias: {alias.alias}")
        seen_aliases.add(key)
        # Categories live in the medications and diseases table; that is the
        # closed co-domain of contraindication classification.
        if normalize_term(alias.category) not in med_terms:
            raise DanglingReference(
                f"alias {alias.alias!r} points to unknown category {alias.category!r}"
            )
        aliases.append(alias)

    products: list[Product] = []
    seen_ids: set[str] = set()
    if not isinstance(raw["products"], list):
        raise DocumentSyntaxError("products must be a list")
    for item in raw["products"]:
        if not isinstance(item, Mapping):
            raise DocumentSyntaxError("each product must be a mapping")
        try:
            product = Product(
                id=str(item["id"]),
                name=str(item["name"]),
                active_substance=str(item["active_substance"]),
                excipients=tuple(str(x) for x in item.get("excipients") or ()),
                contraindicating_allergies=tuple(str(x) for x in item.get("contraindicating_allergies") or ()),
                contraindicating_conditions=tuple(str(x) for x in item.get("contraindicating_conditions") or ()),
            )
        except KeyError as exc:
            raise ValidationError(f"product missing field {exc}") from exc
        if product.id in seen_ids:
            raise DuplicateName(f"duplicate product id: {product.id}")
        seen_ids.add(product.id)
        for term in product.excipients:
            if normalize_term(term) not in allergy_terms:
                raise DanglingReference(f"product {product.id}: excipient {term!r} not in allergies table")
        for term in product.contraindicating_allergies:
            if normalize_term(term) not in allergy_terms:
                raise DanglingReference(f"product {product.id}: allergy {term!r} not in allergies table")
        for term in product.contraindicating_conditions:
            if normalize_term(term) not in med_terms:
                raise DanglingReference(
                    f"product {product.id}: condition {term!r} not in medications_and_diseases table"
                )
        products.append(product)

    return KnowledgeBase(
        products=tuple(products),
        allergies=tuple(allergies),
        medications_and_diseases=tuple(meds),
        aliases=tuple(aliases),
    )


def load_kb_file(path: str | Path) -> KnowledgeBase:
    """Read and validate a knowledge base from a file."""
    return load_kb(Path(path).read_text(encoding="utf-8"))


@dataclass
class Partition:
    """Disjoint and exhaustive split of the product list.

    excluded pairs each product with every term that rules it out.
    """

    safe: list[Product]
    excluded: list[tuple[Product, tuple[str, ...]]]

    def safe_ids(self) -> list[str]:
        return [p.id for p in self.safe]

    def excluded_ids(self) -> list[str]:
        return [p.id for p, _ in self.excluded]


def _term_applies(
    kb: KnowledgeBase,
    table: Table,
    term: str,
    condition_answers: Mapping[str, bool],
) -> bool:
    """Whether a matched term is currently in force, resolving its gate.

    Raises UnansweredCondition when the entry is conditional and no answer
    has been recorded for it.
    """
    entry = kb.entry(table, term)
    if entry is None:
        return False
    if not entry.conditional:
        return True
    key = normalize_term(entry.term)
    answers = {normalize_term(k): v for k, v in condition_answers.items()}
    if key not in answers:
        raise UnansweredCondition(entry.term, entry.severity_question or entry.condition)
    return bool(answers[key])


def products_excluded_by(
    kb: KnowledgeBase,
    matched_terms: Sequence[str],
    condition_answers: Mapping[str, bool] | None = None,
    table: Table | None = None,
) -> Partition:
    """Partition products into safe and excluded for the matched terms.

    matched_terms must be canonical table terms. With ``table`` given, only
    that table's entries are consulted; otherwise a term counts against every
    table it appears in.
    """
    condition_answers = condition_answers or {}
    tables = [table] if table is not None else [Table.ALLERGIES, Table.MEDICATIONS_AND_DISEASES]

    in_force: list[tuple[Table, str]] = []  # (table, canonical term)
    for term in matched_terms:
        for t in tables:
            entry = kb.entry(t, term)
            if entry is None:
                continue
            if _term_applies(kb, t, term, condition_answers):
                in_force.append((t, normalize_term(entry.term)))

    safe: list[Product] = []
    excluded: list[tuple[Product, tuple[str, ...]]] = []
    for product in kb.products:
        reasons: list[str] = []
        allergy_keys = {normalize_term(t) for t in product.contraindicating_allergies}
        condition_keys = {normalize_term(t) for t in product.contraindicating_conditions}
        for t, key in in_force:
            listed = allergy_keys if t is Table.ALLERGIES else condition_keys
            if key in listed:
                canonical = next(
                    e.term for e in kb.entries(t) if normalize_term(e.term) == key
                )
                if canonical not in reasons:
                    reasons.append(canonical)
        if reasons:
            excluded.append((product, tuple(reasons)))
        else:
            safe.append(product)
    return Partition(safe=safe, excluded=excluded)

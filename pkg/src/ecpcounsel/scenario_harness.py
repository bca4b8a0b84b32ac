"""Scripted customer scenarios: loading, execution, and verdicts.

A scenario file describes one simulated customer: what they say turn by turn,
which backend behavior profile drives the conversationalist, and what must be
true at the end. The harness replays the script through the full runtime and
grades the result against an oracle computed here, from the scenario's own
term list, by a deliberately separate implementation of the exclusion rules.

Script entry forms::

    - say: "Hi, I need the morning-after pill."            # unconditional
    - when: "how many hours"                               # assert the last
      say: "About 14 hours ago."                           # reply matches
    - branch:                                              # first match speaks
        - when: "severe"
          say: "Yes, severe."
        - when: "breastfeeding"
          say: "No."

A guarded entry whose pattern does not match the last reply means the
conversation drifted; the run stops with ScenarioStuck rather than producing
a misleading verdict.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .agent_graph import (
    CONVERSATIONALIST,
    PAYLOAD_FOLLOWUP,
    SharedMemory,
    fixed_clock,
    run_turn,
)
from .agents import build_runtime
from .conversation_spec import ConversationSpec, mandatory_coverage
from .errors import DocumentSyntaxError, ScenarioStuck, ValidationError
from .knowledge_base import KnowledgeBase, normalize_term
from .rulebook import PROFILES, build_backend


# -------- scenario model --------


@dataclass(frozen=True)
class Scenario:
    id: str
    risk_area: str
    use_context: str
    evaluation_parameters: tuple[str, ...]
    backend_profile: str
    customer_script: tuple[Mapping[str, object], ...]
    expected: Mapping[str, object]


def load_scenario(document: str) -> Scenario:
    try:
        raw = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError(f"scenario is not valid YAML: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise DocumentSyntaxError("scenario must be a mapping at top level")
    for key in ("id", "customer_script", "expected"):
        if key not in raw:
            raise DocumentSyntaxError(f"scenario missing required key: {key}")
    profile = str(raw.get("backend_profile", "standard"))
    if profile not in PROFILES:
        raise ValidationError(f"scenario {raw['id']}: unknown backend profile {profile!r}")
    script = raw["customer_script"]
    if not isinstance(script, list) or not script:
        raise ValidationError(f"scenario {raw['id']}: customer_script must be a non-empty list")
    for i, entry in enumerate(script):
        if not isinstance(entry, Mapping) or not ({"say", "branch"} & set(entry)):
            raise ValidationError(f"scenario {raw['id']}: script entry #{i} needs say or branch")
    return Scenario(
        id=str(raw["id"]),
        risk_area=str(raw.get("risk_area", "")),
        use_context=str(raw.get("use_context", "")),
        evaluation_parameters=tuple(str(p) for p in raw.get("evaluation_parameters") or ()),
        backend_profile=profile,
        customer_script=tuple(dict(e) for e in script),
        expected=dict(raw["expected"]),
    )


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def load_scenario_dir(path: str | Path) -> list[Scenario]:
    scenarios = [load_scenario_file(p) for p in sorted(Path(path).glob("*.yaml"))]
    if not scenarios:
        raise ValidationError(f"no scenario files found under {path}")
    return scenarios


# -------- independent exclusion oracle --------


def oracle_safe_products(
    kb: KnowledgeBase,
    allergy_terms: Sequence[str],
    med_terms: Sequence[str],
    condition_answers: Mapping[str, bool],
) -> set[str]:
    """Expected safe set, recomputed from raw fixture data with plain loops.

    This function intentionally shares no logic with the runtime's partition
    code: conditional entries are re-read from the tables here, and term
    comparison is done inline. If the two implementations drift apart, the
    scenario verdicts catch it.
    """

    def canon(s: str) -> str:
        return " ".join(str(s).lower().split())

    answers = {canon(k): bool(v) for k, v in condition_answers.items()}

    def in_force(table_entries, reported: Sequence[str]) -> set[str]:
        active: set[str] = set()
        for entry in table_entries:
            for term in reported:
                if canon(term) != canon(entry.term):
                    continue
                if entry.condition is None:
                    active.add(canon(entry.term))
                elif answers.get(canon(entry.term)) is True:
                    active.add(canon(entry.term))
        return active

    active_allergies = in_force(kb.allergies, allergy_terms)
    active_conditions = in_force(kb.medications_and_diseases, med_terms)

    safe: set[str] = set()
    for product in kb.products:
        hit = False
        for term in product.contraindicating_allergies:
            if canon(term) in active_allergies:
                hit = True
        for term in product.contraindicating_conditions:
            if canon(term) in active_conditions:
                hit = True
        if not hit:
            safe.add(product.id)
    return safe


# -------- execution --------


@dataclass
class ScenarioResult:
    scenario_id: str
    passed: bool
    failures: list[str]
    turns: int
    duration_s: float
    memory: SharedMemory

    @property
    def transcript(self) -> str:
        return self.memory.transcript_text()


@dataclass
class SuiteReport:
    results: list[ScenarioResult] = field(default_factory=list)
    duration_s: float = 0.0

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def passed_count(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def all_passed(self) -> bool:
        return self.passed_count == self.total


def _next_utterance(scenario: Scenario, entry: Mapping, last_reply: str | None) -> str:
    if "branch" in entry:
        for option in entry["branch"]:  # type: ignore[index]
            pattern = str(option.get("when", ""))
            if last_reply is not None and re.search(pattern, last_reply, re.I):
                return str(option["say"])
        raise ScenarioStuck(
            f"scenario {scenario.id}: no branch matched reply {last_reply!r}"
        )
    if "when" in entry:
        pattern = str(entry["when"])
        if last_reply is None or not re.search(pattern, last_reply, re.I):
            raise ScenarioStuck(
                f"scenario {scenario.id}: expected the reply to match {pattern!r}, "
                f"got {last_reply!r}"
            )
    return str(entry["say"])


def _relayed_followups(memory: SharedMemory) -> list[Mapping]:
    out = []
    for entry in memory.entries:
        if entry.kind != "handoff":
            continue
        payload = entry.payload
        if (
            payload.get("direction") == "response"
            and payload.get("payload_kind") == PAYLOAD_FOLLOWUP
            and payload.get("to") == CONVERSATIONALIST
        ):
            out.append(payload.get("payload") or {})
    return out


def _grade(scenario: Scenario, kb: KnowledgeBase, spec: ConversationSpec, memory: SharedMemory) -> list[str]:
    expected = scenario.expected
    failures: list[str] = []

    if "safe_products" in expected:
        runtime_safe = set((memory.working.partition or {}).get("safe") or [])
        expected_safe = set(expected["safe_products"] or [])  # type: ignore[arg-type]
        oracle_spec = expected.get("oracle") or {}
        oracle_safe = oracle_safe_products(
            kb,
            oracle_spec.get("allergy_terms") or [],  # type: ignore[union-attr]
            oracle_spec.get("med_terms") or [],  # type: ignore[union-attr]
            oracle_spec.get("condition_answers") or {},  # type: ignore[union-attr]
        )
        if oracle_safe != expected_safe:
            failures.append(
                f"expected safe set {sorted(expected_safe)} disagrees with oracle {sorted(oracle_safe)}"
            )
        if runtime_safe != oracle_safe:
            failures.append(
                f"runtime safe set {sorted(runtime_safe)} disagrees with oracle {sorted(oracle_safe)}"
            )

    if "complete" in expected:
        coverage = mandatory_coverage(spec, memory.tracker)
        complete = coverage == 1.0
        if complete != bool(expected["complete"]):
            failures.append(
                f"mandatory coverage {coverage:.3f}; expected complete={expected['complete']}"
            )

    if "escalation" in expected:
        if memory.escalated != bool(expected["escalation"]):
            failures.append(f"escalated={memory.escalated}; expected {expected['escalation']}")

    if "retry_flags" in expected:
        retries = sum(
            1
            for e in memory.entries
            if e.kind == "flag" and e.payload.get("code") == "self_correction_retry"
        )
        if retries != int(expected["retry_flags"]):  # type: ignore[arg-type]
            failures.append(f"{retries} retry flags; expected {expected['retry_flags']}")

    for want in expected.get("followups") or []:  # type: ignore[union-attr]
        seen = _relayed_followups(memory)
        kind = str(want.get("kind", ""))
        contains = str(want.get("question_contains", ""))
        matched = any(
            (not kind or f.get("kind") == kind)
            and (not contains or contains.lower() in str(f.get("question", "")).lower())
            for f in seen
        )
        if not matched:
            failures.append(f"no follow-up matching kind={kind!r} contains={contains!r}")

    if "canonical_terms" in expected:
        got = {(t, normalize_term(x)) for t, x in memory.working.canonical}
        want_terms = {
            (str(t), normalize_term(str(x))) for t, x in (expected["canonical_terms"] or [])  # type: ignore[union-attr]
        }
        if got != want_terms:
            failures.append(f"canonical terms {sorted(got)}; expected {sorted(want_terms)}")

    if "condition_answers" in expected:
        got_answers = dict(memory.working.condition_answers)
        want_answers = {
            normalize_term(str(k)): bool(v)
            for k, v in (expected["condition_answers"] or {}).items()  # type: ignore[union-attr]
        }
        if got_answers != want_answers:
            failures.append(f"condition answers {got_answers}; expected {want_answers}")

    for code in expected.get("flags_contain") or []:  # type: ignore[union-attr]
        if not any(
            e.kind == "flag" and e.payload.get("code") == str(code) for e in memory.entries
        ):
            failures.append(f"no flag with code {code!r} in the transcript")

    replies = memory.replies()
    if "final_reply_contains" in expected:
        needle = str(expected["final_reply_contains"])
        if not replies or needle.lower() not in replies[-1].lower():
            failures.append(f"final reply does not contain {needle!r}")

    for needle in expected.get("any_reply_contains") or []:  # type: ignore[union-attr]
        if not any(str(needle).lower() in r.lower() for r in replies):
            failures.append(f"no reply contains {needle!r}")

    return failures


def run_scenario(
    spec: ConversationSpec,
    kb: KnowledgeBase,
    scenario: Scenario,
    clock_start: int = 1700000000,
) -> ScenarioResult:
    runtime = build_runtime(spec, kb)
    backend = build_backend(scenario.backend_profile, spec, kb)
    memory = SharedMemory(spec, clock=fixed_clock(clock_start))
    started = time.perf_counter()
    turns = 0
    for entry in scenario.customer_script:
        text = _next_utterance(scenario, entry, memory.last_reply())
        run_turn(runtime, memory, text, backend)
        turns += 1
        if memory.escalated:
            break
    failures = _grade(scenario, kb, spec, memory)
    return ScenarioResult(
        scenario_id=scenario.id,
        passed=not failures,
        failures=failures,
        turns=turns,
        duration_s=time.perf_counter() - started,
        memory=memory,
    )


def run_suite(
    spec: ConversationSpec,
    kb: KnowledgeBase,
    scenarios: Sequence[Scenario],
    clock_start: int = 1700000000,
) -> SuiteReport:
    report = SuiteReport()
    started = time.perf_counter()
    for scenario in scenarios:
        report.results.append(run_scenario(spec, kb, scenario, clock_start=clock_start))
    report.duration_s = time.perf_counter() - started
    return report

"""The three counseling agents: profiles, policies, and their tools.

The conversationalist fronts the conversation and is driven by backend
completions. The symptom assessor and medicine interpreter are deterministic
policies: given the same mentions, knowledge base, and recorded answers they
always produce the same canonical terms and the same product partition. The
backend only enters their work when a lay term needs a category judgment and
no alias covers it.

Prompts and worked examples live in versioned YAML files under
``ecpcounsel/prompts``; the same material is rendered into the system prompt
whether the backend is scripted or a remote model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Sequence

import yaml

from .agent_graph import (
    CONVERSATIONALIST,
    MEDICINE_INTERPRETER,
    SYMPTOM_ASSESSOR,
    PAYLOAD_CANONICAL_LIST,
    PAYLOAD_FOLLOWUP,
    PAYLOAD_PARTITION,
    PAYLOAD_RAW_MENTIONS,
    Graph,
    Runtime,
    SharedMemory,
    ToolContext,
    ToolRegistry,
    TurnContext,
    check_handoff,
    register_tool,
    standard_graph,
)
from .conversation_spec import (
    ConversationSpec,
    RiskLevel,
    StepKind,
    StepStatus,
    coverage_report,
    next_pending_steps,
)
from .errors import ContractViolation, DanglingReference, ToolError, UnansweredCondition, ValidationError
from .knowledge_base import KnowledgeBase, Partition, Table, normalize_term
from .lm_backend import Backend, Completion, Prompt, PromptTurn, ToolSchema, complete as backend_complete
from .matching_tools import (
    SCORE_DECIMALS,
    MatchResult,
    MatchThresholds,
    classify_contraindication,
    check_pill_contraindicating_allergies,
    check_pill_contraindicating_medications_and_diseases,
    find_most_similar_word_allergies,
    find_most_similar_word_regular_medications_and_diseases,
)


# -------- profiles --------


@dataclass(frozen=True)
class PeerContract:
    purpose: str
    input: str
    output: str


@dataclass(frozen=True)
class FewShot:
    kind: str
    situation: str
    action: str


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    name: str
    purpose: str
    rules: tuple[str, ...]
    tools: tuple[str, ...]
    peers: dict[str, PeerContract] = field(default_factory=dict)
    few_shots: tuple[FewShot, ...] = ()


def load_profile(document: str) -> AgentProfile:
    raw = yaml.safe_load(document)
    if not isinstance(raw, Mapping):
        raise ValidationError("agent profile must be a mapping")
    for key in ("agent_id", "name", "purpose"):
        if key not in raw:
            raise ValidationError(f"agent profile missing {key}")
    peers = {}
    for peer_id, contract in (raw.get("peers") or {}).items():
        peers[str(peer_id)] = PeerContract(
            purpose=str(contract.get("purpose", "")),
            input=str(contract.get("input", "")),
            output=str(contract.get("output", "")),
        )
    return AgentProfile(
        agent_id=str(raw["agent_id"]),
        name=str(raw["name"]),
        purpose=str(raw["purpose"]).strip(),
        rules=tuple(str(r) for r in raw.get("rules") or ()),
        tools=tuple(str(t) for t in raw.get("tools") or ()),
        peers=peers,
        few_shots=tuple(
            FewShot(kind=str(f["kind"]), situation=str(f["situation"]), action=str(f["action"]))
            for f in raw.get("few_shots") or ()
        ),
    )


def load_default_profiles() -> dict[str, AgentProfile]:
    profiles: dict[str, AgentProfile] = {}
    base = resources.files("ecpcounsel").joinpath("prompts")
    for agent_id in (CONVERSATIONALIST, SYMPTOM_ASSESSOR, MEDICINE_INTERPRETER):
        text = base.joinpath(f"{agent_id}.yaml").read_text(encoding="utf-8")
        profiles[agent_id] = load_profile(text)
    return profiles


def validate_profiles(profiles: Mapping[str, AgentProfile], graph: Graph, registry: ToolRegistry) -> None:
    """Profiles may only claim tools that exist and peers they have edges to."""
    for agent_id, profile in profiles.items():
        if profile.agent_id != agent_id:
            raise ValidationError(f"profile {profile.agent_id!r} filed under {agent_id!r}")
        for tool in profile.tools:
            if tool not in registry:
                raise DanglingReference(f"profile {agent_id}: unknown tool {tool!r}")
        for peer in profile.peers:
            if graph.edge(agent_id, peer) is None:
                raise DanglingReference(f"profile {agent_id}: no edge to peer {peer!r}")


def render_system_prompt(profile: AgentProfile, spec: ConversationSpec, kb: KnowledgeBase) -> str:
    lines = [
        f"You are {profile.name}, the {profile.agent_id.replace('_', ' ')} of a pharmacy counseling team.",
        "",
        profile.purpose,
        "",
        "Rules:",
    ]
    lines += [f"- {rule}" for rule in profile.rules]
    if profile.peers:
        lines += ["", "Colleagues you can hand work to:"]
        for peer_id, contract in profile.peers.items():
            lines.append(f"- {peer_id}: {contract.purpose} (send {contract.input}, receive {contract.output})")
    lines += ["", f"Counseling procedure for {spec.medication_id} (version {spec.version}):"]
    for i, step in enumerate(spec.steps, start=1):
        marker = "required" if step.mandatory else "optional"
        lines.append(f"{i}. [{step.id}] ({step.kind.value}, {step.risk_level.value}, {marker}) {step.title}")
    lines += ["", "Products on hand:"]
    for product in kb.products:
        lines.append(f"- {product.name} ({product.active_substance})")
    if profile.few_shots:
        lines += ["", "Worked examples:"]
        for shot in profile.few_shots:
            lines.append(f"[{shot.kind}] Situation: {shot.situation} Action: {shot.action}")
    return "\n".join(lines)


# -------- conversationalist --------


def build_state_view(runtime: Runtime, memory: SharedMemory, ctx: TurnContext) -> dict:
    """Machine readable snapshot appended to every completion request."""
    spec, tracker, ws = runtime.spec, memory.tracker, memory.working
    pending = next_pending_steps(spec, tracker)
    coverage = coverage_report(spec, tracker)

    def brief(step_id: str) -> dict:
        step = spec.step(step_id)
        return {
            "id": step.id,
            "kind": step.kind.value,
            "data_key": step.data_key,
            "risk": step.risk_level.value,
            "mandatory": step.mandatory,
            "status": tracker.statuses[step.id].value,
            "title": step.title,
        }

    partition = None
    if ws.partition is not None:
        partition = {"safe": ws.partition.get("safe", []), "excluded": ws.partition.get("excluded", [])}

    return {
        "turn": ctx.turn,
        "customer_input": ctx.customer_input,
        "turn_actions": list(ctx.turn_actions),
        "marks_this_turn": list(ctx.marks),
        "asked_step": brief(ws.asked_step) if ws.asked_step else None,
        "next_steps": [brief(s.id) for s in pending],
        "pending_followup": ws.pending_followup,
        "pending_record": ws.pending_record,
        "canonical_terms": [[t, x] for t, x in ws.canonical],
        "condition_answers": dict(sorted(ws.condition_answers.items())),
        "partition": partition,
        "partition_fresh": ws.partition_fresh(),
        "reconfirm_pending": [
            s.id for s in spec.steps if tracker.statuses[s.id] is StepStatus.RECONFIRM_NEEDED
        ],
        "collected": {k: v.value for k, v in tracker.collected.items()},
        "mandatory_remaining": list(coverage.mandatory_remaining),
        "complete": coverage.complete,
        "last_observation": ctx.observations[-1] if ctx.observations else None,
    }


def build_conversationalist_prompt(runtime: Runtime, memory: SharedMemory, ctx: TurnContext) -> Prompt:
    profile = runtime.profiles[CONVERSATIONALIST]
    turns: list[PromptTurn] = []
    for entry in memory.entries:
        if entry.kind == "customer_message":
            turns.append(PromptTurn("customer", str(entry.payload["text"])))
        elif entry.kind == "reply":
            turns.append(PromptTurn("agent", str(entry.payload["text"])))
    for observation in ctx.observations:
        turns.append(
            PromptTurn("observation", json.dumps(observation, sort_keys=True, ensure_ascii=False, default=str))
        )
    state = build_state_view(runtime, memory, ctx)
    turns.append(PromptTurn("state", json.dumps(state, sort_keys=True, ensure_ascii=False)))
    return Prompt(
        system=render_system_prompt(profile, runtime.spec, runtime.kb),
        history=tuple(turns),
        tool_schemas=runtime.registry.schemas(profile.tools),
    )


def conversationalist_policy(
    runtime: Runtime, memory: SharedMemory, ctx: TurnContext, backend: Backend
) -> Completion:
    """One action decision: ask the backend and validate what comes back.

    Hard safety rules (ordering, the partition-before-recommendation gate,
    handoff legality) are enforced where the actions land, in the tools and
    the graph, so they bind any backend equally.
    """
    prompt = build_conversationalist_prompt(runtime, memory, ctx)
    return backend_complete(backend, prompt)


def reply_metadata(runtime: Runtime, memory: SharedMemory, text: str) -> dict:
    """Payload for a reply entry: which elicit step the reply is asking about.

    An elicit only counts as asked when no mandatory inform or decide step
    still stands before it; until then the conversation is informing, not
    questioning. Optional non-elicit steps do not hold a question back.
    """
    ws = memory.working
    if ws.pending_followup is not None:
        return {"text": text, "asked_step": None, "followup": True}
    asked = None
    for step in next_pending_steps(runtime.spec, memory.tracker):
        if step.kind is StepKind.ELICIT:
            asked = step.id
            break
        if step.mandatory:
            break
    return {"text": text, "asked_step": asked, "followup": False}


# -------- symptom assessor --------


@dataclass
class AssessorFinding:
    additions: list[tuple[str, str]]  # (table value, canonical vocabulary term)
    dropped: list[str]
    followup: dict | None
    tool_log: list[dict]


def _log_find(name: str, result: MatchResult) -> dict:
    return {
        "name": name,
        "arguments": {"term": result.query, "threshold": result.threshold_used},
        "ok": True,
        "result": {
            "query": result.query,
            "threshold": result.threshold_used,
            "matches": [[t, round(s, SCORE_DECIMALS)] for t, s in result.matches],
        },
    }


def _select_match(mention: str, result: MatchResult) -> tuple[str | None, bool]:
    """Pick a single vocabulary term from a match set.

    Normalized equality is decisive even when other terms scored the same;
    two or more non-exact candidates mean the customer has to choose.
    """
    terms = result.terms()
    for term in terms:
        if normalize_term(term) == normalize_term(mention):
            return term, False
    if len(terms) == 1:
        return terms[0], False
    if len(terms) >= 2:
        return None, True
    return None, False


def symptom_assessor_policy(
    mentions: Sequence[str],
    kb: KnowledgeBase,
    thresholds: MatchThresholds | None = None,
    none_reported: bool = False,
    classify_backend: Backend | None = None,
) -> AssessorFinding:
    """Resolve raw customer phrases to canonical contraindication terms.

    Each mention is matched against both tables at the default threshold.
    Alias hits are re-labeled to their category. A mention with two or more
    live candidates becomes a follow-up question instead of a guess, and a
    mention matching nothing is dropped with a note.
    """
    thresholds = thresholds or MatchThresholds()
    finding = AssessorFinding(additions=[], dropped=[], followup=None, tool_log=[])
    if none_reported:
        return finding

    for mention in mentions:
        mention = mention.strip()
        if not mention:
            continue
        allergy_result = find_most_similar_word_allergies(kb, mention, thresholds.default_threshold)
        finding.tool_log.append(_log_find("find_most_similar_word_allergies", allergy_result))
        med_result = find_most_similar_word_regular_medications_and_diseases(
            kb, mention, thresholds.default_threshold
        )
        finding.tool_log.append(
            _log_find("find_most_similar_word_regular_medications_and_diseases", med_result)
        )

        allergy_term, allergy_ambiguous = _select_match(mention, allergy_result)
        med_term, med_ambiguous = _select_match(mention, med_result)

        if (allergy_ambiguous or med_ambiguous) and finding.followup is None:
            candidates: list[list[str]] = []
            if allergy_ambiguous:
                candidates += [[Table.ALLERGIES.value, t] for t in allergy_result.terms()]
            if med_ambiguous:
                candidates += [[Table.MEDICATIONS_AND_DISEASES.value, t] for t in med_result.terms()]
            names = " or ".join(t for _, t in candidates)
            finding.followup = {
                "kind": "ambiguous",
                "mention": mention,
                "candidates": candidates,
                "question": (
                    f"I found more than one possible match for \"{mention}\". "
                    f"Could you tell me which one applies: {names}?"
                ),
            }

        if allergy_term is not None:
            finding.additions.append((Table.ALLERGIES.value, allergy_term))

        if med_term is not None:
            category = classify_contraindication(kb, med_term, classify_backend)
            finding.tool_log.append(
                {
                    "name": "classify_contraindication",
                    "arguments": {"term": med_term},
                    "ok": True,
                    "result": {"term": med_term, "category": category},
                }
            )
            if category is not None:
                finding.additions.append((Table.MEDICATIONS_AND_DISEASES.value, category))
        elif (
            allergy_term is None
            and not allergy_ambiguous
            and not med_ambiguous
        ):
            category = classify_contraindication(kb, mention, classify_backend)
            finding.tool_log.append(
                {
                    "name": "classify_contraindication",
                    "arguments": {"term": mention},
                    "ok": True,
                    "result": {"term": mention, "category": category},
                }
            )
            if category is not None:
                finding.additions.append((Table.MEDICATIONS_AND_DISEASES.value, category))
            else:
                finding.dropped.append(mention)

    deduped: list[tuple[str, str]] = []
    for table, term in finding.additions:
        if not any(t == table and normalize_term(x) == normalize_term(term) for t, x in deduped):
            deduped.append((table, term))
    finding.additions = deduped
    return finding


# -------- medicine interpreter --------


@dataclass
class InterpreterFinding:
    partition: dict | None
    followup: dict | None
    corrected: list[tuple[str, str]]
    verified: list[tuple[str, str]]
    tool_log: list[dict]


def _merge_partitions(
    kb: KnowledgeBase,
    parts: Sequence[Partition],
    verified: Sequence[tuple[str, str]],
    condition_answers: Mapping[str, bool],
) -> dict:
    reasons_by_product: dict[str, list[str]] = {}
    for part in parts:
        for product, reasons in part.excluded:
            bucket = reasons_by_product.setdefault(product.id, [])
            for reason in reasons:
                if reason not in bucket:
                    bucket.append(reason)
    safe = [p.id for p in kb.products if p.id not in reasons_by_product]
    excluded = [[p.id, reasons_by_product[p.id]] for p in kb.products if p.id in reasons_by_product]
    return {
        "safe": safe,
        "excluded": excluded,
        "basis": {
            "terms": [[t, x] for t, x in verified],
            "answers": {normalize_term(k): bool(v) for k, v in condition_answers.items()},
        },
    }


def medicine_interpreter_policy(
    canonical_terms: Sequence[tuple[str, str]],
    condition_answers: Mapping[str, bool],
    kb: KnowledgeBase,
    thresholds: MatchThresholds | None = None,
) -> InterpreterFinding:
    """Re-verify the canonical list at the strict threshold and partition products.

    A term that no longer resolves cleanly comes back as a follow-up request
    rather than a silent guess; an unanswered conditional term does the same.
    """
    thresholds = thresholds or MatchThresholds()
    finding = InterpreterFinding(partition=None, followup=None, corrected=[], verified=[], tool_log=[])

    for table_value, term in canonical_terms:
        table = Table(table_value)
        if table is Table.ALLERGIES:
            result = find_most_similar_word_allergies(kb, term, thresholds.strict_threshold)
            finding.tool_log.append(_log_find("find_most_similar_word_allergies", result))
        else:
            result = find_most_similar_word_regular_medications_and_diseases(
                kb, term, thresholds.strict_threshold
            )
            finding.tool_log.append(
                _log_find("find_most_similar_word_regular_medications_and_diseases", result)
            )
        terms = result.terms()
        exact = next((t for t in terms if normalize_term(t) == normalize_term(term)), None)
        if exact is not None:
            finding.verified.append((table_value, exact))
        elif len(terms) == 1:
            finding.corrected.append((term, terms[0]))
            finding.verified.append((table_value, terms[0]))
        else:
            finding.followup = {
                "kind": "reverify",
                "term": term,
                "question": (
                    f"I need to double-check one thing: you mentioned \"{term}\" "
                    "but I could not verify it. Could you describe it in different words?"
                ),
            }
            return finding

    allergy_terms = [t for tbl, t in finding.verified if tbl == Table.ALLERGIES.value]
    med_terms = [t for tbl, t in finding.verified if tbl == Table.MEDICATIONS_AND_DISEASES.value]
    answers = dict(condition_answers)

    try:
        part_a = check_pill_contraindicating_allergies(kb, allergy_terms, answers)
        finding.tool_log.append(
            {
                "name": "check_pill_contraindicating_allergies",
                "arguments": {"matched_terms": allergy_terms, "condition_answers": answers},
                "ok": True,
                "result": _partition_result(part_a),
            }
        )
        part_m = check_pill_contraindicating_medications_and_diseases(kb, med_terms, answers)
        finding.tool_log.append(
            {
                "name": "check_pill_contraindicating_medications_and_diseases",
                "arguments": {"matched_terms": med_terms, "condition_answers": answers},
                "ok": True,
                "result": _partition_result(part_m),
            }
        )
    except UnansweredCondition as exc:
        finding.tool_log.append(
            {
                "name": "check_pill_contraindication",
                "arguments": {"matched_terms": allergy_terms + med_terms},
                "ok": False,
                "error": str(exc),
            }
        )
        finding.followup = {
            "kind": "condition",
            "term": exc.term,
            "question": exc.question or f"Could you tell me a bit more about {exc.term}?",
        }
        return finding

    finding.partition = _merge_partitions(kb, [part_a, part_m], finding.verified, answers)
    return finding


def _partition_result(partition: Partition) -> dict:
    return {
        "safe": partition.safe_ids(),
        "excluded": [[p.id, list(reasons)] for p, reasons in partition.excluded],
    }


# -------- specialist execution (recorded in the shared transcript) --------


def _emit_tool_log(memory: SharedMemory, actor: str, log: Sequence[Mapping[str, Any]]) -> None:
    for item in log:
        memory.emit("tool_call", actor, {"name": item["name"], "arguments": item["arguments"]})
        if item.get("ok"):
            memory.emit("tool_result", actor, {"name": item["name"], "ok": True, "result": item["result"]})
        else:
            memory.emit("tool_result", actor, {"name": item["name"], "ok": False, "error": item["error"]})


def run_specialist(
    runtime: Runtime,
    memory: SharedMemory,
    ctx: TurnContext,
    target: str,
    payload_kind: str,
    body: Mapping[str, Any],
    backend: Backend,
) -> dict:
    """Execute a handoff from the conversationalist and return the observation."""
    if target == SYMPTOM_ASSESSOR and payload_kind == PAYLOAD_RAW_MENTIONS:
        return _run_symptom_assessor(runtime, memory, ctx, dict(body), backend)
    if target == MEDICINE_INTERPRETER and payload_kind == PAYLOAD_CANONICAL_LIST:
        memory.emit(
            "handoff",
            CONVERSATIONALIST,
            {
                "direction": "request",
                "from": CONVERSATIONALIST,
                "to": MEDICINE_INTERPRETER,
                "payload_kind": PAYLOAD_CANONICAL_LIST,
                "payload": dict(body),
            },
        )
        return _run_medicine_interpreter(runtime, memory, caller=CONVERSATIONALIST)
    raise ContractViolation(f"no specialist handles {payload_kind!r} at {target!r}")


def _run_symptom_assessor(
    runtime: Runtime,
    memory: SharedMemory,
    ctx: TurnContext,
    body: dict,
    backend: Backend,
) -> dict:
    memory.emit(
        "handoff",
        CONVERSATIONALIST,
        {
            "direction": "request",
            "from": CONVERSATIONALIST,
            "to": SYMPTOM_ASSESSOR,
            "payload_kind": PAYLOAD_RAW_MENTIONS,
            "payload": body,
        },
    )
    mentions = [str(m) for m in body.get("mentions", [])]
    none_reported = bool(body.get("none_reported"))
    memory.emit(
        "thought",
        SYMPTOM_ASSESSOR,
        {"text": f"resolving mentions {mentions!r} against both contraindication tables"},
    )
    finding = symptom_assessor_policy(
        mentions,
        runtime.kb,
        runtime.thresholds,
        none_reported=none_reported,
    )
    _emit_tool_log(memory, SYMPTOM_ASSESSOR, finding.tool_log)
    for term in finding.dropped:
        memory.emit(
            "flag",
            SYMPTOM_ASSESSOR,
            {"code": "irrelevant_term", "detail": f"no contraindication match for {term!r}; removed"},
        )

    if finding.followup is not None:
        followup = dict(finding.followup)
        if body.get("step_id"):
            followup["step_id"] = body["step_id"]
        if finding.additions:
            followup["additions"] = [[t, x] for t, x in finding.additions]
        check_handoff(runtime.graph, SYMPTOM_ASSESSOR, CONVERSATIONALIST, PAYLOAD_FOLLOWUP, "response")
        memory.emit(
            "handoff",
            SYMPTOM_ASSESSOR,
            {
                "direction": "response",
                "from": SYMPTOM_ASSESSOR,
                "to": CONVERSATIONALIST,
                "payload_kind": PAYLOAD_FOLLOWUP,
                "payload": followup,
            },
        )
        return {"payload_kind": PAYLOAD_FOLLOWUP, "payload": followup}

    merged: list[tuple[str, str]] = list(memory.working.canonical)
    for table, term in finding.additions:
        if not any(t == table and normalize_term(x) == normalize_term(term) for t, x in merged):
            merged.append((table, term))
    check_handoff(runtime.graph, SYMPTOM_ASSESSOR, MEDICINE_INTERPRETER, PAYLOAD_CANONICAL_LIST, "request")
    memory.emit(
        "handoff",
        SYMPTOM_ASSESSOR,
        {
            "direction": "request",
            "from": SYMPTOM_ASSESSOR,
            "to": MEDICINE_INTERPRETER,
            "payload_kind": PAYLOAD_CANONICAL_LIST,
            "payload": {
                "terms": [[t, x] for t, x in merged],
                "answers": dict(memory.working.condition_answers),
                "dropped": list(finding.dropped),
            },
        },
    )
    observation = _run_medicine_interpreter(runtime, memory, caller=SYMPTOM_ASSESSOR)

    check_handoff(
        runtime.graph, SYMPTOM_ASSESSOR, CONVERSATIONALIST, str(observation["payload_kind"]), "response"
    )
    memory.emit(
        "handoff",
        SYMPTOM_ASSESSOR,
        {
            "direction": "response",
            "from": SYMPTOM_ASSESSOR,
            "to": CONVERSATIONALIST,
            "payload_kind": observation["payload_kind"],
            "payload": observation["payload"],
        },
    )
    return observation


def _run_medicine_interpreter(runtime: Runtime, memory: SharedMemory, caller: str) -> dict:
    ws = memory.working
    memory.emit(
        "thought",
        MEDICINE_INTERPRETER,
        {"text": f"verifying {len(ws.canonical)} canonical terms at the strict threshold"},
    )
    finding = medicine_interpreter_policy(
        list(ws.canonical), dict(ws.condition_answers), runtime.kb, runtime.thresholds
    )
    _emit_tool_log(memory, MEDICINE_INTERPRETER, finding.tool_log)
    for original, corrected in finding.corrected:
        memory.emit(
            "flag",
            MEDICINE_INTERPRETER,
            {"code": "safeguard_correction", "detail": f"{original!r} re-verified as {corrected!r}"},
        )

    if finding.followup is not None:
        payload_kind = PAYLOAD_FOLLOWUP
        payload = finding.followup
    else:
        payload_kind = PAYLOAD_PARTITION
        assert finding.partition is not None
        payload = finding.partition

    check_handoff(runtime.graph, MEDICINE_INTERPRETER, caller, payload_kind, "response")
    memory.emit(
        "handoff",
        MEDICINE_INTERPRETER,
        {
            "direction": "response",
            "from": MEDICINE_INTERPRETER,
            "to": caller,
            "payload_kind": payload_kind,
            "payload": payload,
        },
    )
    return {"payload_kind": payload_kind, "payload": payload}


# -------- conversationalist progress tools --------


def _step_or_error(ctx: ToolContext, step_id: str):
    spec = ctx.runtime.spec
    if not spec.has_step(step_id):
        raise ToolError(f"unknown step {step_id!r}")
    return spec.step(step_id)


def _check_requires(ctx: ToolContext, step) -> None:
    tracker = ctx.memory.tracker
    for req in step.requires:
        if tracker.statuses[req] is not StepStatus.DONE:
            raise ToolError(
                f"step {step.id} requires {req}, which is {tracker.statuses[req].value}"
            )


def _check_order(ctx: ToolContext, step) -> list[str]:
    """Spec-order discipline: completing a step ahead of earlier mandatory ones.

    Skips at critical risk are refused outright; others are allowed but
    reported so the transcript shows the deviation.
    """
    spec, tracker = ctx.runtime.spec, ctx.memory.tracker
    skipped: list[str] = []
    for earlier in spec.steps:
        if earlier.id == step.id:
            break
        if not earlier.mandatory or earlier.id in step.requires:
            continue
        if tracker.statuses[earlier.id] in (StepStatus.PENDING, StepStatus.RECONFIRM_NEEDED):
            skipped.append(earlier.id)
    if skipped:
        if step.risk_level is RiskLevel.CRITICAL or any(
            spec.step(s).risk_level is RiskLevel.CRITICAL for s in skipped
        ):
            raise ToolError(
                f"cannot complete {step.id} while mandatory steps are open at critical risk: "
                + ", ".join(skipped)
            )
    return skipped


def _tool_record_answer(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    step = _step_or_error(ctx, str(args["step_id"]))
    value = str(args["value"]).strip()
    if step.kind is not StepKind.ELICIT:
        raise ToolError(f"step {step.id} is {step.kind.value}; record_answer only fits elicit steps")
    if not value:
        raise ToolError(f"step {step.id}: a non-empty value is required")
    _check_requires(ctx, step)
    order_flag = _check_order(ctx, step)
    tracker = ctx.memory.tracker
    assert step.data_key is not None
    previous = tracker.collected.get(step.data_key)
    changed = previous is not None and previous.value != value
    reconfirm = []
    if changed:
        reconfirm = [
            dep
            for dep in ctx.runtime.spec.dependents_of(step.id)
            if tracker.statuses[dep] is StepStatus.DONE
        ]
    return {
        "step_id": step.id,
        "data_key": step.data_key,
        "value": value,
        "turn": ctx.turn,
        "changed": changed,
        "reconfirm": reconfirm,
        "order_flag": order_flag,
    }


def _tool_mark_discussed(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    step = _step_or_error(ctx, str(args["step_id"]))
    if step.kind is StepKind.ELICIT:
        raise ToolError(f"step {step.id} is elicit; use record_answer with the collected value")
    _check_requires(ctx, step)
    order_flag = _check_order(ctx, step)
    if step.kind is StepKind.DECIDE and step.risk_level is RiskLevel.CRITICAL:
        ws = ctx.memory.working
        if ws.pending_followup is not None:
            raise ToolError(
                f"step {step.id}: an open follow-up question must be resolved first"
            )
        if not ws.partition_fresh():
            raise ToolError(
                f"step {step.id}: the product partition is missing or stale; "
                "contraindications must be verified first"
            )
    return {"step_id": step.id, "order_flag": order_flag}


def _tool_record_condition_answer(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    term = str(args["term"])
    answer = args["answer"]
    if not isinstance(answer, bool):
        raise ToolError("answer must be true or false")
    kb = ctx.runtime.kb
    # The same word may name entries in both tables; the conditional one is
    # the one an answer can belong to.
    found = [
        e
        for e in (kb.entry(Table.ALLERGIES, term), kb.entry(Table.MEDICATIONS_AND_DISEASES, term))
        if e is not None
    ]
    if not found:
        raise ToolError(f"unknown contraindication term {term!r}")
    entry = next((e for e in found if e.conditional), None)
    if entry is None:
        raise ToolError(f"term {found[0].term!r} has no condition to answer")
    return {"term": entry.term, "answer": answer}


def _tool_resolve_ambiguity(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    mention = str(args["mention"])
    term = str(args["term"])
    pending = ctx.memory.working.pending_followup
    if not pending or pending.get("kind") != "ambiguous":
        raise ToolError("no ambiguous mention is waiting for resolution")
    if normalize_term(str(pending.get("mention", ""))) != normalize_term(mention):
        raise ToolError(f"pending mention is {pending.get('mention')!r}, not {mention!r}")
    candidate = next(
        (
            (tbl, t)
            for tbl, t in (tuple(c) for c in pending.get("candidates", []))
            if normalize_term(t) == normalize_term(term)
        ),
        None,
    )
    if candidate is None:
        raise ToolError(f"{term!r} is not among the offered candidates")
    table_value, chosen = candidate
    final = chosen
    if table_value == Table.MEDICATIONS_AND_DISEASES.value:
        category = classify_contraindication(ctx.runtime.kb, chosen)
        if category is not None:
            final = category
    return {"mention": mention, "term": chosen, "addition": [table_value, final]}


# -------- knowledge base tools (shared by the specialists and the registry) --------


def _find_payload(result: MatchResult) -> dict:
    return {
        "query": result.query,
        "threshold": result.threshold_used,
        "matches": [[t, round(s, SCORE_DECIMALS)] for t, s in result.matches],
    }


def _tool_find_allergies(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    threshold = float(args.get("threshold", ctx.runtime.thresholds.default_threshold))
    return _find_payload(find_most_similar_word_allergies(ctx.runtime.kb, str(args["term"]), threshold))


def _tool_find_meds(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    threshold = float(args.get("threshold", ctx.runtime.thresholds.default_threshold))
    return _find_payload(
        find_most_similar_word_regular_medications_and_diseases(
            ctx.runtime.kb, str(args["term"]), threshold
        )
    )


def _tool_check_allergies(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    partition = check_pill_contraindicating_allergies(
        ctx.runtime.kb,
        [str(t) for t in args["matched_terms"]],
        {str(k): bool(v) for k, v in (args.get("condition_answers") or {}).items()},
    )
    return _partition_result(partition)


def _tool_check_meds(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    partition = check_pill_contraindicating_medications_and_diseases(
        ctx.runtime.kb,
        [str(t) for t in args["matched_terms"]],
        {str(k): bool(v) for k, v in (args.get("condition_answers") or {}).items()},
    )
    return _partition_result(partition)


def _tool_classify(args: Mapping[str, Any], ctx: ToolContext) -> dict:
    term = str(args["term"])
    return {"term": term, "category": classify_contraindication(ctx.runtime.kb, term)}


def build_registry() -> ToolRegistry:
    registry = ToolRegistry()
    register_tool(
        registry,
        ToolSchema(
            name="record_answer",
            description="Record the customer's answer for an elicit step and mark it done.",
            parameters={"step_id": "string", "value": "string"},
            required=("step_id", "value"),
        ),
        _tool_record_answer,
    )
    register_tool(
        registry,
        ToolSchema(
            name="mark_discussed",
            description="Mark an inform or decide step as completed.",
            parameters={"step_id": "string"},
            required=("step_id",),
        ),
        _tool_mark_discussed,
    )
    register_tool(
        registry,
        ToolSchema(
            name="record_condition_answer",
            description="Store the customer's yes/no answer for a conditional contraindication term.",
            parameters={"term": "string", "answer": "boolean"},
            required=("term", "answer"),
        ),
        _tool_record_condition_answer,
    )
    register_tool(
        registry,
        ToolSchema(
            name="resolve_ambiguity",
            description="Resolve a pending ambiguous mention to one of the offered candidate terms.",
            parameters={"mention": "string", "term": "string"},
            required=("mention", "term"),
        ),
        _tool_resolve_ambiguity,
    )
    register_tool(
        registry,
        ToolSchema(
            name="find_most_similar_word_allergies",
            description="Fuzzy-match a phrase against the allergy table.",
            parameters={"term": "string", "threshold": "number"},
            required=("term",),
        ),
        _tool_find_allergies,
    )
    register_tool(
        registry,
        ToolSchema(
            name="find_most_similar_word_regular_medications_and_diseases",
            description="Fuzzy-match a phrase against the medications and diseases table.",
            parameters={"term": "string", "threshold": "number"},
            required=("term",),
        ),
        _tool_find_meds,
    )
    register_tool(
        registry,
        ToolSchema(
            name="check_pill_contraindicating_allergies",
            description="Partition products by allergy contraindications.",
            parameters={"matched_terms": "list", "condition_answers": "object"},
            required=("matched_terms",),
        ),
        _tool_check_allergies,
    )
    register_tool(
        registry,
        ToolSchema(
            name="check_pill_contraindicating_medications_and_diseases",
            description="Partition products by medication and disease contraindications.",
            parameters={"matched_terms": "list", "condition_answers": "object"},
            required=("matched_terms",),
        ),
        _tool_check_meds,
    )
    register_tool(
        registry,
        ToolSchema(
            name="classify_contraindication",
            description="Map a term to its canonical contraindication category, if any.",
            parameters={"term": "string"},
            required=("term",),
        ),
        _tool_classify,
    )
    return registry


def build_runtime(
    spec: ConversationSpec,
    kb: KnowledgeBase,
    thresholds: MatchThresholds | None = None,
    profiles: Mapping[str, AgentProfile] | None = None,
    max_iterations: int | None = None,
) -> Runtime:
    """Wire spec, knowledge base, graph, tools, and profiles into a Runtime."""
    graph = standard_graph()
    registry = build_registry()
    resolved_profiles = dict(profiles) if profiles is not None else load_default_profiles()
    validate_profiles(resolved_profiles, graph, registry)
    runtime = Runtime(
        spec=spec,
        kb=kb,
        graph=graph,
        registry=registry,
        profiles=resolved_profiles,
        thresholds=thresholds or MatchThresholds(),
    )
    if max_iterations is not None:
        runtime.max_iterations = max_iterations
    return runtime

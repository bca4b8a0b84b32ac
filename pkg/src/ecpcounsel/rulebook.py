"""Deterministic completion rules for scripted conversation runs.

The scripted backend answers every conversationalist prompt by matching the
current state view against an ordered rule list: input rules consume what the
customer just said (answers, corrections, follow-up replies), state rules push
the procedure forward (recording after assessment, refreshing the partition,
marking steps), and a final composer turns the turn's work into one reply.

The rulebook is written against the emergency contraceptive procedure and
knowledge base fixtures, which is the point: it plays the role of a competent
model for tests and demos, with none of a model's nondeterminism.
"""
from __future__ import annotations

import re
from typing import Callable, Mapping

from .agent_graph import (
    MEDICINE_INTERPRETER,
    PAYLOAD_CANONICAL_LIST,
    PAYLOAD_RAW_MENTIONS,
    SYMPTOM_ASSESSOR,
)
from .conversation_spec import ConversationSpec, StepKind
from .errors import ValidationError
from .knowledge_base import KnowledgeBase
from .lm_backend import Completion, CompletionKind, Prompt, ScriptRule, ScriptedBackend

PROFILES = (
    "standard",
    "fault_malformed_tool_call",
    "fault_unknown_tool",
    "fault_transient_tool_call",
)

MARK_BUDGET = 4  # marks per turn; keeps replies digestible and iterations bounded

MENTION_DATA_KEYS = {"allergy_report", "medication_report", "disease_report"}
YES_NO_DATA_KEYS = {
    "breastfeeding_status",
    "established_pregnancy_possibility",
    "previous_ecp_use_this_cycle",
}

# Actions that mean the customer's message has already been dealt with.
CONSUMING_ACTIONS = {
    "record_answer",
    "record_condition_answer",
    "resolve_ambiguity",
    f"handoff:{SYMPTOM_ASSESSOR}",
}


# -------- small parsers --------


_NO_RE = re.compile(r"\b(no|nope|not|never|mild|mildly|don't|do not|doesn't|does not)\b", re.I)
_YES_RE = re.compile(r"\b(yes|yeah|yep|severe|severely|definitely|certainly|i do|currently)\b", re.I)
_NONE_RE = re.compile(r"^\s*(no\b|none\b|nothing\b|nope\b|not\s)", re.I)
_HOURS_RE = re.compile(r"(\d+)\s*(?:hours?|hrs?|h\b)?", re.I)
_CORRECTION_RE = re.compile(r"\b(actually|wait|sorry|i was wrong|correction)\b", re.I)

_LEADIN_RES = (
    re.compile(r"^(i\s*am|i'm|im|i|we|my)\b\s*", re.I),
    re.compile(
        r"^(also\s+)?(allergic\s+to|taking|take|using|use|have|having|had|got|get|on|diagnosed\s+with)\b\s*",
        re.I,
    ),
    re.compile(r"^(a|an|the|some)\b\s*", re.I),
)


def _yes_no(text: str) -> bool | None:
    if _NO_RE.search(text):
        return False
    if _YES_RE.search(text):
        return True
    return None


def _is_none_answer(text: str) -> bool:
    return len(text) < 80 and bool(_NONE_RE.match(text))


def _parse_hours(text: str) -> str:
    m = _HOURS_RE.search(text)
    if m:
        return f"{m.group(1)} hours"
    return text.strip()


def _hours_value(state: Mapping) -> int | None:
    raw = (state.get("collected") or {}).get("hours_since_intercourse", "")
    m = re.search(r"\d+", str(raw))
    return int(m.group(0)) if m else None


def _extract_mentions(text: str) -> list[str]:
    pieces = re.split(r",|;|\band\b", text.strip().rstrip(".!?"))
    out: list[str] = []
    for piece in pieces:
        p = piece.strip()
        for pattern in _LEADIN_RES:
            p = pattern.sub("", p).strip()
        p = p.strip(" .!?\"'")
        if p:
            out.append(p)
    return out


# -------- completion builders --------


def _utter(text: str, thought: str = "") -> Completion:
    return Completion(CompletionKind.UTTERANCE, text, thought=thought)


def _tool(name: str, thought: str = "", **arguments) -> Completion:
    return Completion(CompletionKind.TOOL_CALL, {"name": name, "arguments": arguments}, thought=thought)


def _handoff(to: str, payload_kind: str, payload: Mapping, thought: str = "") -> Completion:
    return Completion(
        CompletionKind.HANDOFF,
        {"to": to, "payload_kind": payload_kind, "payload": dict(payload)},
        thought=thought,
    )


def _mk_rule(
    name: str,
    match: Callable[[Mapping], bool],
    produce: Callable[[Mapping], Completion],
) -> ScriptRule:
    def matcher(prompt: Prompt) -> bool:
        state = prompt.state_view()
        return state is not None and bool(match(state))

    def producer(prompt: Prompt) -> Completion:
        state = prompt.state_view()
        assert state is not None
        return produce(state)

    return ScriptRule(name, matcher, producer)


# -------- state helpers --------


def _input(state: Mapping) -> str:
    return str(state.get("customer_input") or "").strip()


def _consumed(state: Mapping) -> bool:
    return any(a in CONSUMING_ACTIONS for a in state.get("turn_actions") or ())


def _asked(state: Mapping) -> Mapping | None:
    return state.get("asked_step")


def _followup(state: Mapping) -> Mapping | None:
    return state.get("pending_followup")


def _safe_set_empty(state: Mapping) -> bool:
    partition = state.get("partition")
    return partition is not None and not partition.get("safe")


def _step_for_key(spec: ConversationSpec, data_key: str):
    for step in spec.steps:
        if step.data_key == data_key:
            return step
    return None


# -------- customer-facing texts --------


QUESTION_TEXTS = {
    "hours_since_intercourse": "First, how many hours ago did the unprotected intercourse happen?",
    "allergy_report": "Do you have any allergies, for example to medicines or to ingredients like lactose?",
    "medication_report": "Do you take any medicines regularly, including herbal remedies such as St John's Wort?",
    "disease_report": "Do you have any ongoing illnesses or chronic conditions?",
    "breastfeeding_status": "Are you currently breastfeeding?",
    "established_pregnancy_possibility": "Is there any chance you could already be pregnant from earlier in this cycle?",
    "previous_ecp_use_this_cycle": "Have you already taken an emergency contraceptive pill during this cycle?",
    "chosen_product": "Which of these would you like to go with?",
    "remaining_questions": "Before we finish, is there anything you would like me to go over again?",
}

INFORM_TEXTS = {
    "g1_inform_timing_options": (
        "Given your timing you can still act now, and the sooner you take a pill the better it works."
    ),
    "g2_explain_contraindication_check": (
        "Next I need to ask a few quick health questions to find out which pills are safe for you."
    ),
    "g3_explain_mechanism": (
        "The pill works mainly by delaying ovulation, so fertilization does not happen in the first place."
    ),
    "g3_explain_cycle_effects": (
        "Your next period may come a few days earlier or later than usual, and bleeding can be a bit different."
    ),
    "g3_present_common_side_effects": (
        "Common side effects include nausea, headache, tiredness, and some abdominal discomfort; "
        "they usually pass within a day or two."
    ),
    "g3_present_serious_side_effects": (
        "Serious reactions are rare, but severe lower abdominal pain or signs of an allergic reaction "
        "need immediate medical attention."
    ),
    "g3_explain_vomiting_redose": (
        "If you vomit within three hours of taking the pill, the dose may not have been absorbed "
        "and you will need a new one."
    ),
    "g3_explain_no_ongoing_protection": (
        "One important thing: the pill does not protect you for the rest of your cycle, "
        "so use condoms or another method until your next period."
    ),
    "g4_explain_efficacy_differences": (
        "Effectiveness is highest within the first 24 hours for any of these and declines after that."
    ),
    "g5_advise_take_asap": (
        "Take the pill as soon as possible; you are welcome to take it right here with a glass of water."
    ),
    "g5_advise_next_period": (
        "Your next period may shift by a few days, and some spotting beforehand is common."
    ),
    "g5_advise_pregnancy_test_if_late": (
        "If your period is more than a week late, please take a pregnancy test."
    ),
    "g5_advise_ongoing_contraception": (
        "For the rest of this cycle use condoms; if you would like to start regular contraception, "
        "your doctor or our pharmacist can help."
    ),
    "g5_advise_warning_symptoms": (
        "If you get severe abdominal pain, very heavy bleeding, or feel strongly unwell after taking it, "
        "contact a doctor."
    ),
    "g5_closing_summary": (
        "That covers everything: your options, how to take the pill, and what to expect afterwards. "
        "Take care, and come back any time if new questions come up."
    ),
}

OPENING_TEXT = (
    "I can help you with that. I will ask a few questions to make sure you get a pill "
    "that is safe and still effective for you."
)

NO_SAFE_PRODUCT_TEXT = (
    "I am sorry, but based on what you told me none of our emergency contraceptive products "
    "is safe for you. Please speak with our pharmacist, who can go through prescription "
    "alternatives with you right away."
)


# -------- rule producers --------


def _confirm_line(spec: ConversationSpec, kb: KnowledgeBase, step_id: str, state: Mapping) -> str:
    step = spec.step(step_id)
    value = str((state.get("collected") or {}).get(step.data_key or "", "")).strip()
    key = step.data_key
    if key == "hours_since_intercourse":
        return f"Thank you, about {value} ago."
    if key in MENTION_DATA_KEYS:
        if value == "none reported":
            return "Understood, none reported."
        return f"Noted: {value}."
    if key == "breastfeeding_status":
        return (
            "Noted that you are currently breastfeeding."
            if value.startswith("yes")
            else "Understood, not breastfeeding."
        )
    if key == "chosen_product":
        product = kb.product(value)
        return f"Great, {product.name} it is." if product else f"Noted: {value}."
    if key == "remaining_questions":
        return "Alright."
    return "Understood."


def _timing_line(state: Mapping) -> str:
    hours = _hours_value(state)
    if hours is None:
        return "I could not read the timing clearly, but acting quickly matters."
    if hours <= 72:
        return (
            f"At about {hours} hours you are inside the 72-hour window, "
            "so both pill types are still an option."
        )
    if hours <= 120:
        return (
            f"At about {hours} hours the 72-hour window has closed, but a pill "
            "with ulipristal acetate still works up to 120 hours."
        )
    return (
        f"At about {hours} hours we are past the 120-hour window, and no emergency "
        "pill is reliable anymore; please talk to our pharmacist about other options."
    )


def _suitable_products(state: Mapping, kb: KnowledgeBase) -> list:
    partition = state.get("partition") or {}
    safe = [kb.product(pid) for pid in partition.get("safe") or []]
    safe = [p for p in safe if p is not None]
    hours = _hours_value(state)
    if hours is not None and 72 < hours <= 120:
        safe = [p for p in safe if "ulipristal" in p.active_substance.lower()]
    if hours is not None and hours > 120:
        safe = []
    return safe


def _options_line(state: Mapping, kb: KnowledgeBase) -> str:
    suitable = _suitable_products(state, kb)
    if not suitable:
        return NO_SAFE_PRODUCT_TEXT
    names = [p.name for p in suitable]
    if len(names) == 1:
        listing = names[0]
        verb = "is"
    else:
        listing = ", ".join(names[:-1]) + f" and {names[-1]}"
        verb = "are"
    return f"Based on everything you told me, {listing} {verb} safe for you."


def _summary_line(state: Mapping) -> str:
    collected = state.get("collected") or {}

    def val(key: str) -> str:
        return str(collected.get(key, "-"))

    return (
        "Let me quickly confirm what I have: "
        f"allergies: {val('allergy_report')}; regular medicines: {val('medication_report')}; "
        f"illnesses: {val('disease_report')}; breastfeeding: {val('breastfeeding_status')}; "
        f"possible existing pregnancy: {val('established_pregnancy_possibility')}; "
        f"emergency pill already this cycle: {val('previous_ecp_use_this_cycle')}. "
        "Tell me if anything is off."
    )


def _decide_line(spec: ConversationSpec, kb: KnowledgeBase, step_id: str, state: Mapping) -> str:
    if step_id == "g1_assess_timing_window":
        return _timing_line(state)
    if step_id == "g2_resolve_contraindications":
        line = "I have checked everything you reported against each of our products."
        if _safe_set_empty(state):
            line += " " + NO_SAFE_PRODUCT_TEXT
        return line
    if step_id == "g4_present_safe_options":
        return _options_line(state, kb)
    return f"{spec.step(step_id).title} settled."


def _next_question(spec: ConversationSpec, state: Mapping) -> str | None:
    """The next elicit question, unless a mandatory topic still comes first."""
    for brief in state.get("next_steps") or []:
        if brief["kind"] == StepKind.ELICIT.value:
            step = spec.step(brief["id"])
            return QUESTION_TEXTS.get(step.data_key or "", step.goal)
        if brief["mandatory"]:
            return None
    return None


def _no_product_stop_index(spec: ConversationSpec) -> int:
    """Where counseling halts when no product is safe.

    The screening summary still gets delivered so the customer can carry a
    complete picture to the pharmacist; everything after it is pill advice
    that no longer applies.
    """
    order = {s.id: i for i, s in enumerate(spec.steps)}
    if "g2_confirm_contraindication_summary" in order:
        return order["g2_confirm_contraindication_summary"]
    critical = [i for i, s in enumerate(spec.steps) if s.risk_level.value == "critical"]
    return max(critical, default=len(spec.steps))


def _next_markable(spec: ConversationSpec, state: Mapping) -> str | None:
    """First mandatory inform/decide step that can be marked right now."""
    if len(state.get("marks_this_turn") or []) >= MARK_BUDGET:
        return None
    order = {s.id: i for i, s in enumerate(spec.steps)}
    stop_index = _no_product_stop_index(spec)
    for brief in state.get("next_steps") or []:
        if brief["kind"] == StepKind.ELICIT.value:
            return None
        if not brief["mandatory"]:
            continue
        if _safe_set_empty(state) and order[brief["id"]] > stop_index:
            return None
        if brief["kind"] == StepKind.DECIDE.value and brief["risk"] == "critical":
            if _followup(state) is not None or not state.get("partition_fresh"):
                return None
        return brief["id"]
    return None


def standard_rules(spec: ConversationSpec, kb: KnowledgeBase) -> list[ScriptRule]:
    hours_step = _step_for_key(spec, "hours_since_intercourse")

    # -- input rules --

    def match_correction(state: Mapping) -> bool:
        text = _input(state)
        return (
            hours_step is not None
            and not _consumed(state)
            and hours_step.data_key in (state.get("collected") or {})
            and bool(_CORRECTION_RE.search(text))
            and bool(re.search(r"\d", text))
        )

    def produce_correction(state: Mapping) -> Completion:
        assert hours_step is not None
        return _tool(
            "record_answer",
            step_id=hours_step.id,
            value=_parse_hours(_input(state)),
            thought="the customer corrected the timing; dependent conclusions need re-checking",
        )

    def match_ambiguity_answer(state: Mapping) -> bool:
        fu = _followup(state)
        return (
            fu is not None
            and fu.get("kind") == "ambiguous"
            and not _consumed(state)
            and bool(_input(state))
        )

    def produce_ambiguity_answer(state: Mapping) -> Completion:
        fu = _followup(state) or {}
        text = _input(state).lower()
        words = set(re.findall(r"[a-z']+", text))
        best_term = None
        best_overlap = 0
        for _table, term in (tuple(c) for c in fu.get("candidates") or []):
            overlap = len(set(str(term).lower().split()) & words)
            if overlap > best_overlap:
                best_overlap = overlap
                best_term = str(term)
        if best_term is None:
            candidates = fu.get("candidates") or []
            best_term = str(candidates[0][1]) if candidates else ""
        return _tool("resolve_ambiguity", mention=str(fu.get("mention", "")), term=best_term)

    def match_condition_answer(state: Mapping) -> bool:
        fu = _followup(state)
        return (
            fu is not None
            and fu.get("kind") == "condition"
            and not _consumed(state)
            and _yes_no(_input(state)) is not None
        )

    def produce_condition_answer(state: Mapping) -> Completion:
        fu = _followup(state) or {}
        answer = _yes_no(_input(state))
        assert answer is not None
        return _tool("record_condition_answer", term=str(fu.get("term", "")), answer=answer)

    def match_reverify_answer(state: Mapping) -> bool:
        fu = _followup(state)
        return (
            fu is not None
            and fu.get("kind") == "reverify"
            and not _consumed(state)
            and bool(_input(state))
        )

    def produce_reverify_answer(state: Mapping) -> Completion:
        return _handoff(
            SYMPTOM_ASSESSOR,
            PAYLOAD_RAW_MENTIONS,
            {"mentions": [_input(state)]},
            thought="re-resolving the unverifiable term from the customer's new wording",
        )

    def match_none_answer(state: Mapping) -> bool:
        asked = _asked(state)
        return (
            asked is not None
            and asked.get("data_key") in MENTION_DATA_KEYS
            and not _consumed(state)
            and _followup(state) is None
            and _is_none_answer(_input(state))
        )

    def produce_none_answer(state: Mapping) -> Completion:
        asked = _asked(state) or {}
        return _handoff(
            SYMPTOM_ASSESSOR,
            PAYLOAD_RAW_MENTIONS,
            {
                "mentions": [],
                "none_reported": True,
                "step_id": asked.get("id"),
                "record_value": "none reported",
            },
        )

    def match_breastfeeding_yes(state: Mapping) -> bool:
        asked = _asked(state)
        return (
            asked is not None
            and asked.get("data_key") == "breastfeeding_status"
            and not _consumed(state)
            and _followup(state) is None
            and _yes_no(_input(state)) is True
        )

    def produce_breastfeeding_yes(state: Mapping) -> Completion:
        asked = _asked(state) or {}
        return _handoff(
            SYMPTOM_ASSESSOR,
            PAYLOAD_RAW_MENTIONS,
            {
                "mentions": ["breastfeeding"],
                "step_id": asked.get("id"),
                "record_value": "yes",
            },
            thought="breastfeeding is itself a contraindication and goes through assessment",
        )

    def match_mention_answer(state: Mapping) -> bool:
        asked = _asked(state)
        return (
            asked is not None
            and asked.get("data_key") in MENTION_DATA_KEYS
            and not _consumed(state)
            and _followup(state) is None
            and bool(_input(state))
        )

    def produce_mention_answer(state: Mapping) -> Completion:
        asked = _asked(state) or {}
        mentions = _extract_mentions(_input(state))
        return _handoff(
            SYMPTOM_ASSESSOR,
            PAYLOAD_RAW_MENTIONS,
            {
                "mentions": mentions,
                "step_id": asked.get("id"),
                "record_value": ", ".join(mentions) if mentions else _input(state),
            },
            thought="the customer named possible contraindications; they need canonical resolution",
        )

    def match_simple_answer(state: Mapping) -> bool:
        asked = _asked(state)
        if (
            asked is None
            or asked.get("kind") != StepKind.ELICIT.value
            or asked.get("data_key") in MENTION_DATA_KEYS
            or _consumed(state)
            or _followup(state) is not None
            or not _input(state)
        ):
            return False
        if asked.get("data_key") in YES_NO_DATA_KEYS:
            # A bare acknowledgment is not an answer; the question is re-asked.
            return _yes_no(_input(state)) is not None
        return True

    def produce_simple_answer(state: Mapping) -> Completion:
        asked = _asked(state) or {}
        key = asked.get("data_key") or ""
        text = _input(state)
        if key == "hours_since_intercourse":
            value = _parse_hours(text)
        elif key in YES_NO_DATA_KEYS:
            decided = _yes_no(text)
            value = text if decided is None else ("yes" if decided else "no")
        elif key == "chosen_product":
            value = text
            lowered = text.lower()
            for product in kb.products:
                name_head = product.name.split()[0].lower()
                if product.id in lowered or name_head in lowered:
                    value = product.id
                    break
        else:
            value = text
        return _tool("record_answer", step_id=str(asked.get("id")), value=value)

    # -- state rules --

    def match_record_after(state: Mapping) -> bool:
        pending = state.get("pending_record")
        fu = _followup(state)
        return bool(pending) and (fu is None or fu.get("kind") == "condition")

    def produce_record_after(state: Mapping) -> Completion:
        pending = state.get("pending_record") or {}
        value = str(pending.get("value") or "").strip() or "none reported"
        return _tool("record_answer", step_id=str(pending.get("step_id")), value=value)

    def match_refresh(state: Mapping) -> bool:
        return (
            bool(state.get("canonical_terms"))
            and not state.get("partition_fresh")
            and _followup(state) is None
        )

    def produce_refresh(state: Mapping) -> Completion:
        return _handoff(
            MEDICINE_INTERPRETER,
            PAYLOAD_CANONICAL_LIST,
            {
                "terms": state.get("canonical_terms") or [],
                "answers": state.get("condition_answers") or {},
            },
            thought="the stored partition no longer covers the current terms and answers",
        )

    def match_advance(state: Mapping) -> bool:
        return _next_markable(spec, state) is not None

    def produce_advance(state: Mapping) -> Completion:
        step_id = _next_markable(spec, state)
        assert step_id is not None
        return _tool("mark_discussed", step_id=step_id)

    # -- composer --

    def produce_reply(state: Mapping) -> Completion:
        parts: list[str] = []
        if state.get("turn") == 1:
            parts.append(OPENING_TEXT)
        actions = state.get("turn_actions") or []
        if "record_condition_answer" in actions:
            parts.append("Thank you, I have noted that.")
        if "resolve_ambiguity" in actions:
            parts.append("Got it, thank you for clarifying.")
        for step_id in state.get("marks_this_turn") or []:
            step = spec.step(step_id)
            if step.kind is StepKind.ELICIT:
                parts.append(_confirm_line(spec, kb, step_id, state))
            elif step.kind is StepKind.DECIDE:
                parts.append(_decide_line(spec, kb, step_id, state))
            elif step_id == "g2_confirm_contraindication_summary":
                parts.append(_summary_line(state))
            else:
                parts.append(INFORM_TEXTS.get(step_id, step.goal))
        if state.get("reconfirm_pending"):
            parts.append(
                "Because an earlier answer changed, I am re-checking everything that depended on it."
            )
        fu = _followup(state)
        if fu is not None:
            parts.append(str(fu.get("question", "Could you clarify that for me?")))
        else:
            question = _next_question(spec, state)
            if question:
                parts.append(question)
        if not parts:
            if _safe_set_empty(state):
                parts.append(
                    "As discussed, please see our pharmacist for a safe alternative; "
                    "they already have your answers."
                )
            else:
                parts.append("Is there anything else I can help you with?")
        return _utter(" ".join(parts))

    return [
        _mk_rule("correction_rehours", match_correction, produce_correction),
        _mk_rule("answer_ambiguity", match_ambiguity_answer, produce_ambiguity_answer),
        _mk_rule("answer_condition", match_condition_answer, produce_condition_answer),
        _mk_rule("answer_reverify", match_reverify_answer, produce_reverify_answer),
        _mk_rule("none_answer", match_none_answer, produce_none_answer),
        _mk_rule("breastfeeding_yes", match_breastfeeding_yes, produce_breastfeeding_yes),
        _mk_rule("mention_answer", match_mention_answer, produce_mention_answer),
        _mk_rule("simple_answer", match_simple_answer, produce_simple_answer),
        _mk_rule("record_after_assessment", match_record_after, produce_record_after),
        _mk_rule("refresh_partition", match_refresh, produce_refresh),
        _mk_rule("advance_procedure", match_advance, produce_advance),
        _mk_rule("compose_reply", lambda state: True, produce_reply),
    ]


# -------- fault profiles --------


def _fault_malformed_rule(spec: ConversationSpec) -> ScriptRule:
    hours_step = _step_for_key(spec, "hours_since_intercourse")
    step_id = hours_step.id if hours_step is not None else spec.steps[0].id

    def match(state: Mapping) -> bool:
        return state.get("turn") == 2

    def produce(state: Mapping) -> Completion:
        # Required "value" argument deliberately missing, every iteration.
        return Completion(
            CompletionKind.TOOL_CALL,
            {"name": "record_answer", "arguments": {"step_id": step_id}},
        )

    return _mk_rule("fault_malformed_tool_call", match, produce)


def _fault_transient_rule(spec: ConversationSpec) -> ScriptRule:
    hours_step = _step_for_key(spec, "hours_since_intercourse")
    step_id = hours_step.id if hours_step is not None else spec.steps[0].id

    def match(state: Mapping) -> bool:
        # Only before any feedback: after the error observation arrives the
        # rule steps aside and the standard rules finish the turn.
        return (
            state.get("turn") == 2
            and not state.get("turn_actions")
            and state.get("last_observation") is None
        )

    def produce(state: Mapping) -> Completion:
        return Completion(
            CompletionKind.TOOL_CALL,
            {"name": "record_answer", "arguments": {"step_id": step_id}},
        )

    return _mk_rule("fault_transient_tool_call", match, produce)


def _fault_unknown_tool_rule() -> ScriptRule:
    def match(state: Mapping) -> bool:
        return state.get("turn") == 2

    def produce(state: Mapping) -> Completion:
        return Completion(
            CompletionKind.TOOL_CALL,
            {"name": "dispense_directly", "arguments": {}},
        )

    return _mk_rule("fault_unknown_tool", match, produce)


def build_backend(
    profile: str, spec: ConversationSpec, kb: KnowledgeBase
) -> ScriptedBackend:
    """Scripted backend for a named behavior profile.

    ``standard`` follows the procedure faithfully. The fault profiles
    misbehave on turn 2: ``fault_malformed_tool_call`` keeps emitting a tool
    call with a missing required argument and ``fault_unknown_tool`` keeps
    calling a tool that does not exist, so both eat their one retry and then
    escalate. ``fault_transient_tool_call`` emits the malformed call only
    until the error observation comes back, demonstrating a recovery.
    """
    if profile not in PROFILES:
        raise ValidationError(f"unknown backend profile {profile!r}; known: {', '.join(PROFILES)}")
    rules: list[ScriptRule] = []
    if profile == "fault_malformed_tool_call":
        rules.append(_fault_malformed_rule(spec))
    elif profile == "fault_unknown_tool":
        rules.append(_fault_unknown_tool_rule())
    elif profile == "fault_transient_tool_call":
        rules.append(_fault_transient_rule(spec))
    rules.extend(standard_rules(spec, kb))
    return ScriptedBackend(rules)

"""Agent graph, shared memory, tool registry, and the per-turn reasoning loop.

Three cooperating agents form a small directed graph. The conversationalist
is the entry node and the only one that talks to the customer; specialist
agents are reached by handing off along declared edges and their results come
back to the caller. Every thought, tool call, handoff, and reply is appended
to a shared transcript.

The transcript is the one source of truth: all mutable session state
(progress tracker, collected contraindication terms, the current product
partition) is a fold over transcript entries. Replaying the entries of a
stored session therefore reconstructs its state exactly, which is what makes
restarts, determinism checks, and after-the-fact summaries cheap.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from .conversation_spec import ConversationSpec, ProgressTracker, StepStatus, mark_step
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    ContractViolation,
    CounselError,
    DuplicateName,
    NoRuleMatched,
    ToolError,
    UnknownEndpoint,
    UnreachableNode,
    ValidationError,
)
from .knowledge_base import KnowledgeBase, normalize_term
from .lm_backend import Backend, CompletionKind, ToolSchema
from .matching_tools import MatchThresholds

MAX_ITERATIONS_DEFAULT = 12

SAFE_FALLBACK_REPLY = (
    "I am sorry, I cannot safely continue this consultation right now. "
    "A human pharmacist will assist you shortly."
)

CONVERSATIONALIST = "conversationalist"
SYMPTOM_ASSESSOR = "symptom_assessor"
MEDICINE_INTERPRETER = "medicine_interpreter"

# Handoff payload vocabulary. Requests travel along a declared edge; the
# matching response travels back against it.
PAYLOAD_RAW_MENTIONS = "raw_contraindication_mentions"
PAYLOAD_CANONICAL_LIST = "canonical_contraindication_list"
PAYLOAD_PARTITION = "safe_pill_partition"
PAYLOAD_FOLLOWUP = "followup_request"

RESPONSE_KINDS = {PAYLOAD_PARTITION, PAYLOAD_FOLLOWUP}


class EdgeKind(str, Enum):
    MANDATORY = "mandatory"
    OPTIONAL = "optional"


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind
    payload_kinds: tuple[str, ...]


@dataclass(frozen=True)
class Graph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    entry: str

    def edge(self, src: str, dst: str) -> Edge | None:
        for e in self.edges:
            if e.src == src and e.dst == dst:
                return e
        return None


def build_graph(node_ids: Sequence[str], edges: Sequence[Edge], entry: str | None = None) -> Graph:
    """Validate and freeze an agent graph.

    Every edge endpoint must be a node and every node must be reachable from
    the entry (the first node unless given explicitly).
    """
    if not node_ids:
        raise ValidationError("graph needs at least one node")
    if len(set(node_ids)) != len(node_ids):
        raise DuplicateName("graph node ids must be unique")
    entry = entry or node_ids[0]
    if entry not in node_ids:
        raise UnknownEndpoint(f"entry {entry!r} is not a node")
    for e in edges:
        for endpoint in (e.src, e.dst):
            if endpoint not in node_ids:
                raise UnknownEndpoint(f"edge {e.src}->{e.dst} references unknown node {endpoint!r}")
    reachable = {entry}
    frontier = [entry]
    while frontier:
        current = frontier.pop()
        for e in edges:
            if e.src == current and e.dst not in reachable:
                reachable.add(e.dst)
                frontier.append(e.dst)
    for node in node_ids:
        if node not in reachable:
            raise UnreachableNode(f"node {node!r} is not reachable from entry {entry!r}")
    return Graph(nodes=tuple(node_ids), edges=tuple(edges), entry=entry)


def standard_graph() -> Graph:
    """The three-agent wiring used for counseling sessions.

    Raw mentions go to the symptom assessor, the canonical list continues to
    the medicine interpreter, and the conversationalist may also re-check a
    list with the interpreter directly once conditions have been answered.
    """
    return build_graph(
        [CONVERSATIONALIST, SYMPTOM_ASSESSOR, MEDICINE_INTERPRETER],
        [
            Edge(CONVERSATIONALIST, SYMPTOM_ASSESSOR, EdgeKind.MANDATORY, (PAYLOAD_RAW_MENTIONS,)),
            Edge(SYMPTOM_ASSESSOR, MEDICINE_INTERPRETER, EdgeKind.MANDATORY, (PAYLOAD_CANONICAL_LIST,)),
            Edge(CONVERSATIONALIST, MEDICINE_INTERPRETER, EdgeKind.OPTIONAL, (PAYLOAD_CANONICAL_LIST,)),
        ],
        entry=CONVERSATIONALIST,
    )


def check_handoff(graph: Graph, src: str, dst: str, payload_kind: str, direction: str) -> None:
    """Reject a handoff that does not fit the declared graph."""
    if direction == "request":
        edge = graph.edge(src, dst)
        if edge is None:
            raise ContractViolation(f"no edge {src} -> {dst}")
        if payload_kind not in edge.payload_kinds:
            raise ContractViolation(
                f"payload {payload_kind!r} not allowed on edge {src} -> {dst}"
            )
        return
    if direction == "response":
        edge = graph.edge(dst, src)  # responses travel against a declared edge
        if edge is None:
            raise ContractViolation(f"no edge {dst} -> {src} to answer along")
        if payload_kind not in RESPONSE_KINDS:
            raise ContractViolation(f"payload {payload_kind!r} is not a response kind")
        return
    raise ContractViolation(f"unknown handoff direction {direction!r}")


# -------- tool registry --------


@dataclass
class ToolContext:
    """What a tool implementation may look at while running."""

    runtime: "Runtime"
    memory: "SharedMemory"
    turn: int


ToolFn = Callable[[Mapping[str, Any], ToolContext], dict]


@dataclass
class ToolDef:
    schema: ToolSchema
    fn: ToolFn


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, ToolDef] = {}

    def get(self, name: str) -> ToolDef:
        if name not in self._tools:
            known = ", ".join(sorted(self._tools)) or "(none)"
            raise ToolError(f"unknown tool {name!r}; registered: {known}")
        return self._tools[name]

    def schemas(self, names: Iterable[str] | None = None) -> tuple[ToolSchema, ...]:
        if names is None:
            return tuple(d.schema for d in self._tools.values())
        return tuple(self._tools[n].schema for n in names if n in self._tools)

    def names(self) -> list[str]:
        return list(self._tools)

    def __contains__(self, name: str) -> bool:
        return name in self._tools


def register_tool(registry: ToolRegistry, schema: ToolSchema, fn: ToolFn) -> ToolRegistry:
    if schema.name in registry:
        raise DuplicateName(f"tool {schema.name!r} already registered")
    registry._tools[schema.name] = ToolDef(schema=schema, fn=fn)
    return registry


# -------- transcript and shared memory --------


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    turn: int
    ts: str
    actor: str
    kind: str
    payload: Mapping[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "turn": self.turn,
                "ts": self.ts,
                "actor": self.actor,
                "kind": self.kind,
                "payload": self.payload,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @staticmethod
    def from_json(line: str) -> "TranscriptEntry":
        raw = json.loads(line)
        return TranscriptEntry(
            seq=int(raw["seq"]),
            turn=int(raw["turn"]),
            ts=str(raw["ts"]),
            actor=str(raw["actor"]),
            kind=str(raw["kind"]),
            payload=dict(raw["payload"]),
        )


@dataclass
class WorkingSet:
    """Contraindication bookkeeping shared by the agents."""

    canonical: list[tuple[str, str]] = field(default_factory=list)  # (table, term)
    condition_answers: dict[str, bool] = field(default_factory=dict)  # normalized term -> answer
    pending_followup: dict | None = None
    pending_record: dict | None = None  # elicit answer waiting for assessment to finish
    dropped: list[str] = field(default_factory=list)
    partition: dict | None = None
    asked_step: str | None = None

    def has_term(self, table: str, term: str) -> bool:
        key = (table, normalize_term(term))
        return any((t, normalize_term(x)) == key for t, x in self.canonical)

    def add_term(self, table: str, term: str) -> None:
        if not self.has_term(table, term):
            self.canonical.append((table, term))

    def partition_fresh(self) -> bool:
        """Does the stored partition cover the current terms and answers?"""
        if self.partition is None:
            return False
        basis = self.partition.get("basis", {})
        basis_terms = {(t, normalize_term(x)) for t, x in basis.get("terms", [])}
        current_terms = {(t, normalize_term(x)) for t, x in self.canonical}
        basis_answers = {normalize_term(k): v for k, v in basis.get("answers", {}).items()}
        current_answers = {normalize_term(k): v for k, v in self.condition_answers.items()}
        return basis_terms == current_terms and basis_answers == current_answers


def _wall_clock() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def fixed_clock(start_epoch: int = 1700000000) -> Callable[[], str]:
    """Deterministic clock for scripted runs: one second per entry."""
    counter = {"now": start_epoch}

    def tick() -> str:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(counter["now"]))
        counter["now"] += 1
        return stamp

    return tick


class SharedMemory:
    """Append-only transcript plus the state folded from it.

    Mutations happen only in _apply, driven by entries, so the live path and
    a replay of the same entries end in identical state.
    """

    def __init__(self, spec: ConversationSpec, clock: Callable[[], str] | None = None):
        self.spec = spec
        self.entries: list[TranscriptEntry] = []
        self.tracker = ProgressTracker(spec)
        self.working = WorkingSet()
        self.status = "active"
        self.escalated = False
        self.turn = 0
        self._clock = clock or _wall_clock

    # -- entry intake --

    def emit(self, kind: str, actor: str, payload: Mapping[str, Any]) -> TranscriptEntry:
        entry = TranscriptEntry(
            seq=len(self.entries),
            turn=self.turn + (1 if kind == "customer_message" else 0),
            ts=self._clock(),
            actor=actor,
            kind=kind,
            payload=dict(payload),
        )
        self.ingest(entry)
        return entry

    def ingest(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)
        self._apply(entry)

    @classmethod
    def replay(cls, spec: ConversationSpec, entries: Iterable[TranscriptEntry]) -> "SharedMemory":
        memory = cls(spec)
        for entry in entries:
            memory.ingest(entry)
        return memory

    # -- the fold --

    def _apply(self, entry: TranscriptEntry) -> None:
        kind = entry.kind
        payload = entry.payload
        ws = self.working

        if kind == "customer_message":
            self.turn += 1
            return
        if kind == "reply":
            ws.asked_step = payload.get("asked_step")
            return
        if kind == "status_change":
            self.status = str(payload["to"])
            return
        if kind == "flag":
            if payload.get("code") == "escalation":
                self.escalated = True
            return
        if kind == "handoff":
            self._apply_handoff(payload)
            return
        if kind == "tool_result" and payload.get("ok"):
            self._apply_tool_result(str(payload["name"]), payload.get("result") or {})
            return

    def _apply_handoff(self, payload: Mapping[str, Any]) -> None:
        ws = self.working
        direction = payload.get("direction")
        payload_kind = payload.get("payload_kind")
        body = payload.get("payload") or {}
        if direction == "request":
            if payload_kind == PAYLOAD_RAW_MENTIONS and body.get("step_id"):
                ws.pending_record = {
                    "step_id": body["step_id"],
                    "value": body.get("record_value", ""),
                }
            if payload_kind == PAYLOAD_CANONICAL_LIST:
                ws.canonical = [(str(t), str(x)) for t, x in body.get("terms", [])]
                for term in body.get("dropped", []):
                    if term not in ws.dropped:
                        ws.dropped.append(term)
            return
        if direction == "response":
            if payload_kind == PAYLOAD_FOLLOWUP:
                ws.pending_followup = dict(body)
                # Mentions resolved before the follow-up arose are kept.
                for table, term in body.get("additions", []):
                    ws.add_term(str(table), str(term))
            elif payload_kind == PAYLOAD_PARTITION:
                ws.partition = dict(body)
                basis_terms = (body.get("basis") or {}).get("terms")
                if basis_terms is not None:
                    # The interpreter may have corrected spellings during
                    # re-verification; the working list follows its basis.
                    ws.canonical = [(str(t), str(x)) for t, x in basis_terms]
                if ws.pending_followup is not None:
                    ws.pending_followup = None

    def _apply_tool_result(self, name: str, result: Mapping[str, Any]) -> None:
        ws = self.working
        if name == "record_answer":
            mark_step(
                self.tracker,
                str(result["step_id"]),
                StepStatus.DONE,
                value=str(result["value"]),
                turn=int(result.get("turn", self.turn)),
            )
            pending = ws.pending_record
            if pending and pending.get("step_id") == result["step_id"]:
                ws.pending_record = None
            return
        if name == "mark_discussed":
            mark_step(self.tracker, str(result["step_id"]), StepStatus.DONE)
            return
        if name == "record_condition_answer":
            term = str(result["term"])
            ws.condition_answers[normalize_term(term)] = bool(result["answer"])
            pending = ws.pending_followup
            if (
                pending
                and pending.get("kind") == "condition"
                and normalize_term(str(pending.get("term", ""))) == normalize_term(term)
            ):
                ws.pending_followup = None
            return
        if name == "resolve_ambiguity":
            table, term = result["addition"]
            ws.add_term(str(table), str(term))
            pending = ws.pending_followup
            if (
                pending
                and pending.get("kind") == "ambiguous"
                and normalize_term(str(pending.get("mention", "")))
                == normalize_term(str(result.get("mention", "")))
            ):
                ws.pending_followup = None
            return

    # -- views --

    def replies(self) -> list[str]:
        return [str(e.payload["text"]) for e in self.entries if e.kind == "reply"]

    def last_reply(self) -> str | None:
        texts = self.replies()
        return texts[-1] if texts else None

    def transcript_text(self) -> str:
        """Canonical one-entry-per-line serialization."""
        return "\n".join(e.to_json() for e in self.entries) + ("\n" if self.entries else "")

    def state_fingerprint(self) -> dict:
        """Comparable snapshot of everything the fold produces."""
        return {
            "statuses": {k: v.value for k, v in self.tracker.statuses.items()},
            "collected": {k: (v.value, v.turn) for k, v in self.tracker.collected.items()},
            "canonical": list(self.working.canonical),
            "condition_answers": dict(self.working.condition_answers),
            "pending_followup": self.working.pending_followup,
            "pending_record": self.working.pending_record,
            "dropped": list(self.working.dropped),
            "partition": self.working.partition,
            "asked_step": self.working.asked_step,
            "status": self.status,
            "escalated": self.escalated,
            "turn": self.turn,
        }


# -------- trace view --------


@dataclass
class ReActIteration:
    thought: str
    action: str
    observation: str


@dataclass
class ReActTrace:
    agent: str
    turn: int
    iterations: list[ReActIteration]


def trace_for_turn(memory: SharedMemory, turn: int, agent: str = CONVERSATIONALIST) -> ReActTrace:
    """Reconstruct an agent's reasoning iterations for one turn."""
    iterations: list[ReActIteration] = []
    thought = ""
    action = ""
    for entry in memory.entries:
        if entry.turn != turn or entry.actor != agent:
            continue
        if entry.kind == "thought":
            thought = str(entry.payload.get("text", ""))
        elif entry.kind == "tool_call":
            action = f"tool:{entry.payload.get('name')}"
        elif entry.kind == "handoff" and entry.payload.get("direction") == "request":
            action = f"handoff:{entry.payload.get('to')}"
        elif entry.kind == "tool_result":
            status = "ok" if entry.payload.get("ok") else "error"
            iterations.append(ReActIteration(thought, action, f"{entry.payload.get('name')}:{status}"))
            thought, action = "", ""
        elif entry.kind == "reply":
            iterations.append(ReActIteration(thought, "reply", "turn complete"))
            thought, action = "", ""
    return ReActTrace(agent=agent, turn=turn, iterations=iterations)


# -------- runtime and the turn loop --------


@dataclass
class Runtime:
    """Everything immutable a session needs to run turns."""

    spec: ConversationSpec
    kb: KnowledgeBase
    graph: Graph
    registry: ToolRegistry
    profiles: dict[str, Any]  # agent id -> AgentProfile
    thresholds: MatchThresholds = field(default_factory=MatchThresholds)
    max_iterations: int = MAX_ITERATIONS_DEFAULT


@dataclass
class TurnContext:
    turn: int
    customer_input: str
    observations: list[dict] = field(default_factory=list)
    turn_actions: list[str] = field(default_factory=list)
    marks: list[str] = field(default_factory=list)

    def note_action(self, label: str) -> None:
        self.turn_actions.append(label)


def run_turn(runtime: Runtime, memory: SharedMemory, customer_input: str, backend: Backend) -> str:
    """Advance the conversation by one customer message and return the reply.

    The conversationalist repeatedly asks the backend what to do next and the
    loop executes the chosen action. A first tool or contract failure is fed
    back as an observation so the backend can correct itself; a second one
    ends the turn with the safe fallback reply and an escalation flag.
    """
    from .agents import conversationalist_policy, reply_metadata, run_specialist

    memory.emit("customer_message", "customer", {"text": customer_input})
    ctx = TurnContext(turn=memory.turn, customer_input=customer_input)
    failures = 0

    for _ in range(runtime.max_iterations):
        try:
            completion = conversationalist_policy(runtime, memory, ctx, backend)
        except (BackendUnavailable, BackendTimeout, NoRuleMatched) as exc:
            return _escalate(memory, f"backend failure: {exc}")
        except ContractViolation as exc:
            failures += 1
            if failures == 1:
                _note_retry(memory, ctx, str(exc))
                continue
            return _escalate(memory, f"repeated contract violation: {exc}")

        if completion.thought:
            memory.emit("thought", CONVERSATIONALIST, {"text": completion.thought})

        if completion.kind is CompletionKind.UTTERANCE:
            text = str(completion.content)
            memory.emit("reply", CONVERSATIONALIST, reply_metadata(runtime, memory, text))
            return text

        if completion.kind is CompletionKind.TOOL_CALL:
            assert isinstance(completion.content, Mapping)
            name = str(completion.content["name"])
            arguments = dict(completion.content.get("arguments") or {})
            memory.emit("tool_call", CONVERSATIONALIST, {"name": name, "arguments": arguments})
            try:
                result = runtime.registry.get(name).fn(
                    arguments, ToolContext(runtime=runtime, memory=memory, turn=ctx.turn)
                )
            except CounselError as exc:
                memory.emit(
                    "tool_result",
                    CONVERSATIONALIST,
                    {"name": name, "ok": False, "error": str(exc)},
                )
                failures += 1
                if failures == 1:
                    _note_retry(memory, ctx, f"tool {name} failed: {exc}")
                    continue
                return _escalate(memory, f"tool {name} failed twice: {exc}")
            memory.emit("tool_result", CONVERSATIONALIST, {"name": name, "ok": True, "result": result})
            _emit_result_flags(memory, name, result)
            ctx.note_action(name)
            if name in ("record_answer", "mark_discussed"):
                ctx.marks.append(str(result["step_id"]))
            ctx.observations.append({"source": name, "ok": True, "result": result})
            continue

        if completion.kind is CompletionKind.HANDOFF:
            assert isinstance(completion.content, Mapping)
            target = str(completion.content["to"])
            payload_kind = str(completion.content["payload_kind"])
            body = dict(completion.content.get("payload") or {})
            try:
                check_handoff(runtime.graph, CONVERSATIONALIST, target, payload_kind, "request")
                observation = run_specialist(runtime, memory, ctx, target, payload_kind, body, backend)
            except ContractViolation as exc:
                failures += 1
                if failures == 1:
                    _note_retry(memory, ctx, str(exc))
                    continue
                return _escalate(memory, f"handoff rejected twice: {exc}")
            ctx.note_action(f"handoff:{target}")
            ctx.observations.append({"source": f"handoff:{target}", "ok": True, "result": observation})
            continue

    memory.emit(
        "flag",
        CONVERSATIONALIST,
        {"code": "max_iterations", "detail": f"no reply within {runtime.max_iterations} iterations"},
    )
    memory.emit("reply", CONVERSATIONALIST, {"text": SAFE_FALLBACK_REPLY, "asked_step": None, "followup": False})
    return SAFE_FALLBACK_REPLY


def _note_retry(memory: SharedMemory, ctx: TurnContext, detail: str) -> None:
    memory.emit("flag", CONVERSATIONALIST, {"code": "self_correction_retry", "detail": detail})
    ctx.observations.append({"source": "error", "ok": False, "detail": detail})


def _escalate(memory: SharedMemory, detail: str) -> str:
    memory.emit("flag", CONVERSATIONALIST, {"code": "escalation", "detail": detail})
    memory.emit(
        "reply",
        CONVERSATIONALIST,
        {"text": SAFE_FALLBACK_REPLY, "asked_step": None, "followup": False},
    )
    return SAFE_FALLBACK_REPLY


def _emit_result_flags(memory: SharedMemory, name: str, result: Mapping[str, Any]) -> None:
    if result.get("reconfirm"):
        memory.emit(
            "flag",
            CONVERSATIONALIST,
            {
                "code": "reconfirmation",
                "detail": "changed answer invalidates: " + ", ".join(result["reconfirm"]),
            },
        )
    if result.get("order_flag"):
        memory.emit(
            "flag",
            CONVERSATIONALIST,
            {
                "code": "order_skip",
                "detail": f"{name} ran before mandatory steps: " + ", ".join(result["order_flag"]),
            },
        )

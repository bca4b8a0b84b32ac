"""Durable counseling sessions on top of the conversation runtime.

The service owns a single sqlite file. Every transcript entry a session
produces is appended to the store right after the turn that produced it, so a
process restart loses at most the turn that was in flight: a session is
rebuilt by replaying its stored rows through the same fold the live path
used, which lands it in the exact same state.

Session status is part of the transcript. The service emits status_change
entries (active -> complete | escalated | abandoned) and the fold applies
them, so a replayed session knows how it ended without any side table.
"""
from __future__ import annotations

import json
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .agent_graph import (
    CONVERSATIONALIST,
    Runtime,
    SharedMemory,
    TranscriptEntry,
    run_turn,
)
from .lm_backend import Backend
from .agents import build_runtime
from .conversation_spec import (
    ConversationSpec,
    RiskLevel,
    StepKind,
    mandatory_counts,
    mandatory_coverage,
)
from .errors import (
    NotFinalizable,
    SessionBusy,
    SessionNotActive,
    SessionNotFound,
    UnknownKb,
    UnknownSpec,
    ValidationError,
)
from .knowledge_base import KnowledgeBase
from .rulebook import PROFILES, build_backend

SERVICE_ACTOR = "service"

ACTIVE = "active"
COMPLETE = "complete"
ESCALATED = "escalated"
ABANDONED = "abandoned"

INACTIVITY_TIMEOUT_S = 30 * 60.0

DISCLOSURE_TEXT = (
    "Welcome to the pharmacy counseling assistant. You are chatting with an "
    "automated system that follows a pharmacist approved checklist, and a "
    "human pharmacist supervises these conversations and can take over at "
    "any point. To find a product you can use safely I will need to ask a "
    "few health questions. Nothing here replaces personal medical advice."
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS sessions (
    id              TEXT PRIMARY KEY,
    status          TEXT NOT NULL,
    backend_profile TEXT NOT NULL,
    created_at      TEXT NOT NULL,
    updated_at      TEXT NOT NULL,
    updated_epoch   REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS entries (
    session_id TEXT NOT NULL REFERENCES sessions(id),
    seq        INTEGER NOT NULL,
    line       TEXT NOT NULL,
    PRIMARY KEY (session_id, seq)
);
CREATE TABLE IF NOT EXISTS summaries (
    session_id TEXT PRIMARY KEY REFERENCES sessions(id),
    line       TEXT NOT NULL,
    created_at TEXT NOT NULL
);
"""


# -------- pure summary construction --------


def _trace_resolutions(
    entries: list[TranscriptEntry], canonical: Iterable[tuple[str, str]]
) -> list[dict[str, Any]]:
    """Reconstruct how each canonical term entered the working set.

    Walks the specialists' tool_result entries to recover, per term, the
    customer wording it came from and the matcher score that linked the two.
    A term can arrive three ways: a direct matcher hit, an ambiguity the
    customer resolved, or a table entry re-labeled to its category. Terms
    with no recoverable trail (which would mean a gap in the transcript)
    fall back to mention == term with a null score rather than a made-up one.
    """
    # evidence, in transcript order
    finds: list[tuple[str, str, str, dict[str, float]]] = []
    relabels: list[tuple[str, str]] = []
    ambiguities: list[Mapping[str, Any]] = []
    for entry in entries:
        if entry.kind != "tool_result" or not entry.payload.get("ok"):
            continue
        name = str(entry.payload.get("name", ""))
        result = entry.payload.get("result") or {}
        if name.startswith("find_most_similar_word"):
            table = "allergies" if name.endswith("_allergies") else "medications_and_diseases"
            matches = {str(term): float(score) for term, score in result.get("matches", [])}
            finds.append((str(entry.actor), table, str(result.get("query", "")), matches))
        elif name == "classify_contraindication":
            relabels.append((str(result.get("term", "")), str(result.get("category", ""))))
        elif name == "resolve_ambiguity":
            ambiguities.append(result)

    def latest_find(table: str, term: str, actor: str) -> tuple[str, float] | None:
        for seen_actor, seen_table, query, matches in reversed(finds):
            if seen_actor == actor and seen_table == table and term in matches:
                return query, matches[term]
        return None

    resolutions: list[dict[str, Any]] = []
    for raw_table, term in canonical:
        table = str(raw_table)
        assessor_hit = latest_find(table, term, "symptom_assessor")
        traced: tuple[str, float | None] | None = None
        for result in ambiguities:
            if list(result.get("addition", [])) == [table, term]:
                # score comes from the matcher call that surfaced the candidates
                traced = (
                    str(result.get("mention", term)),
                    assessor_hit[1] if assessor_hit else None,
                )
        if traced is None and assessor_hit is not None:
            traced = assessor_hit
        if traced is None:
            # re-labeled terms: trace the table entry that mapped to this category
            for entry_term, category in reversed(relabels):
                if category == term:
                    traced = latest_find("medications_and_diseases", entry_term, "symptom_assessor")
                    if traced is None:
                        traced = (entry_term, None)
                    break
        if traced is None:
            traced = latest_find(table, term, "medicine_interpreter")
        if traced is None:
            traced = (term, None)
        mention, score = traced
        resolutions.append(
            {
                "table": table,
                "term": term,
                "mention": mention,
                "score": None if score is None else round(float(score), 4),
            }
        )
    return resolutions


def build_summary(
    spec: ConversationSpec, kb: KnowledgeBase, entries: Iterable[TranscriptEntry]
) -> dict[str, Any]:
    """Fold a transcript into the record a pharmacist reviews afterwards.

    Pure function of its inputs: no store access, no clock, no service state.
    The recommendation field is the reply from the turn in which the last
    critical decision step was marked done, because that is the turn where
    the product verdict was actually spoken.
    """
    entries = list(entries)
    memory = SharedMemory.replay(spec, entries)
    coverage = mandatory_coverage(spec, memory.tracker)

    critical_decides = {
        s.id
        for s in spec.steps
        if s.kind is StepKind.DECIDE and s.risk_level is RiskLevel.CRITICAL
    }
    verdict_turn: int | None = None
    for entry in entries:
        if entry.kind != "tool_result" or not entry.payload.get("ok"):
            continue
        if entry.payload.get("name") != "mark_discussed":
            continue
        result = entry.payload.get("result") or {}
        if result.get("step_id") in critical_decides:
            verdict_turn = entry.turn
    recommendation = None
    if verdict_turn is not None:
        for entry in entries:
            if entry.kind == "reply" and entry.turn == verdict_turn:
                recommendation = str(entry.payload["text"])

    collected = {data_key: item.value for data_key, item in memory.tracker.collected.items()}
    step_outcomes = {step.id: memory.tracker.statuses[step.id].value for step in spec.steps}

    partition = memory.working.partition
    return {
        "status": memory.status,
        "turns": memory.turn,
        "mandatory_coverage": round(coverage, 4),
        "complete": coverage == 1.0,
        "escalated": memory.escalated,
        "collected": collected,
        "step_outcomes": step_outcomes,
        "canonical_contraindications": [list(pair) for pair in memory.working.canonical],
        "resolutions": _trace_resolutions(entries, memory.working.canonical),
        "condition_answers": dict(memory.working.condition_answers),
        "dropped_mentions": list(memory.working.dropped),
        "safe_products": list(partition.get("safe", [])) if partition else None,
        "excluded_products": dict(partition.get("excluded", {})) if partition else None,
        "recommendation": recommendation,
        "flags": [
            str(e.payload.get("code"))
            for e in entries
            if e.kind == "flag" and e.payload.get("code")
        ],
    }


# -------- session views --------


@dataclass(frozen=True)
class SessionView:
    id: str
    status: str
    backend_profile: str
    created_at: str
    updated_at: str
    turn: int
    mandatory_coverage: float
    mandatory_done: int
    mandatory_total: int
    complete: bool
    escalated: bool
    last_reply: str | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "status": self.status,
            "backend_profile": self.backend_profile,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "turn": self.turn,
            "mandatory_coverage": self.mandatory_coverage,
            "mandatory_done": self.mandatory_done,
            "mandatory_total": self.mandatory_total,
            "complete": self.complete,
            "escalated": self.escalated,
            "last_reply": self.last_reply,
        }


@dataclass
class _LiveSession:
    memory: SharedMemory
    backend: Backend
    profile: str
    created_at: str
    lock: threading.Lock
    stored: int  # how many entries are already persisted


# -------- the service --------


class CounselingService:
    """Create, drive and summarize counseling sessions backed by sqlite."""

    def __init__(
        self,
        spec: ConversationSpec,
        kb: KnowledgeBase,
        db_path: str = ":memory:",
        *,
        kb_id: str = "default",
        backend_factory: Callable[[str], Backend] | None = None,
        clock_factory: Callable[[], Callable[[], str]] | None = None,
        inactivity_timeout_s: float = INACTIVITY_TIMEOUT_S,
        now: Callable[[], float] = time.time,
    ):
        self.spec = spec
        self.kb = kb
        self.kb_id = kb_id
        self.runtime: Runtime = build_runtime(spec, kb)
        self._backend_factory = backend_factory or (
            lambda profile: build_backend(profile, spec, kb)
        )
        self._clock_factory = clock_factory
        self._timeout = inactivity_timeout_s
        self._now = now

        self._db = sqlite3.connect(db_path, check_same_thread=False)
        self._db.executescript(_SCHEMA)
        self._db.commit()
        self._db_lock = threading.Lock()
        self._live: dict[str, _LiveSession] = {}
        self._registry_lock = threading.Lock()

    # ---- lifecycle ----

    def create_session(
        self,
        *,
        spec_id: str | None = None,
        kb_id: str | None = None,
        backend_profile: str = "standard",
    ) -> dict[str, Any]:
        if spec_id is not None and spec_id != self.spec.medication_id:
            raise UnknownSpec(f"service has no spec {spec_id!r}")
        if kb_id is not None and kb_id != self.kb_id:
            raise UnknownKb(f"service has no knowledge base {kb_id!r}")
        if backend_profile not in PROFILES:
            raise ValidationError(f"unknown backend profile {backend_profile!r}")

        session_id = uuid.uuid4().hex[:16]
        memory = self._new_memory()
        memory.emit(
            "reply",
            CONVERSATIONALIST,
            {"text": DISCLOSURE_TEXT, "asked_step": None, "followup": False, "banner": True},
        )
        created_at = memory.entries[0].ts
        live = _LiveSession(
            memory=memory,
            backend=self._backend_factory(backend_profile),
            profile=backend_profile,
            created_at=created_at,
            lock=threading.Lock(),
            stored=0,
        )
        with self._registry_lock:
            self._live[session_id] = live
        with self._db_lock:
            self._db.execute(
                "INSERT INTO sessions (id, status, backend_profile, created_at, updated_at,"
                " updated_epoch) VALUES (?, ?, ?, ?, ?, ?)",
                (session_id, ACTIVE, backend_profile, created_at, created_at, self._now()),
            )
            self._db.commit()
        self._flush(session_id, live)
        return {"session": self._view(session_id, live).to_dict(), "greeting": DISCLOSURE_TEXT}

    def post_message(self, session_id: str, text: str) -> dict[str, Any]:
        live = self._require(session_id)
        if not live.lock.acquire(blocking=False):
            raise SessionBusy(f"session {session_id} is handling another message")
        try:
            self._expire_if_idle(session_id, live)
            if live.memory.status not in (ACTIVE, COMPLETE):
                raise SessionNotActive(
                    f"session {session_id} is {live.memory.status}, not accepting messages"
                )
            try:
                reply = run_turn(self.runtime, live.memory, text, live.backend)
            finally:
                self._flush(session_id, live)
            self._settle_status(session_id, live)
            return {"reply": reply, "session": self._view(session_id, live).to_dict()}
        finally:
            live.lock.release()

    def finalize(self, session_id: str) -> dict[str, Any]:
        live = self._require(session_id)
        with live.lock:
            self._expire_if_idle(session_id, live)
            status = live.memory.status
            if status not in (COMPLETE, ESCALATED, ABANDONED):
                raise NotFinalizable(
                    f"session {session_id} is {status}; finish or abandon it first"
                )
            stored = self._stored_summary(session_id)
            if stored is not None:
                return stored
            summary = build_summary(self.spec, self.kb, live.memory.entries)
            line = json.dumps(summary, sort_keys=True, ensure_ascii=False)
            with self._db_lock:
                self._db.execute(
                    "INSERT INTO summaries (session_id, line, created_at) VALUES (?, ?, ?)",
                    (session_id, line, live.memory.entries[-1].ts),
                )
                self._db.commit()
            return summary

    # ---- reads ----

    def get_session(self, session_id: str) -> SessionView:
        live = self._require(session_id)
        with live.lock:
            self._expire_if_idle(session_id, live)
            return self._view(session_id, live)

    def get_transcript(self, session_id: str) -> list[dict[str, Any]]:
        live = self._require(session_id)
        with live.lock:
            return [json.loads(e.to_json()) for e in live.memory.entries]

    def get_summary(self, session_id: str) -> dict[str, Any]:
        """Current summary; the finalized snapshot when one was stored."""
        stored = self._stored_summary(session_id)
        if stored is not None:
            return stored
        live = self._require(session_id)
        with live.lock:
            self._expire_if_idle(session_id, live)
            return build_summary(self.spec, self.kb, live.memory.entries)

    def list_sessions(self) -> list[SessionView]:
        with self._db_lock:
            rows = self._db.execute("SELECT id FROM sessions ORDER BY created_at, id").fetchall()
        views = []
        for (session_id,) in rows:
            views.append(self.get_session(session_id))
        return views

    def close(self) -> None:
        with self._db_lock:
            self._db.close()

    # ---- internals ----

    def _new_memory(self) -> SharedMemory:
        clock = self._clock_factory() if self._clock_factory else None
        return SharedMemory(self.spec, clock=clock)

    def _require(self, session_id: str) -> _LiveSession:
        with self._registry_lock:
            live = self._live.get(session_id)
            if live is not None:
                return live
        live = self._rebuild(session_id)
        with self._registry_lock:
            return self._live.setdefault(session_id, live)

    def _rebuild(self, session_id: str) -> _LiveSession:
        with self._db_lock:
            row = self._db.execute(
                "SELECT backend_profile, created_at FROM sessions WHERE id = ?",
                (session_id,),
            ).fetchone()
            lines = self._db.execute(
                "SELECT line FROM entries WHERE session_id = ? ORDER BY seq", (session_id,)
            ).fetchall()
        if row is None:
            raise SessionNotFound(f"no session {session_id!r}")
        profile, created_at = row
        entries = [TranscriptEntry.from_json(line) for (line,) in lines]
        memory = SharedMemory.replay(self.spec, entries)
        if self._clock_factory is not None:
            memory._clock = self._clock_factory()
        return _LiveSession(
            memory=memory,
            backend=self._backend_factory(profile),
            profile=profile,
            created_at=created_at,
            lock=threading.Lock(),
            stored=len(entries),
        )

    def _flush(self, session_id: str, live: _LiveSession) -> None:
        fresh = live.memory.entries[live.stored :]
        if not fresh:
            return
        rows = [(session_id, e.seq, e.to_json()) for e in fresh]
        updated_at = fresh[-1].ts
        with self._db_lock:
            self._db.executemany(
                "INSERT INTO entries (session_id, seq, line) VALUES (?, ?, ?)", rows
            )
            self._db.execute(
                "UPDATE sessions SET status = ?, updated_at = ?, updated_epoch = ? WHERE id = ?",
                (live.memory.status, updated_at, self._now(), session_id),
            )
            self._db.commit()
        live.stored = len(live.memory.entries)

    def _set_status(self, session_id: str, live: _LiveSession, to: str, reason: str) -> None:
        live.memory.emit(
            "status_change",
            SERVICE_ACTOR,
            {"from": live.memory.status, "to": to, "reason": reason},
        )
        self._flush(session_id, live)

    def _settle_status(self, session_id: str, live: _LiveSession) -> None:
        memory = live.memory
        if memory.escalated and memory.status != ESCALATED:
            self._set_status(session_id, live, ESCALATED, "runtime escalation")
            return
        if memory.status == ACTIVE and mandatory_coverage(self.spec, memory.tracker) == 1.0:
            self._set_status(session_id, live, COMPLETE, "all mandatory steps covered")

    def _expire_if_idle(self, session_id: str, live: _LiveSession) -> None:
        if live.memory.status != ACTIVE:
            return
        with self._db_lock:
            row = self._db.execute(
                "SELECT updated_epoch FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
        if row and self._now() - row[0] > self._timeout:
            self._set_status(session_id, live, ABANDONED, "inactivity timeout")

    def _stored_summary(self, session_id: str) -> dict[str, Any] | None:
        with self._db_lock:
            row = self._db.execute(
                "SELECT line FROM summaries WHERE session_id = ?", (session_id,)
            ).fetchone()
        return json.loads(row[0]) if row else None

    def _view(self, session_id: str, live: _LiveSession) -> SessionView:
        memory = live.memory
        coverage = mandatory_coverage(self.spec, memory.tracker)
        done, total = mandatory_counts(self.spec, memory.tracker)
        return SessionView(
            id=session_id,
            status=memory.status,
            backend_profile=live.profile,
            created_at=live.created_at,
            updated_at=memory.entries[-1].ts if memory.entries else live.created_at,
            turn=memory.turn,
            mandatory_coverage=round(coverage, 4),
            mandatory_done=done,
            mandatory_total=total,
            complete=coverage == 1.0,
            escalated=memory.escalated,
            last_reply=memory.last_reply(),
        )

"""Pluggable language model backend.

Agents never talk to a model directly; they build a Prompt and hand it to a
backend that returns one Completion. Two backends ship here:

* ScriptedBackend replays an ordered rule list and makes the whole runtime a
  deterministic function of its inputs. Tests and offline serving use it.
* RemoteBackend posts the prompt to an HTTP endpoint configured through
  environment variables.

Whatever the backend, complete() validates the result before the caller sees
it, so malformed model output surfaces as a ContractViolation instead of an
exception deep inside a turn.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    ContractViolation,
    NoRuleMatched,
)


class CompletionKind(str, Enum):
    UTTERANCE = "utterance"
    TOOL_CALL = "tool_call"
    HANDOFF = "handoff"


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: Mapping[str, str]  # argument name -> type name ("string", "boolean", "list", "object")
    required: tuple[str, ...] = ()


@dataclass(frozen=True)
class PromptTurn:
    role: str  # "customer", "agent", "observation", "state"
    content: str


@dataclass(frozen=True)
class Prompt:
    system: str
    history: tuple[PromptTurn, ...]
    tool_schemas: tuple[ToolSchema, ...] = ()

    def state_view(self) -> dict:
        """Parsed content of the trailing state turn, {} when absent.

        The runtime appends one machine readable state line per completion
        request; scripted rules key off it.
        """
        for turn in reversed(self.history):
            if turn.role == "state":
                try:
                    parsed = json.loads(turn.content)
                except json.JSONDecodeError:
                    return {}
                return parsed if isinstance(parsed, dict) else {}
        return {}


@dataclass(frozen=True)
class Completion:
    kind: CompletionKind
    content: object  # str for utterances, mapping for tool calls and handoffs
    thought: str = ""
    confidence: float | None = None


class Backend(Protocol):
    def complete(self, prompt: Prompt) -> Completion: ...


_TYPE_CHECKS: dict[str, Callable[[object], bool]] = {
    "string": lambda v: isinstance(v, str),
    "boolean": lambda v: isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


def validate_completion(completion: Completion, prompt: Prompt) -> None:
    """Check a completion against the contract before it is acted on.

    Raises ContractViolation describing the first problem found. Utterances
    must be non-empty text; tool calls must name a schema from the prompt and
    pass argument validation; handoffs must carry a target and payload kind.
    """
    if not isinstance(completion, Completion):
        raise ContractViolation(f"backend returned {type(completion).__name__}, not a Completion")

    if completion.kind is CompletionKind.UTTERANCE:
        if not isinstance(completion.content, str) or not completion.content.strip():
            raise ContractViolation("utterance completion must carry non-empty text")
        return

    if completion.kind is CompletionKind.TOOL_CALL:
        content = completion.content
        if not isinstance(content, Mapping) or "name" not in content:
            raise ContractViolation("tool call completion must be a mapping with a name")
        name = content["name"]
        schema = next((s for s in prompt.tool_schemas if s.name == name), None)
        if schema is None:
            known = ", ".join(sorted(s.name for s in prompt.tool_schemas)) or "(none)"
            raise ContractViolation(f"unknown tool {name!r}; available tools: {known}")
        arguments = content.get("arguments", {})
        if not isinstance(arguments, Mapping):
            raise ContractViolation(f"tool {name}: arguments must be a mapping")
        for arg in schema.required:
            if arg not in arguments:
                raise ContractViolation(f"tool {name}: missing required argument {arg!r}")
        for arg, value in arguments.items():
            if arg not in schema.parameters:
                raise ContractViolation(f"tool {name}: unexpected argument {arg!r}")
            expected = schema.parameters[arg]
            check = _TYPE_CHECKS.get(expected)
            if check is not None and not check(value):
                raise ContractViolation(
                    f"tool {name}: argument {arg!r} should be {expected}, got {type(value).__name__}"
                )
        return

    if completion.kind is CompletionKind.HANDOFF:
        content = completion.content
        if not isinstance(content, Mapping) or "to" not in content or "payload_kind" not in content:
            raise ContractViolation("handoff completion needs to and payload_kind")
        return

    raise ContractViolation(f"unknown completion kind: {completion.kind!r}")


def complete(backend: Backend, prompt: Prompt) -> Completion:
    """Ask the backend for one completion and validate it.

    Transport errors come through as BackendUnavailable or BackendTimeout;
    contract problems as ContractViolation. The caller decides whether to
    feed the error back for self-correction or to escalate.
    """
    completion = backend.complete(prompt)
    validate_completion(completion, prompt)
    return completion


# -------- scripted backend --------


@dataclass
class ScriptRule:
    """One (matcher, completion) pair; first matching rule wins."""

    name: str
    matcher: Callable[[Prompt], bool]
    completion: Completion | Callable[[Prompt], Completion]

    def produce(self, prompt: Prompt) -> Completion:
        if callable(self.completion):
            return self.completion(prompt)
        return self.completion


class ScriptedBackend:
    def __init__(self, rules: Sequence[ScriptRule]):
        self.rules = list(rules)

    def complete(self, prompt: Prompt) -> Completion:
        for rule in self.rules:
            if rule.matcher(prompt):
                return rule.produce(prompt)
        view = prompt.state_view()
        raise NoRuleMatched(
            f"no scripted rule matched (turn={view.get('turn')}, "
            f"input={view.get('customer_input')!r})"
        )


def scripted_backend(rules: Sequence[ScriptRule]) -> ScriptedBackend:
    return ScriptedBackend(rules)


# -------- remote backend --------

ENV_KIND = "ECP_BACKEND"
ENV_ENDPOINT = "ECP_BACKEND_ENDPOINT"
ENV_TOKEN = "ECP_BACKEND_TOKEN"
ENV_MODEL = "ECP_BACKEND_MODEL"
ENV_TIMEOUT = "ECP_BACKEND_TIMEOUT"

DEFAULT_TIMEOUT_SECONDS = 30.0


class RemoteBackend:
    """Thin HTTP client for a hosted completion endpoint.

    One retry on a transport failure, then BackendUnavailable or
    BackendTimeout. The response must be a JSON object with "kind" and
    "content" fields mirroring Completion.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        token: str | None = None,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.token = token
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, prompt: Prompt) -> Completion:
        payload = {
            "model": self.model,
            "system": prompt.system,
            "history": [{"role": t.role, "content": t.content} for t in prompt.history],
            "tools": [
                {
                    "name": s.name,
                    "description": s.description,
                    "parameters": dict(s.parameters),
                    "required": list(s.required),
                }
                for s in prompt.tool_schemas
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"

        last_error: Exception | None = None
        for attempt in range(2):  # one retry on transport trouble
            try:
                response = self._session.post(
                    f"{self.endpoint}/complete",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.Timeout:
                last_error = BackendTimeout(f"backend timed out after {self.timeout}s")
                continue
            except requests.RequestException as exc:
                last_error = BackendUnavailable(f"backend unreachable: {exc}")
                continue
            if response.status_code >= 500:
                last_error = BackendUnavailable(f"backend returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise BackendUnavailable(f"backend returned {response.status_code}: {response.text[:200]}")
            return self._parse(response)
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse(response: requests.Response) -> Completion:
        try:
            body = response.json()
        except ValueError as exc:
            raise ContractViolation(f"backend response is not JSON: {exc}") from exc
        if not isinstance(body, dict) or "kind" not in body or "content" not in body:
            raise ContractViolation("backend response must carry kind and content")
        try:
            kind = CompletionKind(body["kind"])
        except ValueError as exc:
            raise ContractViolation(f"backend returned unknown kind {body['kind']!r}") from exc
        confidence = body.get("confidence")
        if confidence is not None and not isinstance(confidence, (int, float)):
            raise ContractViolation("confidence must be a number when present")
        return Completion(
            kind=kind,
            content=body["content"],
            thought=str(body.get("thought", "")),
            confidence=(float(confidence) if confidence is not None else None),
        )


def backend_from_env(environ: Mapping[str, str] | None = None) -> Backend | None:
    """Build the backend selected by environment variables.

    Returns None when ECP_BACKEND is unset or "scripted"; the caller then
    wires a scripted backend of its own choosing.
    """
    env = environ if environ is not None else os.environ
    kind = env.get(ENV_KIND, "").strip().lower()
    if kind in ("", "scripted"):
        return None
    if kind != "remote":
        raise BackendUnavailable(f"unknown backend kind {kind!r}; expected scripted or remote")
    endpoint = env.get(ENV_ENDPOINT, "").strip()
    model = env.get(ENV_MODEL, "").strip()
    if not endpoint or not model:
        raise BackendUnavailable(
            f"remote backend needs {ENV_ENDPOINT} and {ENV_MODEL} to be set"
        )
    timeout_raw = env.get(ENV_TIMEOUT, "").strip()
    try:
        timeout = float(timeout_raw) if timeout_raw else DEFAULT_TIMEOUT_SECONDS
    except ValueError as exc:
        raise BackendUnavailable(f"bad {ENV_TIMEOUT} value {timeout_raw!r}") from exc
    return RemoteBackend(
        endpoint=endpoint,
        model=model,
        token=env.get(ENV_TOKEN) or None,
        timeout=timeout,
    )

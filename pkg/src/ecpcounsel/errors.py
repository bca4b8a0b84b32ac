"""Exception hierarchy shared across the package.

Everything raised on purpose derives from CounselError so callers can catch
domain failures without swallowing programming errors.
"""
from __future__ import annotations


class CounselError(Exception):
    """Base class for all domain errors."""


# ---- document parsing and validation ----

class DocumentSyntaxError(CounselError):
    """A spec or knowledge base document is not well formed."""


class ValidationError(CounselError):
    """A well formed document violates a structural rule."""


class DanglingReference(ValidationError):
    """A document refers to a term or id that is not defined."""


class DuplicateName(ValidationError):
    """A name that must be unique appears twice."""


# ---- progress tracking ----

class UnknownStep(CounselError):
    """Step id not present in the conversation spec."""


class MissingValue(CounselError):
    """An elicit step was marked done without a collected value."""


class ValueNotAllowed(CounselError):
    """A value was supplied for a step kind that does not collect one."""


class PrerequisiteNotDone(CounselError):
    """A step was marked done while one of its requires is not done."""


# ---- knowledge base ----

class UnansweredCondition(CounselError):
    """A conditional contraindication term has no recorded answer.

    Signals that a follow-up question is required before the product
    partition can be computed.
    """

    def __init__(self, term: str, question: str | None = None):
        self.term = term
        self.question = question
        super().__init__(f"condition not answered for term: {term}")


# ---- agent graph and tools ----

class ToolError(CounselError):
    """A tool invocation failed (unknown name or bad arguments)."""


class UnknownEndpoint(ValidationError):
    """A graph edge references an agent that is not a node."""


class UnreachableNode(ValidationError):
    """A graph node cannot be reached from the entry agent."""


class MaxIterationsExceeded(CounselError):
    """A reasoning loop hit its iteration bound without producing a reply."""


class EscalationSignal(CounselError):
    """Raised internally when a turn must end with the safe fallback reply."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


# ---- language model backend ----

class BackendError(CounselError):
    """Base class for backend failures."""


class ContractViolation(BackendError):
    """The backend produced output that does not fit the completion contract."""


class BackendUnavailable(BackendError):
    """The configured backend cannot be reached."""


class BackendTimeout(BackendError):
    """The backend did not answer within the configured timeout."""


class NoRuleMatched(BackendError):
    """A scripted backend had no rule for the presented prompt."""


# ---- session service ----

class SessionNotFound(CounselError):
    """A session id does not exist in the store."""


class UnknownSpec(CounselError):
    """create_session referenced a spec id the service has not loaded."""


class UnknownKb(CounselError):
    """create_session referenced a knowledge base id the service has not loaded."""


class SessionNotActive(CounselError):
    """A message was posted to a session that is not active."""


class SessionBusy(CounselError):
    """A message arrived while the previous one is still being handled."""


class NotFinalizable(CounselError):
    """finalize was called on a session that is neither complete nor escalated."""


# ---- scenario harness ----

class ScenarioStuck(CounselError):
    """A scenario script has no line matching the system's last reply."""

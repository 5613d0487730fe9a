"""Exception taxonomy shared across the engine.

Every failure the engine can surface maps to exactly one of these classes;
the service layer translates them into its closed error-code set.
"""

from __future__ import annotations


class PlanloopError(Exception):
    """Base class for all engine errors."""


class ValidationError(PlanloopError):
    """A domain value violated its schema or an invariant."""


class SequencingError(PlanloopError):
    """An observation arrived with an unexpected turn index."""


class BusyError(PlanloopError):
    """A turn is already in flight for this session."""


class NotFoundError(PlanloopError):
    """Unknown session id."""


class ScriptParseError(PlanloopError):
    """A script document did not parse; message names the offending entry."""


class ScriptExhaustedError(PlanloopError):
    """The scripted backend had no entry matching the request."""


class ReplayMissError(PlanloopError):
    """The replay backend has no recording for the request hash."""


class TransportError(PlanloopError):
    """The live backend failed to reach the provider."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class OutputParseError(PlanloopError):
    """A single policy output could not be parsed into its schema."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class DecisionFailureError(PlanloopError):
    """Every meta-controller attempt produced unusable output.

    Carries the raw text of every attempt for audit.
    """

    def __init__(self, message: str, raw_outputs: list[str]):
        super().__init__(message)
        self.raw_outputs = list(raw_outputs)


class ExecutionFailureError(PlanloopError):
    """A sub-policy could not produce a valid result."""

    def __init__(self, message: str, raw_outputs: list[str] | None = None):
        super().__init__(message)
        self.raw_outputs = list(raw_outputs or [])


class UnknownStepError(PlanloopError):
    """An alter target did not resolve to any plan step."""

    def __init__(self, target_name: str):
        super().__init__(f"no plan step matches {target_name!r}")
        self.target_name = target_name


class EmptyResultError(PlanloopError):
    """Every generated step was dropped (name collisions)."""


class ConflictError(PlanloopError):
    """An event append did not continue the session's sequence."""


class IntegrityError(PlanloopError):
    """An event log is corrupt; message names the last valid event id."""

    def __init__(self, message: str, last_valid_event_id: int):
        super().__init__(message)
        self.last_valid_event_id = last_valid_event_id

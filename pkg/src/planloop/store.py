"""Event-sourced session persistence.

Sessions are append-only logs of TurnEvents; all state (goal, plan, history,
prior macro-actions, user summary) is a fold over the log. The engine applies
the same fold to its in-memory state that reconstruction applies to the log,
so the two can never drift.

The JSONL backend writes one event per line. A whole turn is appended as one
batch: the batch's final line carries a seal marker, and recovery drops any
trailing events without a sealed batch end, so a torn write can never surface
a partially applied turn.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .domain import (
    Goal,
    MacroAction,
    Observation,
    Plan,
    PlanStep,
    UserModelSummary,
    canonical_json,
    turn_system_response,
)
from .errors import ConflictError, IntegrityError, NotFoundError, ValidationError

EVENT_KINDS = frozenset(
    {
        "SessionCreated",
        "ObservationRecorded",
        "MacroActionChosen",
        "StepsAdded",
        "StepAltered",
        "ContentAttached",
        "QuestionAsked",
        "TurnFailed",
    }
)

_BATCH_END_KEY = "batch_end"  # storage envelope only, not part of TurnEvent


@dataclass
class TurnEvent:
    event_id: int
    session_id: str
    kind: str
    payload: dict
    timestamp: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind: {self.kind!r}")
        if self.event_id < 1:
            raise ValidationError("event_id starts at 1")

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "session_id": self.session_id,
            "kind": self.kind,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TurnEvent":
        return cls(
            event_id=data["event_id"],
            session_id=data["session_id"],
            kind=data["kind"],
            payload=data["payload"],
            timestamp=data["timestamp"],
        )


@dataclass
class SessionState:
    """Folded view of one session's event log."""

    session_id: str
    goal: Optional[Goal] = None
    plan: Plan = field(default_factory=Plan)
    history: list[tuple[Observation, str]] = field(default_factory=list)
    prior_macro_actions: list[MacroAction] = field(default_factory=list)
    user_model_summary: Optional[UserModelSummary] = None
    last_event_id: int = 0
    failed_turns: int = 0
    _pending_observation: Optional[Observation] = None
    _pending_macro: Optional[MacroAction] = None

    @property
    def next_turn_index(self) -> int:
        return len(self.history)

    def to_dict(self) -> dict:
        return {
            "goal": self.goal.to_dict() if self.goal else None,
            "plan": self.plan.to_dict(),
            "history": [
                {"observation": obs.to_dict(), "system_response": resp}
                for obs, resp in self.history
            ],
            "prior_macro_actions": [m.to_dict() for m in self.prior_macro_actions],
            "user_model_summary": (
                self.user_model_summary.to_dict() if self.user_model_summary else None
            ),
        }

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def apply(self, event: TurnEvent) -> None:
        """Fold one event into this state. The engine and reconstruction both
        go through here, which is what keeps live and replayed state equal."""
        if event.event_id != self.last_event_id + 1:
            raise IntegrityError(
                f"event {event.event_id} does not follow {self.last_event_id}",
                last_valid_event_id=self.last_event_id,
            )
        self.last_event_id = event.event_id
        payload = event.payload
        kind = event.kind

        if kind == "SessionCreated":
            self.goal = Goal.from_dict(payload["goal"])
        elif kind == "ObservationRecorded":
            self._pending_observation = Observation.from_dict(payload)
        elif kind == "MacroActionChosen":
            self._pending_macro = MacroAction.from_dict(payload)
        elif kind == "StepsAdded":
            steps = [PlanStep.from_dict(s) for s in payload["steps"]]
            self.plan = Plan(
                steps=list(self.plan.steps) + steps, version=self.plan.version + 1
            )
            self.user_model_summary = UserModelSummary.from_dict(payload["user_model_summary"])
            self._finish_turn(turn_system_response("add-steps", [s.name for s in steps], None))
        elif kind == "StepAltered":
            after_by_id = {
                a["after"]["step_id"]: PlanStep.from_dict(a["after"])
                for a in payload["alterations"]
            }
            names = [step.name for step in after_by_id.values()]
            self.plan = Plan(
                steps=[after_by_id.get(s.step_id, s) for s in self.plan.steps],
                version=self.plan.version + 1,
            )
            self._finish_turn(turn_system_response("alter-steps", names, None))
        elif kind == "ContentAttached":
            contents = payload["step_contents"]
            steps = []
            for step in self.plan.steps:
                if step.step_id in contents:
                    updated = PlanStep.from_dict(step.to_dict())
                    updated.content_items = [
                        _content_item_from(d) for d in contents[step.step_id]
                    ]
                    steps.append(updated)
                else:
                    steps.append(step)
            self.plan = Plan(steps=steps, version=self.plan.version)
        elif kind == "QuestionAsked":
            self._finish_turn(turn_system_response("ask-question", [], payload["question"]))
        elif kind == "TurnFailed":
            pass  # a failed turn leaves state untouched

    def _finish_turn(self, system_response: str) -> None:
        if self._pending_observation is not None:
            self.history.append((self._pending_observation, system_response))
        if self._pending_macro is not None:
            self.prior_macro_actions.append(self._pending_macro)
        self._pending_observation = None
        self._pending_macro = None


def _content_item_from(data: dict):
    from .domain import ContentItem

    return ContentItem.from_dict(data)


def fold_events(session_id: str, events: list[TurnEvent]) -> SessionState:
    state = SessionState(session_id=session_id)
    for event in events:
        state.apply(event)
    return state


def plan_at_version(events: list[TurnEvent], version: int) -> Plan:
    """Historical plan: the last state observed at the requested version, so
    content attached within the same turn is included."""
    state = SessionState(session_id="(fold)")
    snapshots: dict[int, str] = {0: canonical_json(Plan().to_dict())}
    for event in events:
        state.apply(event)
        snapshots[state.plan.version] = canonical_json(state.plan.to_dict())
    if version not in snapshots:
        raise ValidationError(f"unknown plan version: {version}")
    return Plan.from_dict(json.loads(snapshots[version]))


class InMemoryStore:
    """Test and replay backend with the same contract as the JSONL store."""

    def __init__(self):
        self._events: dict[str, list[TurnEvent]] = {}
        self._lock = threading.Lock()

    def session_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._events)

    def has_session(self, session_id: str) -> bool:
        with self._lock:
            return session_id in self._events

    def append_events(self, session_id: str, events: list[TurnEvent]) -> tuple[int, int]:
        if not events:
            raise ValidationError("cannot append an empty batch")
        with self._lock:
            log = self._events.setdefault(session_id, [])
            last = log[-1].event_id if log else 0
            _check_batch(events, last)
            log.extend(events)
            return events[0].event_id, events[-1].event_id

    def read_events(self, session_id: str, from_event_id: int = 1) -> list[TurnEvent]:
        with self._lock:
            if session_id not in self._events:
                raise NotFoundError(f"unknown session: {session_id}")
            return [e for e in self._events[session_id] if e.event_id >= from_event_id]


class JsonlStore:
    """One UTF-8 JSON-lines file per session under the data directory; the
    file name is the session id. Appends are a single write plus fsync."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._last_ids: dict[str, int] = {}

    def _path(self, session_id: str) -> Path:
        if "/" in session_id or "\\" in session_id or session_id in ("", ".", ".."):
            raise ValidationError(f"invalid session id: {session_id!r}")
        return self.directory / session_id

    def session_ids(self) -> list[str]:
        return sorted(p.name for p in self.directory.iterdir() if p.is_file())

    def has_session(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def append_events(self, session_id: str, events: list[TurnEvent]) -> tuple[int, int]:
        if not events:
            raise ValidationError("cannot append an empty batch")
        path = self._path(session_id)
        with self._lock:
            last = self._last_ids.get(session_id)
            if last is None:
                last = self._read(session_id)[-1].event_id if path.exists() else 0
            _check_batch(events, last)
            lines = []
            for i, event in enumerate(events):
                envelope = event.to_dict()
                envelope[_BATCH_END_KEY] = i == len(events) - 1
                lines.append(json.dumps(envelope, sort_keys=True, ensure_ascii=False))
            blob = ("\n".join(lines) + "\n").encode("utf-8")
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
            try:
                os.write(fd, blob)
                os.fsync(fd)
            finally:
                os.close(fd)
            self._last_ids[session_id] = events[-1].event_id
            return events[0].event_id, events[-1].event_id

    def read_events(self, session_id: str, from_event_id: int = 1) -> list[TurnEvent]:
        events = self._read(session_id)
        return [e for e in events if e.event_id >= from_event_id]

    def _read(self, session_id: str) -> list[TurnEvent]:
        path = self._path(session_id)
        if not path.exists():
            raise NotFoundError(f"unknown session: {session_id}")
        raw_lines = path.read_bytes().split(b"\n")
        events: list[TurnEvent] = []
        sealed_upto = 0  # number of events covered by a completed batch
        for index, raw in enumerate(raw_lines):
            if not raw.strip():
                continue
            try:
                envelope = json.loads(raw.decode("utf-8"))
                batch_end = bool(envelope.pop(_BATCH_END_KEY, True))
                event = TurnEvent.from_dict(envelope)
            except Exception as exc:
                remainder = b"".join(raw_lines[index + 1 :]).strip()
                if remainder:
                    last_valid = events[-1].event_id if events else 0
                    raise IntegrityError(
                        f"corrupt event at line {index + 1}; last valid event id {last_valid}",
                        last_valid_event_id=last_valid,
                    ) from exc
                break  # torn trailing write: drop it
            events.append(event)
            if batch_end:
                sealed_upto = len(events)
        events = events[:sealed_upto]  # drop any unsealed trailing batch
        for prev, cur in zip([0] + [e.event_id for e in events], [e.event_id for e in events]):
            if cur != prev + 1:
                raise IntegrityError(
                    f"event id gap after {prev}", last_valid_event_id=prev
                )
        return events


def _check_batch(events: list[TurnEvent], last_id: int) -> None:
    expected = last_id + 1
    for event in events:
        if event.event_id != expected:
            raise ConflictError(
                f"event id {event.event_id} does not continue sequence at {expected}"
            )
        expected += 1


def reconstruct_session(store, session_id: str) -> SessionState:
    """Fold the full log back into session state. Raises NotFoundError for
    unknown sessions and IntegrityError for corrupt logs."""
    return fold_events(session_id, store.read_events(session_id))

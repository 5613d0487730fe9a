"""The turn loop: one observation in, one macro-action out, state committed.

Each turn builds the context, asks the meta-controller for a macro-action,
dispatches it to the matching sub-policy, refreshes content for created or
altered steps, and commits the whole turn as one atomic event batch. The
engine is the single writer of session state; a failed turn appends only a
TurnFailed event and leaves the folded state byte-identical.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

from .content import (
    DEFAULT_ITEMS_PER_TOOL,
    DEFAULT_ITEMS_SHOWN,
    DEFAULT_TOOL_TIMEOUT_S,
    ToolAdapter,
    content_for_step,
    default_tool_registry,
)
from .domain import (
    ContentItem,
    MacroAction,
    Observation,
    Plan,
    PlanDiff,
    PlanStep,
    PolicyConfig,
    diff_plans,
)
from .errors import (
    BusyError,
    DecisionFailureError,
    EmptyResultError,
    ExecutionFailureError,
    NotFoundError,
    SequencingError,
    UnknownStepError,
    ValidationError,
)
from .gateway import ScriptedBackend
from .meta_controller import (
    DEFAULT_CONTEXT_BUDGET,
    MetaDecision,
    build_context,
    decide_macro_action,
    render_context,
)
from .prompting import assert_distinct_exemplars, load_policy_configs
from .store import InMemoryStore, SessionState, TurnEvent, plan_at_version, reconstruct_session
from .sub_policies import execute_add_steps, execute_alter_step, execute_ask_question

logger = logging.getLogger(__name__)

_FAILURE_CODES = {
    DecisionFailureError: "decision-failure",
    ExecutionFailureError: "execution-failure",
    UnknownStepError: "unknown-step",
    EmptyResultError: "empty-result",
}


@dataclass
class TurnResult:
    plan_diff: PlanDiff
    question_asked: Optional[str]
    shown_questions: list[dict]  # {"step_id": ..., "question": ...} per plan step
    macro_action: MacroAction
    turn_index: int

    def __post_init__(self):
        mutated = not self.plan_diff.is_empty()
        if mutated == (self.question_asked is not None):
            raise ValidationError(
                "a turn produces exactly one of: a plan mutation or a question"
            )

    def to_dict(self) -> dict:
        return {
            "plan_diff": self.plan_diff.to_dict(),
            "question_asked": self.question_asked,
            "shown_questions": list(self.shown_questions),
            "macro_action": self.macro_action.to_dict(),
            "turn_index": self.turn_index,
        }


@dataclass
class TurnTrace:
    """Diagnostics handed to EngineConfig.trace_hook after each committed
    turn; the simulation harness checks its invariants against these."""

    session_id: str
    turn_index: int
    rendered_context: str
    decision: MetaDecision
    plan_before: Plan
    plan_after: Plan
    fetched: dict[str, list[ContentItem]] = field(default_factory=dict)
    shown: dict[str, list[ContentItem]] = field(default_factory=dict)


@dataclass
class EngineConfig:
    gateway: object
    store: object
    tools: dict[str, ToolAdapter]
    policies: dict[str, PolicyConfig]
    items_per_tool: int = DEFAULT_ITEMS_PER_TOOL  # n fetched per tool
    items_shown: int = DEFAULT_ITEMS_SHOWN  # k shown per step
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    tool_timeout_s: float = DEFAULT_TOOL_TIMEOUT_S
    reject_when_busy: bool = True
    clock: Callable[[], float] = time.time
    trace_hook: Optional[Callable[[TurnTrace], None]] = None

    def __post_init__(self):
        if not self.tools:
            raise ValidationError("engine needs at least one registered tool")
        missing = {"meta-controller", "add-steps", "alter-steps", "ask-question", "ranker"} - set(
            self.policies
        )
        if missing:
            raise ValidationError(f"missing policy configs: {sorted(missing)}")
        assert_distinct_exemplars(self.policies)


def default_engine(
    gateway=None,
    store=None,
    tools: Optional[dict[str, ToolAdapter]] = None,
    prompts_dir=None,
    fixtures_dir=None,
    **knobs,
) -> "PlannerEngine":
    """Engine with stock wiring: scripted gateway (empty script) and in-memory
    store unless told otherwise."""
    config = EngineConfig(
        gateway=gateway if gateway is not None else ScriptedBackend([]),
        store=store if store is not None else InMemoryStore(),
        tools=tools if tools is not None else default_tool_registry(fixtures_dir),
        policies=load_policy_configs(prompts_dir),
        **knobs,
    )
    return PlannerEngine(config)


class _SessionRuntime:
    def __init__(self, state: SessionState):
        self.state = state
        self.lock = threading.Lock()


class PlannerEngine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self._sessions: dict[str, _SessionRuntime] = {}
        self._registry_lock = threading.Lock()
        self._listeners: list[Callable[[TurnEvent], None]] = []

    # -- session registry ---------------------------------------------------

    def add_event_listener(self, listener: Callable[[TurnEvent], None]) -> None:
        self._listeners.append(listener)

    def session_ids(self) -> list[str]:
        return self.config.store.session_ids()

    def has_session(self, session_id: str) -> bool:
        return session_id in self._sessions or self.config.store.has_session(session_id)

    def _runtime(self, session_id: str) -> _SessionRuntime:
        with self._registry_lock:
            runtime = self._sessions.get(session_id)
            if runtime is None:
                if not self.config.store.has_session(session_id):
                    raise NotFoundError(f"unknown session: {session_id}")
                runtime = _SessionRuntime(reconstruct_session(self.config.store, session_id))
                self._sessions[session_id] = runtime
            return runtime

    def get_state(self, session_id: str) -> SessionState:
        return self._runtime(session_id).state

    def get_plan(self, session_id: str, version: Optional[int] = None) -> Plan:
        runtime = self._runtime(session_id)
        if version is None:
            return runtime.state.plan
        return plan_at_version(self.config.store.read_events(session_id), version)

    # -- the turn loop ------------------------------------------------------

    def create_session(self, goal_text: str, session_id: Optional[str] = None):
        """Start a session and process turn 0 (the goal restated as the
        initial observation). Returns (session_id, first TurnResult)."""
        if not goal_text or not goal_text.strip():
            raise ValidationError("goal text must be non-empty")
        sid = session_id or f"s-{uuid.uuid4().hex[:12]}"
        with self._registry_lock:
            if sid in self._sessions or self.config.store.has_session(sid):
                raise ValidationError(f"session already exists: {sid}")
            state = SessionState(session_id=sid)
            event = TurnEvent(
                event_id=1,
                session_id=sid,
                kind="SessionCreated",
                payload={"goal": {"text": goal_text, "created_at": self.config.clock()}},
                timestamp=self.config.clock(),
            )
            self.config.store.append_events(sid, [event])
            state.apply(event)
            self._sessions[sid] = _SessionRuntime(state)
        self._emit([event])

        observation = Observation(kind="initial-goal", text=goal_text, turn_index=0)
        result = self.process_turn(sid, observation)
        return sid, result

    def process_turn(self, session_id: str, observation: Observation) -> TurnResult:
        runtime = self._runtime(session_id)
        if not runtime.lock.acquire(blocking=not self.config.reject_when_busy):
            raise BusyError(f"a turn is already in flight for session {session_id}")
        try:
            return self._process_turn_locked(runtime, observation)
        finally:
            runtime.lock.release()

    def _process_turn_locked(self, runtime: _SessionRuntime, observation: Observation) -> TurnResult:
        state = runtime.state
        if observation.turn_index != state.next_turn_index:
            raise SequencingError(
                f"expected turn {state.next_turn_index}, got {observation.turn_index}"
            )
        context = build_context(
            state.goal, state.history, state.prior_macro_actions, observation
        )
        plan_before = Plan.from_dict(state.plan.to_dict())

        try:
            decision = decide_macro_action(
                context,
                self.config.policies["meta-controller"],
                self.config.gateway,
                budget=self.config.context_budget,
            )
            decision, tail_events, question, trace_content = self._dispatch(
                decision, state, context
            )
        except tuple(_FAILURE_CODES) as exc:
            self._record_failure(state, observation, exc)
            raise

        batch = [
            self._event(state, len(tail_events) + 2, 0, "ObservationRecorded", observation.to_dict()),
            self._event(state, len(tail_events) + 2, 1, "MacroActionChosen", decision.macro_action.to_dict()),
        ]
        for offset, (kind, payload) in enumerate(tail_events, start=2):
            batch.append(self._event(state, len(tail_events) + 2, offset, kind, payload))

        self.config.store.append_events(state.session_id, batch)
        for event in batch:
            state.apply(event)
        self._emit(batch)

        result = TurnResult(
            plan_diff=diff_plans(plan_before, state.plan),
            question_asked=question,
            shown_questions=[
                {"step_id": s.step_id, "question": s.follow_up_question}
                for s in state.plan.steps
            ],
            macro_action=decision.macro_action,
            turn_index=observation.turn_index,
        )
        if self.config.trace_hook is not None:
            fetched, shown = trace_content
            self.config.trace_hook(
                TurnTrace(
                    session_id=state.session_id,
                    turn_index=observation.turn_index,
                    rendered_context=render_context(context, self.config.context_budget),
                    decision=decision,
                    plan_before=plan_before,
                    plan_after=state.plan,
                    fetched=fetched,
                    shown=shown,
                )
            )
        return result

    def _event(self, state: SessionState, batch_size: int, offset: int, kind: str, payload: dict) -> TurnEvent:
        return TurnEvent(
            event_id=state.last_event_id + 1 + offset,
            session_id=state.session_id,
            kind=kind,
            payload=payload,
            timestamp=self.config.clock(),
        )

    def _record_failure(self, state: SessionState, observation: Observation, exc: Exception) -> None:
        code = _FAILURE_CODES.get(type(exc), "policy-failure")
        event = self._event(
            state,
            1,
            0,
            "TurnFailed",
            {"observation": observation.to_dict(), "error": code, "detail": str(exc)},
        )
        self.config.store.append_events(state.session_id, [event])
        state.apply(event)
        state.failed_turns += 1
        self._emit([event])

    def _emit(self, events: list[TurnEvent]) -> None:
        for event in events:
            for listener in self._listeners:
                try:
                    listener(event)
                except Exception:
                    logger.exception("event listener failed")

    # -- macro-action dispatch ----------------------------------------------

    def _dispatch(self, decision: MetaDecision, state: SessionState, context):
        """Execute the macro-action. On an unknown alter target, re-ask the
        meta-controller once with the error appended to the context; a second
        unknown target fails the turn."""
        retried = False
        while True:
            try:
                tail_events, question, trace_content = self._execute(decision, state, context)
                return decision, tail_events, question, trace_content
            except UnknownStepError as exc:
                if retried:
                    raise
                retried = True
                logger.info("alter target %r unknown; re-asking meta-controller", exc.target_name)
                decision = decide_macro_action(
                    context,
                    self.config.policies["meta-controller"],
                    self.config.gateway,
                    budget=self.config.context_budget,
                    engine_note=(
                        f"your previous choice failed: no plan step is named "
                        f"{exc.target_name!r}. Existing steps: "
                        f"{', '.join(s.name for s in state.plan.steps) or '(none)'}. "
                        f"Choose again."
                    ),
                )

    def _execute(self, decision: MetaDecision, state: SessionState, context):
        action = decision.macro_action.action
        arguments = decision.macro_action.arguments
        cfg = self.config

        if action == "ask-question":
            result = execute_ask_question(
                context, arguments, cfg.policies["ask-question"], cfg.gateway,
                budget=cfg.context_budget,
            )
            return [("QuestionAsked", {"question": result.question})], result.question, ({}, {})

        if action == "add-steps":
            counter = len(state.plan.steps)

            def next_step_id() -> str:
                nonlocal counter
                counter += 1
                return f"step-{counter}"

            result = execute_add_steps(
                context, arguments, cfg.policies["add-steps"], cfg.gateway,
                state.plan, next_step_id,
                budget=cfg.context_budget,
                previous_summary=state.user_model_summary,
            )
            fetched, shown = self._refresh_content(result.new_steps)
            events = [
                ("StepsAdded", {
                    "steps": [s.to_dict() for s in result.new_steps],
                    "user_model_summary": result.user_model_summary.to_dict(),
                }),
                ("ContentAttached", {
                    "step_contents": {
                        sid: [c.to_dict() for c in items] for sid, items in shown.items()
                    },
                }),
            ]
            return events, None, (fetched, shown)

        # alter-steps: sequential single-step alterations in argument order
        working = Plan.from_dict(state.plan.to_dict())
        alterations = []
        altered_steps: list[PlanStep] = []
        for target_name in arguments:
            result = execute_alter_step(
                context, working, target_name, cfg.policies["alter-steps"], cfg.gateway,
                budget=cfg.context_budget,
            )
            before = working.step_by_id(result.target_step_id)
            alterations.append({"before": before.to_dict(), "after": result.altered_step.to_dict()})
            working = Plan(
                steps=[
                    result.altered_step if s.step_id == result.target_step_id else s
                    for s in working.steps
                ],
                version=working.version,
            )
            altered_steps = [s for s in altered_steps if s.step_id != result.target_step_id]
            altered_steps.append(result.altered_step)

        fetched, shown = self._refresh_content(altered_steps)
        events = [
            ("StepAltered", {"alterations": alterations}),
            ("ContentAttached", {
                "step_contents": {
                    sid: [c.to_dict() for c in items] for sid, items in shown.items()
                },
            }),
        ]
        return events, None, (fetched, shown)

    def _refresh_content(self, steps: list[PlanStep]):
        """Retrieve-then-rank for each created or altered step. Tool failures
        degrade to empty content and never fail the turn."""
        fetched: dict[str, list[ContentItem]] = {}
        shown: dict[str, list[ContentItem]] = {}
        for step in steps:
            try:
                top, all_fetched = content_for_step(
                    step,
                    self.config.tools,
                    self.config.policies["ranker"],
                    self.config.gateway,
                    n=self.config.items_per_tool,
                    k=self.config.items_shown,
                    timeout_s=self.config.tool_timeout_s,
                )
            except Exception:
                logger.exception("content refresh failed for step %s", step.step_id)
                top, all_fetched = [], []
            fetched[step.step_id] = all_fetched
            shown[step.step_id] = top
        return fetched, shown

"""Scripted-persona simulator for batch evaluation.

Personas reply to the engine like a user would: each response rule triggers on
a substring of an asked question (falling back to a turn index) and supplies
the next observation. The harness drives sessions purely through the engine's
public turn API, collects per-turn traces, and checks the engine's behavioral
invariants: ask-question turns must not touch the plan, alterations must stay
local to their targets, shown content must be a subset of fetched content, and
earlier feedback must keep appearing in later contexts.
"""

from __future__ import annotations

import csv
import json
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

from .domain import Observation, canonical_json, normalize_step_name
from .engine import EngineConfig, PlannerEngine, TurnTrace
from .errors import PlanloopError, ValidationError
from .gateway import ScriptEntry


@dataclass
class ResponseRule:
    reply_text: str
    kind: str = "free-form-feedback"
    question_contains: Optional[str] = None
    turn: Optional[int] = None
    answer_step: Optional[str] = None  # step name whose follow-up this answers

    def __post_init__(self):
        if not self.reply_text or not self.reply_text.strip():
            raise ValidationError("persona replies must be non-empty")

    def to_dict(self) -> dict:
        return {
            "reply_text": self.reply_text,
            "kind": self.kind,
            "question_contains": self.question_contains,
            "turn": self.turn,
            "answer_step": self.answer_step,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ResponseRule":
        return cls(
            reply_text=data["reply_text"],
            kind=data.get("kind", "free-form-feedback"),
            question_contains=data.get("question_contains"),
            turn=data.get("turn"),
            answer_step=data.get("answer_step"),
        )


@dataclass
class Persona:
    name: str
    goal_text: str
    response_rules: list[ResponseRule] = field(default_factory=list)
    max_turns: int = 6

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValidationError("persona max_turns must be >= 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "goal_text": self.goal_text,
            "response_rules": [r.to_dict() for r in self.response_rules],
            "max_turns": self.max_turns,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Persona":
        return cls(
            name=data["name"],
            goal_text=data["goal_text"],
            response_rules=[ResponseRule.from_dict(r) for r in data.get("response_rules", [])],
            max_turns=data.get("max_turns", 6),
        )


def load_persona(path: Union[str, Path]) -> Persona:
    return Persona.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TurnRecord:
    turn_index: int
    action: Optional[str]
    failed: bool
    plan_size: int
    question_asked: Optional[str]
    violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "action": self.action,
            "failed": self.failed,
            "plan_size": self.plan_size,
            "question_asked": self.question_asked,
            "violations": list(self.violations),
        }


@dataclass
class EpisodeReport:
    persona: str
    goal: str
    turns: list[TurnRecord] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def actions(self) -> list[Optional[str]]:
        return [t.action for t in self.turns]

    @property
    def plan_sizes(self) -> list[int]:
        return [t.plan_size for t in self.turns]

    @property
    def question_count(self) -> int:
        return sum(1 for t in self.turns if t.question_asked is not None)

    @property
    def violations(self) -> list[str]:
        out = []
        for t in self.turns:
            out.extend(f"turn {t.turn_index}: {v}" for v in t.violations)
        return out

    @property
    def failed_turns(self) -> int:
        return sum(1 for t in self.turns if t.failed)

    def to_dict(self) -> dict:
        return {
            "persona": self.persona,
            "goal": self.goal,
            "turns": [t.to_dict() for t in self.turns],
            "actions": self.actions,
            "plan_sizes": self.plan_sizes,
            "question_count": self.question_count,
            "failed_turns": self.failed_turns,
            "violations": self.violations,
            "wall_time_s": self.wall_time_s,
        }


def run_episode(persona: Persona, engine_config: EngineConfig) -> EpisodeReport:
    """One full persona episode against a fresh engine built from the config.

    The harness is black-box: it touches the engine only through
    create_session/process_turn and reads back traces for invariant checks.
    """
    traces: list[TurnTrace] = []
    outer_hook = engine_config.trace_hook

    def hook(trace: TurnTrace) -> None:
        traces.append(trace)
        if outer_hook is not None:
            outer_hook(trace)

    engine = PlannerEngine(replace(engine_config, trace_hook=hook))
    report = EpisodeReport(persona=persona.name, goal=persona.goal_text)
    started = time.monotonic()
    seen_feedback: list[str] = []

    def record(result, observation, failed_error=None):
        if failed_error is not None:
            report.turns.append(
                TurnRecord(
                    turn_index=observation.turn_index,
                    action=None,
                    failed=True,
                    plan_size=len(engine.get_plan(sid).steps) if sid else 0,
                    question_asked=None,
                    violations=[],
                )
            )
            return
        trace = traces[-1]
        violations = check_turn_invariants(trace, result, seen_feedback)
        seen_feedback.append(observation.text)
        report.turns.append(
            TurnRecord(
                turn_index=result.turn_index,
                action=result.macro_action.action,
                failed=False,
                plan_size=len(trace.plan_after.steps),
                question_asked=result.question_asked,
                violations=violations,
            )
        )

    sid = None
    goal_obs = Observation(kind="initial-goal", text=persona.goal_text, turn_index=0)
    try:
        sid, result = engine.create_session(persona.goal_text)
        record(result, goal_obs)
    except PlanloopError:
        report.turns.append(TurnRecord(0, None, True, 0, None))
        report.wall_time_s = time.monotonic() - started
        return report

    rules = list(persona.response_rules)
    last_result = result
    while len(report.turns) < persona.max_turns and rules:
        turn_index = engine.get_state(sid).next_turn_index
        rule_index = _match_rule(rules, last_result, turn_index)
        if rule_index is None:
            break
        rule = rules.pop(rule_index)
        observation = _observation_for(rule, engine, sid, last_result, turn_index)
        try:
            last_result = engine.process_turn(sid, observation)
            record(last_result, observation)
        except PlanloopError as exc:
            record(None, observation, failed_error=exc)

    report.wall_time_s = time.monotonic() - started
    return report


def _match_rule(rules: list[ResponseRule], last_result, turn_index: int) -> Optional[int]:
    """First unused rule whose trigger matches: question substring first,
    then turn index, then unconditioned rules."""
    asked: list[str] = []
    if last_result is not None:
        if last_result.question_asked:
            asked.append(last_result.question_asked)
        asked.extend(q["question"] for q in last_result.shown_questions)
    for i, rule in enumerate(rules):
        if rule.question_contains is not None:
            if any(rule.question_contains in q for q in asked):
                return i
            continue
        if rule.turn is not None:
            if rule.turn == turn_index:
                return i
            continue
        return i
    return None


def _observation_for(rule: ResponseRule, engine, sid, last_result, turn_index: int) -> Observation:
    answered = None
    kind = rule.kind
    if kind == "question-answer":
        plan = engine.get_plan(sid)
        step = None
        if rule.answer_step is not None:
            try:
                step = plan.resolve_step(rule.answer_step)
            except ValidationError:
                step = None
        elif rule.question_contains is not None:
            for q in last_result.shown_questions if last_result else []:
                if rule.question_contains in q["question"]:
                    step = plan.step_by_id(q["step_id"])
                    break
        if step is not None:
            answered = {"step_id": step.step_id, "question": step.follow_up_question}
        else:
            kind = "free-form-feedback"  # unresolvable reference degrades gracefully
    return Observation(
        kind=kind, text=rule.reply_text, turn_index=turn_index, answered_question=answered
    )


def check_turn_invariants(trace: TurnTrace, result, earlier_feedback: list[str]) -> list[str]:
    """Behavioral invariants checked on every successful turn."""
    violations: list[str] = []
    action = trace.decision.macro_action.action

    before = canonical_json(trace.plan_before.to_dict())
    after = canonical_json(trace.plan_after.to_dict())
    if action == "ask-question" and before != after:
        violations.append("ask-question turn changed the plan")
    if action != "ask-question" and before == after:
        violations.append(f"{action} turn left the plan unchanged")

    if action == "alter-steps":
        altered_ids = {a.step_id for _, a in result.plan_diff.altered_steps}
        allowed = set()
        for arg in trace.decision.macro_action.arguments:
            try:
                allowed.add(normalize_step_name(arg))
            except ValidationError:
                pass
        before_by_id = {s.step_id: s for s in trace.plan_before.steps}
        for before_step, _after_step in result.plan_diff.altered_steps:
            if before_step.normalized_name not in allowed:
                violations.append(
                    f"altered step {before_step.name!r} was not named in the arguments"
                )
        for step in trace.plan_after.steps:
            if step.step_id in altered_ids:
                continue
            original = before_by_id.get(step.step_id)
            if original is None or canonical_json(original.to_dict()) != canonical_json(step.to_dict()):
                violations.append(f"non-targeted step {step.step_id} changed")

    for step_id, shown in trace.shown.items():
        fetched_locators = {c.locator for c in trace.fetched.get(step_id, [])}
        shown_locators = [c.locator for c in shown]
        if not set(shown_locators) <= fetched_locators:
            violations.append(f"step {step_id}: shown items not a subset of fetched")
        if len(set(shown_locators)) != len(shown_locators):
            violations.append(f"step {step_id}: duplicate locators shown")
        ranks = sorted(c.final_rank for c in shown)
        if ranks != list(range(1, len(shown) + 1)):
            violations.append(f"step {step_id}: final ranks not a bijection onto 1..{len(shown)}")

    plan_step_ids = {s.step_id for s in trace.plan_after.steps}
    question_ids = {q["step_id"] for q in result.shown_questions}
    if question_ids != plan_step_ids:
        violations.append("shown questions do not cover every plan step")

    if "earlier exchanges omitted" not in trace.rendered_context:
        for text in earlier_feedback:
            if text not in trace.rendered_context:
                violations.append(f"earlier feedback missing from context: {text[:40]!r}")

    return violations


def write_reports(reports: list[EpisodeReport], out_dir: Union[str, Path]) -> dict:
    """Write one JSON per episode, a combined sweep summary, and a flat CSV of
    per-turn rows for external plotting. Returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for report in reports:
        (out / f"{report.persona}.json").write_text(
            json.dumps(report.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8"
        )

    summary = {
        "episodes": len(reports),
        "turns": sum(len(r.turns) for r in reports),
        "failed_turns": sum(r.failed_turns for r in reports),
        "violations": sum(len(r.violations) for r in reports),
        "wall_time_s": round(sum(r.wall_time_s for r in reports), 3),
    }
    (out / "sweep.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

    with (out / "turns.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["persona", "turn_index", "action", "failed", "plan_size", "question_asked", "violations"])
        for report in reports:
            for turn in report.turns:
                writer.writerow(
                    [
                        report.persona,
                        turn.turn_index,
                        turn.action or "",
                        int(turn.failed),
                        turn.plan_size,
                        turn.question_asked or "",
                        ";".join(turn.violations),
                    ]
                )
    return summary


# -- synthetic episodes -------------------------------------------------------


def synthesize_episode(
    rng: random.Random, name: str, turns: int = 4
) -> tuple[Persona, list[ScriptEntry]]:
    """A random but self-consistent persona plus the gateway script that
    drives it: the generator tracks the plan it expects the engine to build so
    alter targets always exist. Seeded rng makes sweeps reproducible."""
    goal = f"{name} wants to get going on project {rng.randrange(1000)}"
    entries: list[ScriptEntry] = []
    rules: list[ResponseRule] = []
    plan_names: list[str] = []
    step_serial = 0

    for turn in range(turns):
        user_text = goal if turn == 0 else f"{name} reply {turn}: more detail {rng.randrange(1000)}"
        if turn > 0:
            kind = "free-form-feedback"
            answer_step = None
            if plan_names and rng.random() < 0.3:
                kind = "question-answer"
                answer_step = rng.choice(plan_names)
            rules.append(
                ResponseRule(reply_text=user_text, kind=kind, turn=turn, answer_step=answer_step)
            )

        choices = ["add-steps", "ask-question"]
        if plan_names:
            choices.append("alter-steps")
        action = rng.choice(choices)

        if action == "add-steps":
            batch = []
            for _ in range(rng.randint(1, 3)):
                step_serial += 1
                batch.append(f"{name} step {step_serial}")
            entries.append(
                ScriptEntry(
                    policy_id="meta-controller",
                    match=user_text,
                    response=json.dumps(
                        {"thought": f"turn {turn}", "action": "add-steps", "arguments": batch}
                    ),
                    consume_once=True,
                )
            )
            entries.append(
                ScriptEntry(
                    policy_id="add-steps",
                    match=user_text,
                    response=json.dumps(
                        {
                            "thought": f"turn {turn}",
                            "user_model_summary": f"summary after turn {turn}",
                            "steps": [
                                {
                                    "name": n,
                                    "description": f"Description of {n}.",
                                    "follow_up_question": f"More about {n}?",
                                    "search_keywords": [n.lower()],
                                }
                                for n in batch
                            ],
                        }
                    ),
                    consume_once=True,
                )
            )
            plan_names.extend(batch)
        elif action == "alter-steps":
            target = rng.choice(plan_names)
            entries.append(
                ScriptEntry(
                    policy_id="meta-controller",
                    match=user_text,
                    response=json.dumps(
                        {"thought": f"turn {turn}", "action": "alter-steps", "arguments": [target]}
                    ),
                    consume_once=True,
                )
            )
            entries.append(
                ScriptEntry(
                    policy_id="alter-steps",
                    match=user_text,
                    response=json.dumps(
                        {
                            "thought": f"turn {turn}",
                            "step": {
                                "name": target,
                                "description": f"Revised at turn {turn} ({rng.randrange(1000)}).",
                                "follow_up_question": f"Does the turn {turn} revision help?",
                                "search_keywords": [f"{target.lower()} revised"],
                            },
                        }
                    ),
                    consume_once=True,
                )
            )
        else:
            entries.append(
                ScriptEntry(
                    policy_id="meta-controller",
                    match=user_text,
                    response=json.dumps(
                        {"thought": f"turn {turn}", "action": "ask-question", "arguments": ["clarify"]}
                    ),
                    consume_once=True,
                )
            )
            entries.append(
                ScriptEntry(
                    policy_id="ask-question",
                    match=user_text,
                    response=json.dumps(
                        {"thought": f"turn {turn}", "question": f"Clarifying question {turn}?"}
                    ),
                    consume_once=True,
                )
            )

    persona = Persona(name=name, goal_text=goal, response_rules=rules, max_turns=turns)
    return persona, entries

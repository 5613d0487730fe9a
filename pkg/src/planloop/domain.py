"""Validated value types for the planning engine, plus plan diff utilities.

Every type serializes to a JSON object with snake_case keys; that JSON is both
the wire format of the HTTP service and the storage format of the event log,
so `from_dict(to_dict(x))` must reproduce `x` exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .errors import ValidationError

OBSERVATION_KINDS = frozenset({"initial-goal", "question-answer", "free-form-feedback"})
ACTIONS = frozenset({"add-steps", "alter-steps", "ask-question"})
POLICY_IDS = frozenset({"meta-controller", "add-steps", "alter-steps", "ask-question", "ranker"})

MAX_STEP_NAME_CHARS = 120
MAX_SEARCH_KEYWORDS = 5

_TRAILING_PUNCTUATION = ".,;:!?"


def canonical_json(value: Any) -> str:
    """Canonical rendering: sorted keys, no whitespace, raw unicode."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def normalize_step_name(name: str) -> str:
    """Canonical form of a step name: lowercase, collapsed whitespace, no
    trailing punctuation. Policies refer to steps by name; the engine resolves
    those references through this normalization, so it must be idempotent.
    """
    collapsed = " ".join(name.split())
    stripped = collapsed.lower().rstrip(_TRAILING_PUNCTUATION).rstrip()
    if not stripped:
        raise ValidationError(f"step name is empty after normalization: {name!r}")
    return stripped


def _require_str(value: Any, name: str, allow_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{name} must be a string, got {type(value).__name__}")
    if not allow_empty and not value.strip():
        raise ValidationError(f"{name} must be a non-empty string")
    return value


@dataclass
class Goal:
    text: str
    created_at: float = 0.0

    def __post_init__(self):
        _require_str(self.text, "goal.text")

    def to_dict(self) -> dict:
        return {"text": self.text, "created_at": self.created_at}

    @classmethod
    def from_dict(cls, data: dict) -> "Goal":
        return cls(text=data["text"], created_at=data["created_at"])


@dataclass
class Observation:
    """One user utterance: the initial goal, an answer to a per-step
    follow-up question, or free-form feedback."""

    kind: str
    text: str
    turn_index: int
    answered_question: Optional[dict] = None  # {"step_id": ..., "question": ...}

    def __post_init__(self):
        if self.kind not in OBSERVATION_KINDS:
            raise ValidationError(f"unknown observation kind: {self.kind!r}")
        _require_str(self.text, "observation.text")
        if not isinstance(self.turn_index, int) or self.turn_index < 0:
            raise ValidationError("observation.turn_index must be a non-negative int")
        has_ref = self.answered_question is not None
        if has_ref != (self.kind == "question-answer"):
            raise ValidationError(
                "answered_question must be present exactly when kind is question-answer"
            )
        if has_ref:
            _require_str(self.answered_question.get("step_id"), "answered_question.step_id")
            _require_str(self.answered_question.get("question"), "answered_question.question")

    def to_dict(self) -> dict:
        ref = None
        if self.answered_question is not None:
            ref = {
                "step_id": self.answered_question["step_id"],
                "question": self.answered_question["question"],
            }
        return {
            "kind": self.kind,
            "text": self.text,
            "turn_index": self.turn_index,
            "answered_question": ref,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        return cls(
            kind=data["kind"],
            text=data["text"],
            turn_index=data["turn_index"],
            answered_question=data.get("answered_question"),
        )


@dataclass
class ContentItem:
    title: str
    locator: str
    source_tool: str
    fetch_rank: int
    snippet: Optional[str] = None
    final_rank: Optional[int] = None

    def __post_init__(self):
        _require_str(self.title, "content_item.title")
        _require_str(self.locator, "content_item.locator")
        _require_str(self.source_tool, "content_item.source_tool")
        if self.final_rank is not None and self.final_rank < 1:
            raise ValidationError("content_item.final_rank must be >= 1 when present")

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "locator": self.locator,
            "snippet": self.snippet,
            "source_tool": self.source_tool,
            "fetch_rank": self.fetch_rank,
            "final_rank": self.final_rank,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContentItem":
        return cls(
            title=data["title"],
            locator=data["locator"],
            snippet=data.get("snippet"),
            source_tool=data["source_tool"],
            fetch_rank=data["fetch_rank"],
            final_rank=data.get("final_rank"),
        )


@dataclass
class Provenance:
    created_turn: int
    created_by: str
    last_altered_turn: Optional[int] = None

    def __post_init__(self):
        if self.created_by not in ("add-steps", "alter-steps"):
            raise ValidationError(f"invalid provenance.created_by: {self.created_by!r}")

    def to_dict(self) -> dict:
        return {
            "created_turn": self.created_turn,
            "last_altered_turn": self.last_altered_turn,
            "created_by": self.created_by,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Provenance":
        return cls(
            created_turn=data["created_turn"],
            created_by=data["created_by"],
            last_altered_turn=data.get("last_altered_turn"),
        )


@dataclass
class PlanStep:
    """Schema-constrained unit of a plan. The follow-up question is offered to
    the user as one way to continue; search keywords drive content fetching."""

    step_id: str
    name: str
    description: str
    follow_up_question: str
    search_keywords: list[str]
    content_items: list[ContentItem] = field(default_factory=list)
    provenance: Provenance = field(default_factory=lambda: Provenance(0, "add-steps"))

    def __post_init__(self):
        _require_str(self.step_id, "step.step_id")
        _require_str(self.name, "step.name")
        if len(self.name) > MAX_STEP_NAME_CHARS:
            raise ValidationError(f"step.name exceeds {MAX_STEP_NAME_CHARS} chars")
        normalize_step_name(self.name)  # must not normalize to empty
        _require_str(self.description, "step.description")
        _require_str(self.follow_up_question, "step.follow_up_question")
        if not self.follow_up_question.rstrip().endswith("?"):
            raise ValidationError("step.follow_up_question must end with '?'")
        if not (1 <= len(self.search_keywords) <= MAX_SEARCH_KEYWORDS):
            raise ValidationError(
                f"step.search_keywords must hold 1..{MAX_SEARCH_KEYWORDS} entries"
            )
        for kw in self.search_keywords:
            _require_str(kw, "step.search_keywords entry")

    @property
    def normalized_name(self) -> str:
        return normalize_step_name(self.name)

    def to_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "name": self.name,
            "description": self.description,
            "follow_up_question": self.follow_up_question,
            "search_keywords": list(self.search_keywords),
            "content_items": [c.to_dict() for c in self.content_items],
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanStep":
        return cls(
            step_id=data["step_id"],
            name=data["name"],
            description=data["description"],
            follow_up_question=data["follow_up_question"],
            search_keywords=list(data["search_keywords"]),
            content_items=[ContentItem.from_dict(c) for c in data.get("content_items", [])],
            provenance=Provenance.from_dict(data["provenance"]),
        )


@dataclass
class Plan:
    steps: list[PlanStep] = field(default_factory=list)
    version: int = 0

    def __post_init__(self):
        if self.version < 0:
            raise ValidationError("plan.version must be >= 0")
        seen: dict[str, str] = {}
        for step in self.steps:
            norm = step.normalized_name
            if norm in seen:
                raise ValidationError(
                    f"duplicate step name after normalization: {norm!r} "
                    f"({seen[norm]} vs {step.step_id})"
                )
            seen[norm] = step.step_id

    def step_by_id(self, step_id: str) -> Optional[PlanStep]:
        for step in self.steps:
            if step.step_id == step_id:
                return step
        return None

    def resolve_step(self, name: str) -> Optional[PlanStep]:
        """Resolve a policy-provided step name via normalization."""
        norm = normalize_step_name(name)
        for step in self.steps:
            if step.normalized_name == norm:
                return step
        return None

    def normalized_names(self) -> set[str]:
        return {s.normalized_name for s in self.steps}

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "version": self.version}

    @classmethod
    def from_dict(cls, data: dict) -> "Plan":
        return cls(
            steps=[PlanStep.from_dict(s) for s in data["steps"]],
            version=data["version"],
        )


@dataclass
class MacroAction:
    """Structured meta-controller output: a thought, one discrete action, and
    natural-language arguments (step names to add or alter, question context).
    `raw` keeps the verbatim policy text for audit."""

    thought: str
    action: str
    arguments: list[str]
    raw: str = ""

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValidationError(f"unknown macro-action: {self.action!r}")
        for arg in self.arguments:
            _require_str(arg, "macro_action.arguments entry")
        if self.action == "alter-steps" and not self.arguments:
            raise ValidationError("alter-steps requires at least one argument")

    def to_dict(self) -> dict:
        return {
            "thought": self.thought,
            "action": self.action,
            "arguments": list(self.arguments),
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MacroAction":
        return cls(
            thought=data["thought"],
            action=data["action"],
            arguments=list(data["arguments"]),
            raw=data.get("raw", ""),
        )


@dataclass
class Context:
    """Everything a policy sees, in this serialization order: the current
    observation, the interaction history, prior macro-actions, and the goal."""

    current_observation: Observation
    history: list[tuple[Observation, str]] = field(default_factory=list)
    prior_macro_actions: list[MacroAction] = field(default_factory=list)
    goal: Goal = field(default_factory=lambda: Goal(text="(unset)"))

    def to_dict(self) -> dict:
        return {
            "current_observation": self.current_observation.to_dict(),
            "history": [
                {"observation": obs.to_dict(), "system_response": resp}
                for obs, resp in self.history
            ],
            "prior_macro_actions": [m.to_dict() for m in self.prior_macro_actions],
            "goal": self.goal.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Context":
        return cls(
            current_observation=Observation.from_dict(data["current_observation"]),
            history=[
                (Observation.from_dict(h["observation"]), h["system_response"])
                for h in data["history"]
            ],
            prior_macro_actions=[MacroAction.from_dict(m) for m in data["prior_macro_actions"]],
            goal=Goal.from_dict(data["goal"]),
        )


@dataclass
class UserModelSummary:
    text: str
    updated_turn: int

    def to_dict(self) -> dict:
        return {"text": self.text, "updated_turn": self.updated_turn}

    @classmethod
    def from_dict(cls, data: dict) -> "UserModelSummary":
        return cls(text=data["text"], updated_turn=data["updated_turn"])


@dataclass
class PolicyConfig:
    policy_id: str
    prompt_template: str
    exemplars: list[str] = field(default_factory=list)
    model_id: str = "default"
    max_retries: int = 2
    temperature: float = 0.2

    def __post_init__(self):
        if self.policy_id not in POLICY_IDS:
            raise ValidationError(f"unknown policy id: {self.policy_id!r}")
        if self.max_retries < 0:
            raise ValidationError("policy.max_retries must be >= 0")
        _require_str(self.prompt_template, "policy.prompt_template")

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "prompt_template": self.prompt_template,
            "exemplars": list(self.exemplars),
            "model_id": self.model_id,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        return cls(
            policy_id=data["policy_id"],
            prompt_template=data["prompt_template"],
            exemplars=list(data["exemplars"]),
            model_id=data["model_id"],
            max_retries=data["max_retries"],
            temperature=data["temperature"],
        )


@dataclass
class PlanDiff:
    added_steps: list[PlanStep] = field(default_factory=list)
    altered_steps: list[tuple[PlanStep, PlanStep]] = field(default_factory=list)
    question_asked: Optional[str] = None

    def is_empty(self) -> bool:
        return not self.added_steps and not self.altered_steps and self.question_asked is None

    def to_dict(self) -> dict:
        return {
            "added_steps": [s.to_dict() for s in self.added_steps],
            "altered_steps": [
                {"before": b.to_dict(), "after": a.to_dict()} for b, a in self.altered_steps
            ],
            "question_asked": self.question_asked,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanDiff":
        return cls(
            added_steps=[PlanStep.from_dict(s) for s in data["added_steps"]],
            altered_steps=[
                (PlanStep.from_dict(p["before"]), PlanStep.from_dict(p["after"]))
                for p in data["altered_steps"]
            ],
            question_asked=data.get("question_asked"),
        )


def diff_plans(old: Plan, new: Plan) -> PlanDiff:
    """Steps in `new` missing from `old` (by step id) are additions; steps
    present in both with differing serialized content are alterations."""
    if old.version > new.version:
        raise ValidationError("diff_plans requires old.version <= new.version")
    old_by_id = {s.step_id: s for s in old.steps}
    added: list[PlanStep] = []
    altered: list[tuple[PlanStep, PlanStep]] = []
    for step in new.steps:
        before = old_by_id.get(step.step_id)
        if before is None:
            added.append(step)
        elif canonical_json(before.to_dict()) != canonical_json(step.to_dict()):
            altered.append((before, step))
    return PlanDiff(added_steps=added, altered_steps=altered)


def apply_plan_diff(plan: Plan, diff: PlanDiff) -> Plan:
    """Inverse of diff_plans for a single mutation: replaces altered steps in
    place and appends additions; bumps the version once if anything changed."""
    after_by_id = {a.step_id: a for _, a in diff.altered_steps}
    steps = [after_by_id.get(s.step_id, s) for s in plan.steps]
    steps.extend(diff.added_steps)
    changed = bool(diff.added_steps or diff.altered_steps)
    return Plan(steps=steps, version=plan.version + (1 if changed else 0))


def copy_step(step: PlanStep, **changes: Any) -> PlanStep:
    """Value-style update helper (dataclasses.replace with list copies)."""
    base = replace(
        step,
        search_keywords=list(step.search_keywords),
        content_items=list(step.content_items),
        provenance=replace(step.provenance),
    )
    return replace(base, **changes)


def turn_system_response(action: str, step_names: list[str], question: Optional[str]) -> str:
    """The system side of a history pair. Reconstruction from the event log
    recomputes these strings, so they must be a pure function of the turn."""
    if action == "ask-question":
        return question or ""
    if action == "add-steps":
        return f"Added steps: {', '.join(step_names)}."
    return f"Updated steps: {', '.join(step_names)}."

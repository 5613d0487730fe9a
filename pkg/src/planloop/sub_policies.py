"""The three macro-action executors and the plan-step parser.

Each executor is a distinctly-prompted policy producing a schema-validated
result: add-steps emits 1..5 new steps plus a refreshed user summary,
alter-steps rewrites exactly one existing step keeping its id, ask-question
emits one question and leaves the plan alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional

from .domain import (
    MAX_SEARCH_KEYWORDS,
    MAX_STEP_NAME_CHARS,
    Context,
    Plan,
    PlanStep,
    Provenance,
    UserModelSummary,
    canonical_json,
    normalize_step_name,
)
from .errors import (
    EmptyResultError,
    ExecutionFailureError,
    OutputParseError,
    UnknownStepError,
    ValidationError,
)
from .meta_controller import DEFAULT_CONTEXT_BUDGET, render_context_blocks
from .prompting import render_template
from .structured import complete_structured, extract_json_object, string_list

logger = logging.getLogger(__name__)

MAX_STEPS_PER_BATCH = 5

ADD_STEPS_SCHEMA_HINT = (
    '{"thought": "...", "user_model_summary": "...", "steps": [{"name": "...", '
    '"description": "...", "follow_up_question": "...?", "search_keywords": ["..."]}]}'
)
ALTER_STEP_SCHEMA_HINT = (
    '{"thought": "...", "step": {"name": "...", "description": "...", '
    '"follow_up_question": "...?", "search_keywords": ["..."]}}'
)
ASK_QUESTION_SCHEMA_HINT = '{"thought": "...", "question": "...?"}'

_FIELD_ALIASES = {
    "name": ("name",),
    "description": ("description",),
    "follow_up_question": ("follow_up_question", "followUpQuestion", "follow_up"),
    "search_keywords": ("search_keywords", "searchKeywords", "keywords"),
}


@dataclass
class AddStepsResult:
    new_steps: list[PlanStep]
    thought: str
    user_model_summary: UserModelSummary


@dataclass
class AlterStepResult:
    target_step_id: str
    altered_step: PlanStep
    thought: str


@dataclass
class QuestionResult:
    question: str
    thought: str


def parse_plan_step(raw) -> dict:
    """Validate one step fragment into its four schema fields.

    Accepts a decoded object or a JSON string. Keywords given as one
    comma-joined string are split; a missing question mark is appended.
    Missing fields raise an error naming the field; shape errors carry the
    offending fragment.
    """
    if isinstance(raw, str):
        fragment = extract_json_object(raw)
    elif isinstance(raw, dict):
        fragment = raw
    else:
        raise OutputParseError(
            f"step fragment must be an object, got {type(raw).__name__}", raw=repr(raw)
        )

    fields = {}
    for field_name, aliases in _FIELD_ALIASES.items():
        value = None
        for alias in aliases:
            if alias in fragment and fragment[alias] is not None:
                value = fragment[alias]
                break
        if value is None:
            raise OutputParseError(f"missing: {field_name}", raw=canonical_json(fragment))
        fields[field_name] = value

    name = fields["name"]
    if not isinstance(name, str) or not name.strip():
        raise OutputParseError("name must be a non-empty string", raw=canonical_json(fragment))
    name = " ".join(name.split())[:MAX_STEP_NAME_CHARS].strip()

    description = fields["description"]
    if not isinstance(description, str) or not description.strip():
        raise OutputParseError(
            "description must be a non-empty string", raw=canonical_json(fragment)
        )

    question = fields["follow_up_question"]
    if not isinstance(question, str) or not question.strip():
        raise OutputParseError(
            "follow_up_question must be a non-empty string", raw=canonical_json(fragment)
        )
    question = question.strip()
    if not question.endswith("?"):
        question += "?"

    keywords_value = fields["search_keywords"]
    if isinstance(keywords_value, str):
        keywords = [k.strip() for k in keywords_value.split(",") if k.strip()]
    else:
        keywords = string_list(keywords_value, "search_keywords")
    if not keywords:
        raise OutputParseError(
            "search_keywords must hold at least one keyword", raw=canonical_json(fragment)
        )
    keywords = keywords[:MAX_SEARCH_KEYWORDS]

    return {
        "name": name,
        "description": description.strip(),
        "follow_up_question": question,
        "search_keywords": keywords,
    }


def _policy_prompt(context: Context, config, budget: int, extra: dict) -> str:
    blocks = render_context_blocks(context, budget)
    return render_template(
        config.prompt_template,
        {**blocks, "exemplars": "\n---\n".join(config.exemplars), **extra},
    )


def execute_add_steps(
    context: Context,
    arguments: list[str],
    config,
    gateway,
    plan: Plan,
    step_id_factory: Callable[[], str],
    budget: int = DEFAULT_CONTEXT_BUDGET,
    previous_summary: Optional[UserModelSummary] = None,
) -> AddStepsResult:
    """Generate 1..5 new validated steps. Steps whose normalized name collides
    with an existing step (or an earlier step in the same batch) are dropped
    from the batch, not errors; a fully dropped batch is an empty-result
    error."""
    turn_index = context.current_observation.turn_index
    prompt = _policy_prompt(
        context,
        config,
        budget,
        {
            "arguments": ", ".join(arguments) if arguments else "(none given)",
            "existing_steps": ", ".join(s.name for s in plan.steps) or "(none)",
            "user_model_summary": previous_summary.text if previous_summary else "(none yet)",
        },
    )

    def parse(raw: str) -> dict:
        data = extract_json_object(raw)
        step_fragments = data.get("steps")
        if not isinstance(step_fragments, list) or not step_fragments:
            raise OutputParseError("'steps' must be a non-empty list", raw=raw)
        parsed = [parse_plan_step(f) for f in step_fragments[:MAX_STEPS_PER_BATCH]]
        return {
            "steps": parsed,
            "thought": str(data.get("thought", "")),
            "summary": str(data.get("user_model_summary", "")),
        }

    result = complete_structured(
        gateway,
        config.policy_id,
        prompt,
        temperature=config.temperature,
        max_retries=config.max_retries,
        parse=parse,
        schema_hint=ADD_STEPS_SCHEMA_HINT,
    )
    if not result.ok:
        raise ExecutionFailureError(
            f"add-steps produced no valid output after {result.attempts} attempts: {result.error}",
            raw_outputs=result.raw_outputs,
        )

    taken_names = plan.normalized_names()
    new_steps: list[PlanStep] = []
    for fields in result.value["steps"]:
        norm = normalize_step_name(fields["name"])
        if norm in taken_names:
            logger.info("dropping generated step %r: name collision", fields["name"])
            continue
        taken_names.add(norm)
        new_steps.append(
            PlanStep(
                step_id=step_id_factory(),
                provenance=Provenance(created_turn=turn_index, created_by="add-steps"),
                **fields,
            )
        )
    if not new_steps:
        raise EmptyResultError("every generated step collided with an existing step name")

    return AddStepsResult(
        new_steps=new_steps,
        thought=result.value["thought"],
        user_model_summary=UserModelSummary(
            text=result.value["summary"], updated_turn=turn_index
        ),
    )


def execute_alter_step(
    context: Context,
    plan: Plan,
    target_name: str,
    config,
    gateway,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> AlterStepResult:
    """Rewrite the step `target_name` resolves to. The revised step keeps its
    id, must differ in at least one schema field, and must not take the name
    of another existing step. All other steps are untouched by construction."""
    try:
        target = plan.resolve_step(target_name)
    except ValidationError:
        target = None
    if target is None:
        raise UnknownStepError(target_name)

    turn_index = context.current_observation.turn_index
    other_names = {
        s.normalized_name for s in plan.steps if s.step_id != target.step_id
    }
    target_fields = {
        "name": target.name,
        "description": target.description,
        "follow_up_question": target.follow_up_question,
        "search_keywords": list(target.search_keywords),
    }
    prompt = _policy_prompt(
        context,
        config,
        budget,
        {
            "target_step": json.dumps(target_fields, ensure_ascii=False),
            "plan_step_names": ", ".join(s.name for s in plan.steps),
        },
    )

    def parse(raw: str) -> dict:
        data = extract_json_object(raw)
        fragment = data.get("step")
        if fragment is None:
            raise OutputParseError("missing: step", raw=raw)
        fields = parse_plan_step(fragment)
        if all(fields[k] == target_fields[k] for k in fields):
            raise OutputParseError(
                "altered step is identical to the original; change at least one field",
                raw=raw,
            )
        if normalize_step_name(fields["name"]) in other_names:
            raise OutputParseError(
                f"revised name {fields['name']!r} collides with another step", raw=raw
            )
        return {"fields": fields, "thought": str(data.get("thought", ""))}

    result = complete_structured(
        gateway,
        config.policy_id,
        prompt,
        temperature=config.temperature,
        max_retries=config.max_retries,
        parse=parse,
        schema_hint=ALTER_STEP_SCHEMA_HINT,
    )
    if not result.ok:
        raise ExecutionFailureError(
            f"alter-steps produced no valid output after {result.attempts} attempts: "
            f"{result.error}",
            raw_outputs=result.raw_outputs,
        )

    altered = PlanStep(
        step_id=target.step_id,
        provenance=Provenance(
            created_turn=target.provenance.created_turn,
            created_by=target.provenance.created_by,
            last_altered_turn=turn_index,
        ),
        **result.value["fields"],
    )
    return AlterStepResult(
        target_step_id=target.step_id,
        altered_step=altered,
        thought=result.value["thought"],
    )


def execute_ask_question(
    context: Context,
    arguments: list[str],
    config,
    gateway,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> QuestionResult:
    """Produce the one question to ask the user. A missing trailing question
    mark is a cosmetic defect and gets appended; an empty question is not."""
    prompt = _policy_prompt(
        context,
        config,
        budget,
        {"arguments": ", ".join(arguments) if arguments else "(not specified)"},
    )

    def parse(raw: str) -> dict:
        data = extract_json_object(raw)
        question = data.get("question")
        if not isinstance(question, str) or not question.strip():
            raise OutputParseError("question must be a non-empty string", raw=raw)
        question = question.strip()
        if not question.endswith("?"):
            question += "?"
        return {"question": question, "thought": str(data.get("thought", ""))}

    result = complete_structured(
        gateway,
        config.policy_id,
        prompt,
        temperature=config.temperature,
        max_retries=config.max_retries,
        parse=parse,
        schema_hint=ASK_QUESTION_SCHEMA_HINT,
    )
    if not result.ok:
        raise ExecutionFailureError(
            f"ask-question produced no valid output after {result.attempts} attempts: "
            f"{result.error}",
            raw_outputs=result.raw_outputs,
        )
    return QuestionResult(question=result.value["question"], thought=result.value["thought"])

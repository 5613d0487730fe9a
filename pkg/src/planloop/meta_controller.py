"""Context assembly and macro-action selection.

The context a policy sees is rendered in a fixed order: current observation,
interaction history, prior macro-actions, goal. When the rendering exceeds the
character budget, whole history pairs are evicted oldest first, then prior
macro-actions oldest first; the current observation and the goal are never
evicted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .domain import ACTIONS, Context, Goal, MacroAction, Observation
from .errors import DecisionFailureError, OutputParseError, SequencingError
from .prompting import render_template
from .structured import complete_structured, extract_json_object, string_list

DEFAULT_CONTEXT_BUDGET = 24_000

META_SCHEMA_HINT = (
    '{"thought": "<reasoning>", "action": "add-steps" | "alter-steps" | "ask-question", '
    '"arguments": ["<step name or question topic>", ...]}'
)


@dataclass
class MetaDecision:
    macro_action: MacroAction
    attempts: int
    context_snapshot: Context


def build_context(
    goal: Goal,
    history: list[tuple[Observation, str]],
    prior_macro_actions: list[MacroAction],
    observation: Observation,
) -> Context:
    if observation.turn_index != len(history):
        raise SequencingError(
            f"observation turn_index {observation.turn_index} does not follow "
            f"{len(history)} recorded exchanges"
        )
    return Context(
        current_observation=observation,
        history=list(history),
        prior_macro_actions=list(prior_macro_actions),
        goal=goal,
    )


def render_context_blocks(
    context: Context,
    budget: int = DEFAULT_CONTEXT_BUDGET,
    engine_note: Optional[str] = None,
) -> dict[str, str]:
    """The four context blocks as strings, after budget eviction."""
    history = list(context.history)
    priors = list(context.prior_macro_actions)
    evicted_history = 0
    evicted_priors = 0

    def build() -> dict[str, str]:
        return {
            "observation": _observation_block(context.current_observation, engine_note),
            "history": _history_block(history, evicted_history),
            "prior_actions": _priors_block(priors, evicted_priors),
            "goal": context.goal.text,
        }

    blocks = build()
    while sum(len(b) for b in blocks.values()) > budget:
        if history:
            history.pop(0)
            evicted_history += 1
        elif priors:
            priors.pop(0)
            evicted_priors += 1
        else:
            break  # only the unevictable observation and goal remain
        blocks = build()
    return blocks


def render_context(
    context: Context,
    budget: int = DEFAULT_CONTEXT_BUDGET,
    engine_note: Optional[str] = None,
) -> str:
    blocks = render_context_blocks(context, budget, engine_note)
    return (
        f"[current message]\n{blocks['observation']}\n\n"
        f"[history]\n{blocks['history']}\n\n"
        f"[prior actions]\n{blocks['prior_actions']}\n\n"
        f"[goal]\n{blocks['goal']}"
    )


def _observation_block(observation: Observation, engine_note: Optional[str]) -> str:
    lines = [f"user ({observation.kind}): {observation.text}"]
    if observation.answered_question is not None:
        ref = observation.answered_question
        lines.append(
            f"(this answers the follow-up question {ref['question']!r} "
            f"of step {ref['step_id']})"
        )
    if engine_note:
        lines.append(f"[engine note] {engine_note}")
    return "\n".join(lines)


def _history_block(history: list[tuple[Observation, str]], evicted: int) -> str:
    if not history and not evicted:
        return "(none)"
    lines = []
    if evicted:
        lines.append(f"({evicted} earlier exchanges omitted)")
    for observation, response in history:
        lines.append(f"user: {observation.text}")
        lines.append(f"agent: {response}")
    return "\n".join(lines)


def _priors_block(priors: list[MacroAction], evicted: int) -> str:
    if not priors and not evicted:
        return "(none)"
    lines = []
    if evicted:
        lines.append(f"({evicted} earlier actions omitted)")
    for i, macro in enumerate(priors, start=1 + evicted):
        arguments = ", ".join(macro.arguments) if macro.arguments else "(none)"
        lines.append(f"{i}. {macro.action} | arguments: {arguments} | thought: {macro.thought}")
    return "\n".join(lines)


def parse_macro_action(raw: str) -> MacroAction:
    """Strict parse of the meta-controller's structured output. Unknown fields
    are ignored; the action is matched case-insensitively with hyphen,
    underscore, and space folding. Anything outside the closed action set is a
    parse error, never a fourth action."""
    data = extract_json_object(raw)
    action_value = data.get("action")
    if not isinstance(action_value, str):
        raise OutputParseError("missing or non-string 'action' field", raw=raw)
    action = "-".join(action_value.strip().lower().replace("_", " ").replace("-", " ").split())
    if action not in ACTIONS:
        raise OutputParseError(f"unknown action {action_value!r}", raw=raw)

    thought = data.get("thought", "")
    if not isinstance(thought, str):
        thought = str(thought)
    arguments = string_list(data.get("arguments", []), "arguments")
    if action == "alter-steps" and not arguments:
        raise OutputParseError("alter-steps requires at least one step name argument", raw=raw)
    return MacroAction(thought=thought, action=action, arguments=arguments, raw=raw)


def decide_macro_action(
    context: Context,
    config,
    gateway,
    budget: int = DEFAULT_CONTEXT_BUDGET,
    engine_note: Optional[str] = None,
) -> MetaDecision:
    """Select the next macro-action. Read-only over session state: the plan is
    never touched here. Raises DecisionFailureError (carrying every raw
    output) when all attempts produce unusable text."""
    blocks = render_context_blocks(context, budget, engine_note)
    prompt = render_template(
        config.prompt_template,
        {**blocks, "exemplars": "\n---\n".join(config.exemplars)},
    )
    result = complete_structured(
        gateway,
        config.policy_id,
        prompt,
        temperature=config.temperature,
        max_retries=config.max_retries,
        parse=parse_macro_action,
        schema_hint=META_SCHEMA_HINT,
    )
    if not result.ok:
        raise DecisionFailureError(
            f"no valid macro-action after {result.attempts} attempts: {result.error}",
            raw_outputs=result.raw_outputs,
        )
    return MetaDecision(
        macro_action=result.value,
        attempts=result.attempts,
        context_snapshot=context,
    )

"""Tolerant extraction of one JSON object from raw model text, plus the shared
bounded-retry loop used by every policy call."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Callable

from .errors import (
    OutputParseError,
    ReplayMissError,
    ScriptExhaustedError,
    TransportError,
)
from .gateway import CompletionRequest

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_json_object(text: str) -> dict:
    """Pull the first JSON object out of model output.

    Tries, in order: the whole text, each fenced code block, then a
    string-aware scan for the first balanced {...} span.
    """
    if not text or not text.strip():
        raise OutputParseError("empty output", raw=text)

    candidates = [text.strip()]
    candidates.extend(m.strip() for m in _FENCE_RE.findall(text))
    for candidate in candidates:
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value

    span = _first_balanced_object(text)
    if span is not None:
        try:
            value = json.loads(span)
        except json.JSONDecodeError as exc:
            raise OutputParseError(f"malformed JSON object: {exc}", raw=text) from exc
        if isinstance(value, dict):
            return value
    raise OutputParseError("no JSON object found in output", raw=text)


def _first_balanced_object(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if escaped:
            escaped = False
            continue
        if ch == "\\":
            escaped = True
            continue
        if ch == '"':
            in_string = not in_string
            continue
        if in_string:
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def string_list(value: Any, field_name: str) -> list[str]:
    """Coerce a policy-provided field into a list of non-empty strings.

    A bare string becomes a one-element list; list entries are stringified
    and blank entries dropped.
    """
    if isinstance(value, str):
        items = [value]
    elif isinstance(value, list):
        items = [v if isinstance(v, str) else json.dumps(v) for v in value]
    else:
        raise OutputParseError(f"{field_name} must be a string or list of strings")
    cleaned = [item.strip() for item in items if str(item).strip()]
    return cleaned


@dataclass
class StructuredResult:
    value: Any
    attempts: int
    raw_outputs: list[str]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def complete_structured(
    gateway,
    policy_id: str,
    prompt: str,
    *,
    temperature: float,
    max_retries: int,
    parse: Callable[[str], Any],
    schema_hint: str,
) -> StructuredResult:
    """Call the gateway and parse; on malformed output, re-prompt with the
    parse error and a restatement of the required schema, up to max_retries
    extra attempts. Gateway failures consume an attempt rather than crashing,
    so callers always get either a value or a failure carrying every raw
    output."""
    raw_outputs: list[str] = []
    attempt_prompt = prompt
    last_error = ""
    for attempt in range(max_retries + 1):
        try:
            response = gateway.complete(
                CompletionRequest(
                    policy_id=policy_id,
                    rendered_prompt=attempt_prompt,
                    temperature=temperature,
                )
            )
            raw = response.text
        except (ScriptExhaustedError, TransportError, ReplayMissError) as exc:
            raw_outputs.append(f"<gateway error: {exc}>")
            last_error = str(exc)
            continue
        raw_outputs.append(raw)
        try:
            value = parse(raw)
        except OutputParseError as exc:
            last_error = str(exc)
            attempt_prompt = (
                f"{prompt}\n\n"
                f"Your previous reply could not be used: {exc}\n"
                f"Reply again with exactly one JSON object. Required schema: {schema_hint}"
            )
            continue
        return StructuredResult(value=value, attempts=attempt + 1, raw_outputs=raw_outputs)
    return StructuredResult(
        value=None,
        attempts=max_retries + 1,
        raw_outputs=raw_outputs,
        error=last_error or "no usable output",
    )

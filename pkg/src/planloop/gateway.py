"""Provider-agnostic text completion with scripted, live, and replay backends.

The gateway never interprets response text; parsing and validation live with
the policies. The scripted backend is the deterministic oracle used by tests
and golden transcript replays.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import (
    ReplayMissError,
    ScriptExhaustedError,
    ScriptParseError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_CHARS = 8000


@dataclass
class CompletionRequest:
    policy_id: str
    rendered_prompt: str
    temperature: float = 0.2
    max_output_chars: int = DEFAULT_MAX_OUTPUT_CHARS

    def __post_init__(self):
        if not self.rendered_prompt:
            raise ValidationError("rendered_prompt must be non-empty")
        if self.max_output_chars <= 0:
            raise ValidationError("max_output_chars must be positive")


@dataclass
class CompletionResponse:
    text: str  # may be arbitrary, including malformed; parsers must cope
    backend: str
    latency_ms: float = 0.0


@dataclass
class ScriptEntry:
    policy_id: str
    match: str  # substring of the rendered prompt; "" matches anything
    response: str
    consume_once: bool = False


def request_hash(policy_id: str, rendered_prompt: str) -> str:
    """Replay key. Sampling knobs are deliberately excluded so replays are
    insensitive to temperature changes."""
    digest = hashlib.sha256()
    digest.update(policy_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(rendered_prompt.encode("utf-8"))
    return digest.hexdigest()


def load_script(source: Union[str, Path, list]) -> list[ScriptEntry]:
    """Parse a script document (JSON list of entries) into ScriptEntry objects.

    Accepts a path, a JSON string, or an already-decoded list. Dict responses
    are serialized compactly so script files can embed structured replies
    without double-escaping.
    """
    if isinstance(source, Path) or (isinstance(source, str) and os.path.exists(source)):
        raw = Path(source).read_text(encoding="utf-8")
        data = _decode_script_json(raw)
    elif isinstance(source, str):
        data = _decode_script_json(source)
    else:
        data = source
    if not isinstance(data, list):
        raise ScriptParseError("script document must be a JSON list of entries")

    entries = []
    for index, item in enumerate(data):
        if not isinstance(item, dict):
            raise ScriptParseError(f"entry {index}: expected an object, got {type(item).__name__}")
        try:
            policy_id = item["policy_id"]
            response = item["response"]
        except KeyError as exc:
            raise ScriptParseError(f"entry {index}: missing field {exc.args[0]!r}") from exc
        if not isinstance(policy_id, str) or not policy_id:
            raise ScriptParseError(f"entry {index}: policy_id must be a non-empty string")
        if isinstance(response, (dict, list)):
            response = json.dumps(response, separators=(",", ":"), ensure_ascii=False)
        elif not isinstance(response, str):
            raise ScriptParseError(f"entry {index}: response must be a string or object")
        match = item.get("match", "")
        if not isinstance(match, str):
            raise ScriptParseError(f"entry {index}: match must be a string")
        entries.append(
            ScriptEntry(
                policy_id=policy_id,
                match=match,
                response=response,
                consume_once=bool(item.get("consume_once", False)),
            )
        )
    return entries


def _decode_script_json(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScriptParseError(f"script document is not valid JSON: {exc}") from exc


class ScriptedBackend:
    """Deterministic backend: entries are checked in declaration order and the
    first (policy_id, substring) match wins. consume_once entries are removed
    after use, which gives queue semantics when matchers repeat."""

    def __init__(self, entries: list[ScriptEntry]):
        self._entries = list(entries)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            for i, entry in enumerate(self._entries):
                if entry.policy_id != request.policy_id:
                    continue
                if entry.match and entry.match not in request.rendered_prompt:
                    continue
                if entry.consume_once:
                    del self._entries[i]
                return CompletionResponse(text=entry.response, backend="scripted")
        head = request.rendered_prompt[:120].replace("\n", " ")
        raise ScriptExhaustedError(
            f"no script entry matches policy {request.policy_id!r} (prompt: {head!r}...)"
        )

    def remaining(self) -> int:
        with self._lock:
            return len(self._entries)


@dataclass
class LiveConfig:
    endpoint: str
    model_id: str
    api_key: str = ""
    timeout_s: float = 60.0
    max_attempts: int = 3

    @classmethod
    def from_env(cls) -> "LiveConfig":
        endpoint = os.environ.get("PLANLOOP_LLM_ENDPOINT", "")
        if not endpoint:
            raise ValidationError("PLANLOOP_LLM_ENDPOINT is not set")
        return cls(
            endpoint=endpoint,
            model_id=os.environ.get("PLANLOOP_LLM_MODEL", "default"),
            api_key=os.environ.get("PLANLOOP_LLM_API_KEY", ""),
        )


class LiveBackend:
    """Generic adapter for an OpenAI-style chat completions endpoint."""

    def __init__(self, config: LiveConfig):
        self._config = config

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = json.dumps(
            {
                "model": self._config.model_id,
                "messages": [{"role": "user", "content": request.rendered_prompt}],
                "temperature": request.temperature,
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self._config.api_key:
            headers["Authorization"] = f"Bearer {self._config.api_key}"

        last_error = None
        for attempt in range(self._config.max_attempts):
            started = time.monotonic()
            try:
                req = urllib.request.Request(self._config.endpoint, data=body, headers=headers)
                with urllib.request.urlopen(req, timeout=self._config.timeout_s) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                text = payload["choices"][0]["message"]["content"]
                latency = (time.monotonic() - started) * 1000.0
                return CompletionResponse(
                    text=text[: request.max_output_chars], backend="live", latency_ms=latency
                )
            except (urllib.error.URLError, OSError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = exc
                logger.warning("live completion attempt %d failed: %s", attempt + 1, exc)
        raise TransportError(
            f"live backend failed after {self._config.max_attempts} attempts: {last_error}",
            retries=self._config.max_attempts - 1,
        )


class RecordingBackend:
    """Wraps another backend and captures (request hash -> text) to a JSON file
    so the exchange can later be replayed byte-for-byte."""

    def __init__(self, inner, path: Union[str, Path]):
        self._inner = inner
        self._path = Path(path)
        self._records: dict[str, str] = {}
        if self._path.exists():
            self._records = json.loads(self._path.read_text(encoding="utf-8"))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self._inner.complete(request)
        self._records[request_hash(request.policy_id, request.rendered_prompt)] = response.text
        self._path.write_text(
            json.dumps(self._records, indent=2, sort_keys=True, ensure_ascii=False),
            encoding="utf-8",
        )
        return response


class ReplayBackend:
    def __init__(self, path: Union[str, Path]):
        self._records: dict[str, str] = json.loads(Path(path).read_text(encoding="utf-8"))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        key = request_hash(request.policy_id, request.rendered_prompt)
        if key not in self._records:
            raise ReplayMissError(f"no recording for policy {request.policy_id!r} (hash {key[:12]})")
        return CompletionResponse(text=self._records[key], backend="replay")

"""HTTP facade over the engine: sessions, turns, plan state, event stream.

Pure facade: every state transition visible here is exactly the engine and
store transition; the API layer holds no state of its own beyond stream
cursors. Server-sent events carry the event kind as the SSE event name and
the event's canonical payload as data, with the event id in the SSE id field.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .domain import Observation, canonical_json
from .engine import PlannerEngine
from .errors import (
    BusyError,
    ConflictError,
    DecisionFailureError,
    EmptyResultError,
    ExecutionFailureError,
    IntegrityError,
    NotFoundError,
    PlanloopError,
    SequencingError,
    UnknownStepError,
    ValidationError,
)

logger = logging.getLogger(__name__)

_HTTP_STATUS = {
    "bad-request": 400,
    "not-found": 404,
    "conflict": 409,
    "busy": 429,
    "policy-failure": 502,
    "internal": 500,
}

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
}

_SESSION_ROUTE = re.compile(r"^/sessions/([^/]+)/(plan|events|messages)$")


@dataclass
class ApiError(Exception):
    code: str
    message: str
    details: Optional[dict] = None

    def __post_init__(self):
        if self.code not in _HTTP_STATUS:
            raise ValidationError(f"unknown api error code: {self.code}")

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "details": self.details}


def error_for(exc: Exception) -> ApiError:
    """Every engine failure maps to exactly one code of the closed set."""
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, NotFoundError):
        return ApiError("not-found", str(exc))
    if isinstance(exc, BusyError):
        return ApiError("busy", str(exc))
    if isinstance(exc, ConflictError):
        return ApiError("conflict", str(exc))
    if isinstance(exc, (ValidationError, SequencingError)):
        return ApiError("bad-request", str(exc))
    if isinstance(exc, DecisionFailureError):
        return ApiError("policy-failure", str(exc), details={"raw_outputs": exc.raw_outputs})
    if isinstance(exc, (ExecutionFailureError, UnknownStepError, EmptyResultError)):
        return ApiError("policy-failure", str(exc))
    if isinstance(exc, (IntegrityError, PlanloopError)):
        return ApiError("internal", str(exc))
    return ApiError("internal", f"unexpected error: {exc}")


class _EventBus:
    """Wakes event-stream readers when the engine commits new events."""

    def __init__(self):
        self._cond = threading.Condition()
        self._latest: dict[str, int] = {}

    def publish(self, event) -> None:
        with self._cond:
            self._latest[event.session_id] = event.event_id
            self._cond.notify_all()

    def wait_beyond(self, session_id: str, last_seen: int, timeout: float) -> bool:
        with self._cond:
            return self._cond.wait_for(
                lambda: self._latest.get(session_id, 0) > last_seen, timeout=timeout
            )


class ApiServer:
    def __init__(
        self,
        engine: PlannerEngine,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: Optional[str] = None,
        auth_token: Optional[str] = None,
    ):
        self.engine = engine
        self.bus = _EventBus()
        engine.add_event_listener(self.bus.publish)
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        # v1 ships unauthenticated on localhost; setting a token requires
        # Authorization: Bearer <token> on every /sessions route
        self.auth_token = auth_token

        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # route through logging, not stderr
                logger.debug("%s %s", self.address_string(), fmt % args)

            def do_OPTIONS(self):
                self.send_response(204)
                self._cors()
                self.send_header("Content-Length", "0")
                self.end_headers()

            def do_GET(self):
                server._handle(self, "GET")

            def do_POST(self):
                server._handle(self, "POST")

            def _cors(self):
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def base_url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- request handling -----------------------------------------------------

    def _handle(self, handler: BaseHTTPRequestHandler, method: str) -> None:
        try:
            url = urlparse(handler.path)
            route = url.path.rstrip("/") or "/"
            query = parse_qs(url.query)

            if method == "GET" and route == "/healthz":
                self._send_json(handler, 200, {"status": "ok"})
                return
            if route.startswith("/sessions") and not self._authorized(handler):
                raise ApiError("bad-request", "missing or invalid bearer token")
            if method == "POST" and route == "/sessions":
                self._create_session(handler)
                return
            match = _SESSION_ROUTE.match(route)
            if match:
                session_id, tail = match.group(1), match.group(2)
                if method == "POST" and tail == "messages":
                    self._post_message(handler, session_id)
                    return
                if method == "GET" and tail == "plan":
                    self._get_plan(handler, session_id, query)
                    return
                if method == "GET" and tail == "events":
                    self._stream_events(handler, session_id, query)
                    return
            if method == "GET" and self._serve_static(handler, route):
                return
            raise ApiError("not-found", f"no route for {method} {route}")
        except ApiError as err:
            self._send_error(handler, err)
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception as exc:
            logger.exception("request failed")
            self._send_error(handler, error_for(exc))

    def _authorized(self, handler) -> bool:
        if self.auth_token is None:
            return True
        return handler.headers.get("Authorization") == f"Bearer {self.auth_token}"

    def _read_body(self, handler) -> dict:
        length = int(handler.headers.get("Content-Length") or 0)
        raw = handler.rfile.read(length) if length else b""
        if not raw:
            raise ApiError("bad-request", "request body required")
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError("bad-request", f"body is not valid JSON: {exc}")
        if not isinstance(body, dict):
            raise ApiError("bad-request", "body must be a JSON object")
        return body

    def _create_session(self, handler) -> None:
        body = self._read_body(handler)
        goal_text = body.get("goal_text") or body.get("goal") or ""
        if not isinstance(goal_text, str) or not goal_text.strip():
            raise ApiError("bad-request", "goal_text must be a non-empty string")
        try:
            session_id, result = self.engine.create_session(goal_text)
        except PlanloopError as exc:
            raise error_for(exc)
        self._send_json(
            handler,
            201,
            {
                "session_id": session_id,
                "turn_result": result.to_dict(),
                "plan": self.engine.get_plan(session_id).to_dict(),
            },
        )

    def _post_message(self, handler, session_id: str) -> None:
        body = self._read_body(handler)
        try:
            observation = Observation(
                kind=body.get("kind", "free-form-feedback"),
                text=body.get("text", ""),
                turn_index=(
                    body["turn_index"]
                    if "turn_index" in body
                    else self.engine.get_state(session_id).next_turn_index
                ),
                answered_question=body.get("answered_question"),
            )
            result = self.engine.process_turn(session_id, observation)
        except PlanloopError as exc:
            raise error_for(exc)
        self._send_json(
            handler,
            200,
            {
                "turn_result": result.to_dict(),
                "plan": self.engine.get_plan(session_id).to_dict(),
            },
        )

    def _get_plan(self, handler, session_id: str, query: dict) -> None:
        version: Optional[int] = None
        if "version" in query:
            try:
                version = int(query["version"][0])
            except ValueError:
                raise ApiError("bad-request", "version must be an integer")
        try:
            plan = self.engine.get_plan(session_id, version)
        except PlanloopError as exc:
            raise error_for(exc)
        self._send_json(handler, 200, plan.to_dict())

    def _stream_events(self, handler, session_id: str, query: dict) -> None:
        if not self.engine.has_session(session_id):
            raise ApiError("not-found", f"unknown session: {session_id}")
        from_id = 1
        if "from" in query:
            try:
                from_id = max(1, int(query["from"][0]))
            except ValueError:
                raise ApiError("bad-request", "from must be an integer")

        handler.send_response(200)
        handler._cors()
        handler.send_header("Content-Type", "text/event-stream")
        handler.send_header("Cache-Control", "no-cache")
        handler.send_header("Connection", "close")
        handler.end_headers()

        last_sent = from_id - 1
        try:
            while True:
                events = self.engine.config.store.read_events(session_id, last_sent + 1)
                for event in events:
                    frame = (
                        f"id: {event.event_id}\n"
                        f"event: {event.kind}\n"
                        f"data: {canonical_json(event.payload)}\n\n"
                    )
                    handler.wfile.write(frame.encode("utf-8"))
                    last_sent = event.event_id
                handler.wfile.flush()
                self.bus.wait_beyond(session_id, last_sent, timeout=0.5)
        except (BrokenPipeError, ConnectionResetError, OSError):
            return

    def _serve_static(self, handler, route: str) -> bool:
        if self.static_dir is None:
            return False
        relative = "index.html" if route == "/" else route.lstrip("/")
        target = (self.static_dir / relative).resolve()
        if not str(target).startswith(str(self.static_dir)) or not target.is_file():
            return False
        body = target.read_bytes()
        handler.send_response(200)
        handler._cors()
        handler.send_header(
            "Content-Type", _STATIC_TYPES.get(target.suffix, "application/octet-stream")
        )
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)
        return True

    def _send_json(self, handler, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        handler.send_response(status)
        handler._cors()
        handler.send_header("Content-Type", "application/json; charset=utf-8")
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)

    def _send_error(self, handler, err: ApiError) -> None:
        try:
            self._send_json(handler, _HTTP_STATUS[err.code], {"error": err.to_dict()})
        except (BrokenPipeError, ConnectionResetError):
            pass

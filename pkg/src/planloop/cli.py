"""Terminal entry point: serve the HTTP API, chat interactively, replay a
golden transcript, or run persona simulations.

Exit codes: 0 success, 1 mismatch or violations, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import replace
from pathlib import Path

from .api import ApiServer
from .content import StubTool, default_tool_registry, web_search_tool_from_env
from .domain import Observation, normalize_step_name
from .engine import EngineConfig, PlannerEngine
from .errors import PlanloopError, ScriptParseError
from .gateway import LiveBackend, LiveConfig, ReplayBackend, ScriptedBackend, load_script
from .prompting import load_policy_configs
from .simulator import Persona, load_persona, run_episode, synthesize_episode, write_reports
from .store import InMemoryStore, JsonlStore

USAGE_ERROR = 2


def build_engine_config(args) -> EngineConfig:
    if args.backend == "scripted":
        entries = load_script(Path(args.script)) if args.script else []
        gateway = ScriptedBackend(entries)
    elif args.backend == "replay":
        if not args.replay_tape:
            raise ScriptParseError("--replay-tape is required with the replay backend")
        gateway = ReplayBackend(args.replay_tape)
    else:
        gateway = LiveBackend(LiveConfig.from_env())

    store = JsonlStore(args.data_dir) if args.data_dir else InMemoryStore()
    return EngineConfig(
        gateway=gateway,
        store=store,
        tools=default_tool_registry(args.fixtures_dir),
        policies=load_policy_configs(args.prompts_dir, max_retries=args.max_retries),
        items_per_tool=args.n,
        items_shown=args.k,
    )


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["scripted", "live", "replay"], default="scripted")
    parser.add_argument("--script", help="script document for the scripted backend")
    parser.add_argument("--replay-tape", help="recording file for the replay backend")
    parser.add_argument("--data-dir", help="JSONL event-log directory (default: in-memory)")
    parser.add_argument("--prompts-dir", help="override directory for prompt templates")
    parser.add_argument("--fixtures-dir", help="directory with stub tool fixture files")
    parser.add_argument("--n", type=int, default=5, help="content items fetched per tool")
    parser.add_argument("--k", type=int, default=3, help="content items shown per step")
    parser.add_argument("--max-retries", type=int, default=2, help="policy parse retries")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="planloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8040)
    serve.add_argument("--static-dir", help="directory of web console assets to serve at /")
    serve.add_argument("--auth-token", default=os.environ.get("PLANLOOP_API_TOKEN") or None,
                       help="require Authorization: Bearer <token> on session routes")
    _add_engine_flags(serve)

    chat = sub.add_parser("chat", help="interactive terminal session")
    _add_engine_flags(chat)

    replay = sub.add_parser("replay", help="replay a golden transcript")
    replay.add_argument("transcript", help="transcript JSON file")
    replay.add_argument("--prompts-dir", default=None)

    simulate = sub.add_parser("simulate", help="run persona episodes and report")
    simulate.add_argument("persona_dir", nargs="?", help="directory of persona JSON files")
    simulate.add_argument("--out", default="reports", help="report output directory")
    simulate.add_argument("--synthetic", type=int, default=0,
                          help="generate N synthetic persona episodes instead")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--turns", type=int, default=4, help="turns per synthetic episode")
    _add_engine_flags(simulate)

    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "chat":
            return _cmd_chat(args)
        if args.command == "replay":
            report, code = replay_transcript(args.transcript, prompts_dir=args.prompts_dir)
            print(report)
            return code
        return _cmd_simulate(args)
    except (OSError, ValueError, ScriptParseError, PlanloopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


def _cmd_serve(args) -> int:
    engine = PlannerEngine(build_engine_config(args))
    server = ApiServer(engine, host=args.host, port=args.port, static_dir=args.static_dir,
                       auth_token=args.auth_token)
    host, port = server.address
    print(f"planloop service on http://{host}:{port} "
          f"(backend={args.backend}, data={'disk' if args.data_dir else 'memory'})",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("\nbye")
    return 0


def _print_plan(plan) -> None:
    if not plan.steps:
        print("  (plan is empty)")
        return
    for i, step in enumerate(plan.steps, start=1):
        print(f"  {i}. {step.name}")
        print(f"     {step.description}")
        for item in step.content_items:
            print(f"       - {item.title} <{item.locator}>")
        print(f"     Q{i}: {step.follow_up_question}")


def _cmd_chat(args) -> int:
    engine = PlannerEngine(build_engine_config(args))
    print("planloop chat. Empty line or 'quit' exits. Answer a step question with 'N: text'.")
    goal = input("goal> ").strip()
    if not goal:
        return 0
    sid, result = engine.create_session(goal)
    plan = engine.get_plan(sid)
    _print_plan(plan)
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            return 0
        if not line or line.lower() in ("quit", "exit"):
            return 0
        kind, answered = "free-form-feedback", None
        if ":" in line and line.split(":", 1)[0].strip().isdigit():
            index_text, line = line.split(":", 1)
            index = int(index_text) - 1
            line = line.strip()
            if 0 <= index < len(plan.steps):
                step = plan.steps[index]
                kind = "question-answer"
                answered = {"step_id": step.step_id, "question": step.follow_up_question}
        observation = Observation(
            kind=kind, text=line,
            turn_index=engine.get_state(sid).next_turn_index,
            answered_question=answered,
        )
        try:
            result = engine.process_turn(sid, observation)
        except PlanloopError as exc:
            print(f"  turn rejected: {exc}")
            continue
        if result.question_asked:
            print(f"agent asks: {result.question_asked}")
        plan = engine.get_plan(sid)
        _print_plan(plan)


def replay_transcript(path, prompts_dir=None) -> tuple[str, int]:
    """Run a transcript's episode in-process against the scripted gateway and
    compare per-turn macro-actions and the final step names. Deterministic:
    two runs produce byte-identical reports."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for field in ("goal", "messages", "script", "expected_actions"):
        if field not in doc:
            raise ScriptParseError(f"transcript is missing field {field!r}")

    tools = {}
    fixtures = doc.get("tool_fixtures", {})
    for name in ("search", "recommend-engine"):
        tools[name] = StubTool(name, fixtures=fixtures.get(name))

    config = EngineConfig(
        gateway=ScriptedBackend(load_script(doc["script"])),
        store=InMemoryStore(),
        tools=tools,
        policies=load_policy_configs(prompts_dir),
        clock=lambda: 0.0,
    )
    engine = PlannerEngine(config)

    lines = [f"replay: {path}"]
    actual_actions: list[str] = []
    sid, result = None, None
    try:
        sid, result = engine.create_session(doc["goal"], session_id="replay")
        actual_actions.append(result.macro_action.action)
    except PlanloopError as exc:
        actual_actions.append(f"failed ({exc})")

    for message in doc["messages"]:
        observation = _transcript_observation(engine, sid, message)
        try:
            result = engine.process_turn(sid, observation)
            actual_actions.append(result.macro_action.action)
        except PlanloopError as exc:
            actual_actions.append(f"failed ({exc})")

    ok = True
    expected_actions = doc["expected_actions"]
    for turn in range(max(len(expected_actions), len(actual_actions))):
        expected = expected_actions[turn] if turn < len(expected_actions) else "(no turn)"
        actual = actual_actions[turn] if turn < len(actual_actions) else "(no turn)"
        match = expected == actual
        ok &= match
        lines.append(f"turn {turn}: expected {expected} | actual {actual} | "
                     f"{'ok' if match else 'MISMATCH'}")

    final_names = sorted(engine.get_plan(sid).normalized_names()) if sid else []
    lines.append(f"final steps: {'; '.join(final_names) or '(none)'}")
    missing = [
        name for name in doc.get("expected_final_steps", [])
        if normalize_step_name(name) not in final_names
    ]
    lines.append(f"missing expected steps: {'; '.join(missing) or '(none)'}")
    ok &= not missing
    lines.append(f"result: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines), 0 if ok else 1


def _transcript_observation(engine, sid, message) -> Observation:
    kind = message.get("kind", "free-form-feedback")
    answered = None
    if kind == "question-answer":
        plan = engine.get_plan(sid)
        step = plan.resolve_step(message["answer_step"])
        if step is None:
            raise ScriptParseError(
                f"transcript answers unknown step {message['answer_step']!r}"
            )
        answered = {"step_id": step.step_id, "question": step.follow_up_question}
    return Observation(
        kind=kind,
        text=message["text"],
        turn_index=engine.get_state(sid).next_turn_index,
        answered_question=answered,
    )


def _cmd_simulate(args) -> int:
    base_config = build_engine_config(args)
    reports = []
    if args.synthetic > 0:
        for i in range(args.synthetic):
            rng = random.Random(args.seed + i)
            persona, entries = synthesize_episode(rng, f"persona-{i:03d}", turns=args.turns)
            config = replace(base_config, gateway=ScriptedBackend(entries), store=InMemoryStore())
            reports.append(run_episode(persona, config))
    else:
        if not args.persona_dir:
            print("error: give a persona directory or --synthetic N", file=sys.stderr)
            return USAGE_ERROR
        persona_paths = sorted(Path(args.persona_dir).glob("*.json"))
        if not persona_paths:
            print(f"error: no persona files in {args.persona_dir}", file=sys.stderr)
            return USAGE_ERROR
        for path in persona_paths:
            reports.append(run_episode(load_persona(path), base_config))

    summary = write_reports(reports, args.out)
    violations = summary["violations"]
    print(
        f"episodes={summary['episodes']} turns={summary['turns']} "
        f"failed_turns={summary['failed_turns']} violations={violations} "
        f"wall_time={summary['wall_time_s']}s -> reports in {args.out}/"
    )
    return 0 if violations == 0 else 1


if __name__ == "__main__":
    sys.exit(main())

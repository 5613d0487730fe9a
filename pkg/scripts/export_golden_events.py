#!/usr/bin/env python3
"""Export the committed event stream of a golden transcript as JSON lines.

The web console's reducer tests fold these recorded streams headlessly, so
this script regenerates frontend/test/fixtures/ whenever a transcript or the
engine's event shapes change.

    python scripts/export_golden_events.py transcripts/inventors.json \
        frontend/test/fixtures/inventors_events.jsonl
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from planloop.cli import _transcript_observation
from planloop.content import StubTool
from planloop.engine import EngineConfig, PlannerEngine
from planloop.gateway import ScriptedBackend, load_script
from planloop.prompting import load_policy_configs
from planloop.store import InMemoryStore


def export(transcript_path: str, out_path: str) -> int:
    doc = json.loads(Path(transcript_path).read_text(encoding="utf-8"))
    fixtures = doc.get("tool_fixtures", {})
    config = EngineConfig(
        gateway=ScriptedBackend(load_script(doc["script"])),
        store=InMemoryStore(),
        tools={n: StubTool(n, fixtures=fixtures.get(n)) for n in ("search", "recommend-engine")},
        policies=load_policy_configs(),
        clock=lambda: 0.0,
    )
    engine = PlannerEngine(config)
    sid, _ = engine.create_session(doc["goal"], session_id="golden")
    for message in doc["messages"]:
        observation = _transcript_observation(engine, sid, message)
        engine.process_turn(sid, observation)

    events = engine.config.store.read_events(sid)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    print(f"wrote {len(events)} events to {out}")
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 3:
        print(__doc__)
        sys.exit(2)
    sys.exit(export(sys.argv[1], sys.argv[2]))

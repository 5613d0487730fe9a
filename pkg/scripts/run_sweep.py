#!/usr/bin/env python3
"""Batch persona sweep against the scripted gateway.

Generates N synthetic personas with matching gateway scripts, runs each
episode, and writes per-episode JSON plus a flat CSV of turns. Prints the
summary line and exits nonzero if any invariant violation was reported.

    python scripts/run_sweep.py --episodes 20 --turns 6 --out reports/
"""

import argparse
import random
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from planloop.content import StubTool
from planloop.engine import EngineConfig
from planloop.gateway import ScriptedBackend
from planloop.prompting import load_policy_configs
from planloop.simulator import run_episode, synthesize_episode, write_reports
from planloop.store import InMemoryStore


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=20)
    parser.add_argument("--turns", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="reports")
    args = parser.parse_args()

    base = EngineConfig(
        gateway=ScriptedBackend([]),
        store=InMemoryStore(),
        tools={"search": StubTool("search"), "recommend-engine": StubTool("recommend-engine")},
        policies=load_policy_configs(),
    )
    reports = []
    for i in range(args.episodes):
        persona, entries = synthesize_episode(
            random.Random(args.seed + i), f"persona-{i:03d}", turns=args.turns
        )
        config = replace(base, gateway=ScriptedBackend(entries), store=InMemoryStore())
        reports.append(run_episode(persona, config))

    summary = write_reports(reports, args.out)
    print(
        f"episodes={summary['episodes']} turns={summary['turns']} "
        f"failed_turns={summary['failed_turns']} violations={summary['violations']} "
        f"wall_time={summary['wall_time_s']}s -> {args.out}/"
    )
    return 0 if summary["violations"] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())

// Criterion: folding the recorded golden event streams headlessly must
// rebuild the plan board, duplicates must be no-ops, and gaps must buffer.

import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { applyServerEvent, initialState, type ViewState } from "../src/reducer.js";
import type { TurnEvent } from "../src/types.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const fixtures = path.resolve(here, "../../test/fixtures");

function loadEvents(name: string): TurnEvent[] {
  const raw = readFileSync(path.join(fixtures, name), "utf-8");
  return raw
    .split("\n")
    .filter((line) => line.trim())
    .map((line) => JSON.parse(line) as TurnEvent);
}

function fold(events: TurnEvent[], sessionId = "golden"): ViewState {
  return events.reduce(applyServerEvent, initialState(sessionId));
}

const INVENTOR_STEPS = [
  "start with stories",
  "use everyday examples",
  "visit museums or science centers",
  "ada lovelace",
  "grace hopper",
  "hady lamarr",
];

test("inventors stream rebuilds a board with the six inventor steps and chips", () => {
  const events = loadEvents("inventors_events.jsonl");
  const state = fold(events);

  const names = state.planBoard.steps.map((s) => s.name.toLowerCase());
  for (const required of INVENTOR_STEPS) {
    assert.ok(names.includes(required), `missing step: ${required}`);
  }
  for (const step of state.planBoard.steps) {
    assert.ok(step.follow_up_question.endsWith("?"), `step ${step.name} has no question chip`);
    assert.ok(step.follow_up_question.length > 1);
  }
  assert.equal(state.planBoard.version, 3);
  assert.equal(state.lastEventId, events[events.length - 1].event_id);
  const userMessages = state.messages.filter((m) => m.role === "user");
  assert.equal(userMessages.length, 3);
});

test("duplicate events are idempotent", () => {
  const events = loadEvents("inventors_events.jsonl");
  let state = initialState("golden");
  for (const event of events) {
    state = applyServerEvent(state, event);
    const again = applyServerEvent(state, event);
    assert.strictEqual(again, state, "re-applying the same event must be a no-op");
  }
  const replayedAll = events.reduce(applyServerEvent, state);
  assert.deepEqual(replayedAll, state);
});

test("out-of-order events buffer until the gap fills", () => {
  const events = loadEvents("inventors_events.jsonl");
  const shuffled = [...events];
  // swap two adjacent mid-stream events and also hold one back to the end
  [shuffled[3], shuffled[4]] = [shuffled[4], shuffled[3]];
  const held = shuffled.splice(6, 1)[0];
  shuffled.push(held);

  const inOrder = fold(events);
  const outOfOrder = fold(shuffled);
  assert.deepEqual(outOfOrder.planBoard, inOrder.planBoard);
  assert.equal(outOfOrder.lastEventId, inOrder.lastEventId);
});

test("events for another session are ignored", () => {
  const events = loadEvents("inventors_events.jsonl");
  const state = initialState("other-session");
  const next = events.reduce(applyServerEvent, state);
  assert.deepEqual(next.planBoard.steps, []);
});

test("crossfit stream alters exactly one card", () => {
  const events = loadEvents("crossfit_events.jsonl");
  const afterFirstTurn = fold(events.slice(0, 5));
  assert.equal(afterFirstTurn.planBoard.steps.length, 3);
  assert.equal(afterFirstTurn.planBoard.version, 1);

  const full = fold(events);
  assert.equal(full.planBoard.steps.length, 3);
  assert.equal(full.planBoard.version, 2);

  const before = new Map(
    afterFirstTurn.planBoard.steps.map((s) => [s.step_id, JSON.stringify(s)]),
  );
  const changed = full.planBoard.steps.filter(
    (s) => before.get(s.step_id) !== JSON.stringify(s),
  );
  assert.equal(changed.length, 1);
  assert.equal(changed[0].name, "Set realistic goals");
});

test("a TurnFailed event leaves the board untouched", () => {
  const events = loadEvents("crossfit_events.jsonl");
  const state = fold(events);
  const failed: TurnEvent = {
    event_id: state.lastEventId + 1,
    session_id: "golden",
    kind: "TurnFailed",
    payload: { error: "policy-failure", detail: "scripted" },
  };
  const next = applyServerEvent(state, failed);
  assert.deepEqual(next.planBoard, state.planBoard);
  assert.equal(next.messages[next.messages.length - 1].role, "system");
  assert.equal(next.pendingTurn, false);
});

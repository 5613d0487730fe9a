// End-to-end console smoke against a real `planloop serve` process with the
// scripted gateway: entering the crossfit goal renders three step cards;
// answering the fitness-goals follow-up updates exactly one card.

import assert from "node:assert/strict";
import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { ConsoleSession } from "../src/console.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const repoRoot = path.resolve(here, "../../..");

interface Server {
  child: ChildProcess;
  baseUrl: string;
  tmpDir: string;
}

async function startServer(): Promise<Server> {
  const transcript = JSON.parse(
    readFileSync(path.join(repoRoot, "transcripts", "crossfit.json"), "utf-8"),
  );
  const tmpDir = mkdtempSync(path.join(os.tmpdir(), "planloop-smoke-"));
  const scriptPath = path.join(tmpDir, "script.json");
  writeFileSync(scriptPath, JSON.stringify(transcript.script));

  const child = spawn(
    "python3",
    ["-m", "planloop.cli", "serve", "--port", "0", "--script", scriptPath],
    { cwd: repoRoot, stdio: ["ignore", "pipe", "pipe"] },
  );

  const baseUrl = await new Promise<string>((resolve, reject) => {
    let output = "";
    const timer = setTimeout(
      () => reject(new Error(`server did not start: ${output}`)),
      15_000,
    );
    child.stdout!.on("data", (chunk: Buffer) => {
      output += chunk.toString();
      const match = output.match(/planloop service on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    child.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early (${code}): ${output}`));
    });
  });
  return { child, baseUrl, tmpDir };
}

test("crossfit goal renders 3 cards; answering the goals chip updates exactly one", { timeout: 60_000 }, async () => {
  const server = await startServer();
  const session = new ConsoleSession(server.baseUrl);
  try {
    await session.start("I want to do crossfit");

    // the event stream replays the committed turn-0 events into the board
    await session.waitFor(
      (s) => s.planBoard.steps.length === 3 && s.planBoard.version === 1,
      15_000,
    );
    const board = session.state.planBoard;
    assert.deepEqual(
      board.steps.map((s) => s.name),
      ["Learn the basics of crossfit", "Assess your current fitness level", "Set realistic goals"],
    );
    for (const step of board.steps) {
      assert.ok(step.follow_up_question.endsWith("?"));
    }
    const cardsBefore = new Map(board.steps.map((s) => [s.step_id, JSON.stringify(s)]));

    // click the "What are your fitness goals?" chip, then answer it
    const goalsStep = board.steps.find((s) =>
      s.follow_up_question.includes("What are your fitness goals?"),
    );
    assert.ok(goalsStep, "expected the fitness-goals follow-up chip");
    const selected = session.selectFollowUp(goalsStep.step_id);
    assert.equal(selected?.question, "What are your fitness goals?");

    await session.send("I would like to improve my cardiovascular health.");
    await session.waitFor((s) => s.planBoard.version === 2, 15_000);

    const after = session.state.planBoard;
    assert.equal(after.steps.length, 3);
    const changed = after.steps.filter(
      (s) => cardsBefore.get(s.step_id) !== JSON.stringify(s),
    );
    assert.equal(changed.length, 1, "exactly one card must change");
    assert.equal(changed[0].step_id, goalsStep.step_id);
    assert.ok(changed[0].description.includes("cardiovascular"));

    assert.equal(session.state.pendingTurn, false, "turn result arrived, nothing pending");
    console.log(
      "[acceptance] criterion 10 (console smoke): PASS " +
        "(3 cards rendered, one card updated after answering the chip)",
    );
  } finally {
    session.stop();
    server.child.kill("SIGTERM");
    await new Promise((resolve) => server.child.on("exit", resolve));
    rmSync(server.tmpDir, { recursive: true, force: true });
  }
});

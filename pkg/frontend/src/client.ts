// HTTP + SSE client for the planloop service. SSE is read from a fetch body
// stream (rather than EventSource) so the same code runs in browsers and in
// Node for headless tests.

import type { AnsweredQuestion, ObservationKind, Plan, TurnEvent, TurnResult } from "./types.js";

export interface CreateSessionResponse {
  session_id: string;
  turn_result: TurnResult;
  plan: Plan;
}

export interface MessageResponse {
  turn_result: TurnResult;
  plan: Plan;
}

export class ApiFailure extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function jsonOrThrow(response: Response): Promise<any> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const err = (body as any).error ?? {};
    throw new ApiFailure(err.code ?? "internal", err.message ?? response.statusText, response.status);
  }
  return body;
}

export async function createSession(baseUrl: string, goalText: string): Promise<CreateSessionResponse> {
  const response = await fetch(`${baseUrl}/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ goal_text: goalText }),
  });
  return jsonOrThrow(response);
}

export async function postMessage(
  baseUrl: string,
  sessionId: string,
  text: string,
  kind: ObservationKind,
  answeredQuestion?: AnsweredQuestion,
): Promise<MessageResponse> {
  const response = await fetch(`${baseUrl}/sessions/${sessionId}/messages`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      text,
      kind,
      answered_question: answeredQuestion ?? null,
    }),
  });
  return jsonOrThrow(response);
}

export async function getPlan(baseUrl: string, sessionId: string, version?: number): Promise<Plan> {
  const suffix = version === undefined ? "" : `?version=${version}`;
  const response = await fetch(`${baseUrl}/sessions/${sessionId}/plan${suffix}`);
  return jsonOrThrow(response);
}

/**
 * Subscribe to the session event stream from `fromEventId`, invoking onEvent
 * for each frame. Resolves when the stream ends or the signal aborts.
 */
export async function subscribeEvents(
  baseUrl: string,
  sessionId: string,
  fromEventId: number,
  onEvent: (event: TurnEvent) => void,
  signal?: AbortSignal,
): Promise<void> {
  const response = await fetch(`${baseUrl}/sessions/${sessionId}/events?from=${fromEventId}`, {
    headers: { Accept: "text/event-stream" },
    signal,
  });
  if (!response.ok || response.body === null) {
    throw new ApiFailure("internal", `event stream failed: ${response.status}`, response.status);
  }
  const reader = response.body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        return;
      }
      buffer += decoder.decode(value, { stream: true });
      let boundary = buffer.indexOf("\n\n");
      while (boundary >= 0) {
        const frame = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        const event = parseFrame(frame, sessionId);
        if (event !== null) {
          onEvent(event);
        }
        boundary = buffer.indexOf("\n\n");
      }
    }
  } finally {
    reader.releaseLock();
  }
}

function parseFrame(frame: string, sessionId: string): TurnEvent | null {
  let id: number | null = null;
  let kind = "";
  let data = "";
  for (const line of frame.split("\n")) {
    if (line.startsWith("id: ")) {
      id = Number(line.slice(4));
    } else if (line.startsWith("event: ")) {
      kind = line.slice(7);
    } else if (line.startsWith("data: ")) {
      data = line.slice(6);
    }
  }
  if (id === null || !kind) {
    return null;
  }
  try {
    return {
      event_id: id,
      session_id: sessionId,
      kind: kind as TurnEvent["kind"],
      payload: JSON.parse(data || "{}"),
    };
  } catch {
    return null;
  }
}

// Pure view-state reducer over the session's ordered event stream.
//
// The board is a fold of server events and nothing else (optimistic updates
// are deliberately absent). Duplicates are ignored, and events that arrive
// ahead of a gap are buffered until the gap fills, so the fold result is
// independent of delivery timing.

import type { ContentItem, Plan, PlanStep, TurnEvent } from "./types.js";

export type ConnectionState = "connected" | "reconnecting" | "offline";

export interface ChatMessage {
  role: "user" | "agent" | "system";
  text: string;
  eventId: number;
}

export interface ViewState {
  sessionId: string;
  messages: ChatMessage[];
  planBoard: Plan;
  pendingTurn: boolean;
  connectionState: ConnectionState;
  lastEventId: number;
  buffered: Record<number, TurnEvent>;
}

export function initialState(sessionId: string): ViewState {
  return {
    sessionId,
    messages: [],
    planBoard: { steps: [], version: 0 },
    pendingTurn: false,
    connectionState: "offline",
    lastEventId: 0,
    buffered: {},
  };
}

export function applyServerEvent(state: ViewState, event: TurnEvent): ViewState {
  if (event.session_id !== state.sessionId) {
    return state;
  }
  if (event.event_id <= state.lastEventId) {
    return state; // duplicate: idempotent by construction
  }
  if (event.event_id > state.lastEventId + 1) {
    // out of order: hold it until the gap fills
    return { ...state, buffered: { ...state.buffered, [event.event_id]: event } };
  }

  let next = applyInOrder(state, event);
  // drain any buffered events that are now contiguous
  while (next.buffered[next.lastEventId + 1] !== undefined) {
    const queued = next.buffered[next.lastEventId + 1];
    const remaining = { ...next.buffered };
    delete remaining[queued.event_id];
    next = applyInOrder({ ...next, buffered: remaining }, queued);
  }
  return next;
}

function applyInOrder(state: ViewState, event: TurnEvent): ViewState {
  const next: ViewState = { ...state, lastEventId: event.event_id };
  const payload = event.payload as Record<string, any>;

  switch (event.kind) {
    case "SessionCreated":
      return next;
    case "ObservationRecorded":
      return withMessage(next, "user", String(payload.text ?? ""), event.event_id);
    case "MacroActionChosen":
      return next;
    case "StepsAdded": {
      const added = (payload.steps as PlanStep[]).map(cloneStep);
      return {
        ...withMessage(
          next,
          "agent",
          `Added ${added.length} step${added.length === 1 ? "" : "s"}: ` +
            added.map((s) => s.name).join(", "),
          event.event_id,
        ),
        planBoard: {
          steps: [...next.planBoard.steps, ...added],
          version: next.planBoard.version + 1,
        },
      };
    }
    case "StepAltered": {
      const alterations = payload.alterations as { before: PlanStep; after: PlanStep }[];
      const afterById = new Map(alterations.map((a) => [a.after.step_id, cloneStep(a.after)]));
      const names = alterations.map((a) => a.after.name).join(", ");
      return {
        ...withMessage(next, "agent", `Updated: ${names}`, event.event_id),
        planBoard: {
          steps: next.planBoard.steps.map((s) => afterById.get(s.step_id) ?? s),
          version: next.planBoard.version + 1,
        },
      };
    }
    case "ContentAttached": {
      const contents = payload.step_contents as Record<string, ContentItem[]>;
      return {
        ...next,
        planBoard: {
          steps: next.planBoard.steps.map((s) =>
            contents[s.step_id] !== undefined
              ? { ...s, content_items: contents[s.step_id].map((c) => ({ ...c })) }
              : s,
          ),
          version: next.planBoard.version,
        },
      };
    }
    case "QuestionAsked":
      return {
        ...withMessage(next, "agent", String(payload.question ?? ""), event.event_id),
        pendingTurn: false,
      };
    case "TurnFailed":
      return {
        ...withMessage(
          next,
          "system",
          `That message could not be processed (${String(payload.error ?? "error")}); the plan is unchanged.`,
          event.event_id,
        ),
        pendingTurn: false,
      };
    default:
      return next;
  }
}

function withMessage(
  state: ViewState,
  role: ChatMessage["role"],
  text: string,
  eventId: number,
): ViewState {
  return { ...state, messages: [...state.messages, { role, text, eventId }] };
}

function cloneStep(step: PlanStep): PlanStep {
  return {
    ...step,
    search_keywords: [...step.search_keywords],
    content_items: step.content_items.map((c) => ({ ...c })),
    provenance: { ...step.provenance },
  };
}

// Wire types mirrored from the service's canonical JSON (snake_case).

export interface ContentItem {
  title: string;
  locator: string;
  snippet: string | null;
  source_tool: string;
  fetch_rank: number;
  final_rank: number | null;
}

export interface PlanStep {
  step_id: string;
  name: string;
  description: string;
  follow_up_question: string;
  search_keywords: string[];
  content_items: ContentItem[];
  provenance: {
    created_turn: number;
    last_altered_turn: number | null;
    created_by: string;
  };
}

export interface Plan {
  steps: PlanStep[];
  version: number;
}

export type EventKind =
  | "SessionCreated"
  | "ObservationRecorded"
  | "MacroActionChosen"
  | "StepsAdded"
  | "StepAltered"
  | "ContentAttached"
  | "QuestionAsked"
  | "TurnFailed";

export interface TurnEvent {
  event_id: number;
  session_id: string;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface MacroAction {
  thought: string;
  action: string;
  arguments: string[];
  raw: string;
}

export interface TurnResult {
  plan_diff: {
    added_steps: PlanStep[];
    altered_steps: { before: PlanStep; after: PlanStep }[];
    question_asked: string | null;
  };
  question_asked: string | null;
  shown_questions: { step_id: string; question: string }[];
  macro_action: MacroAction;
  turn_index: number;
}

export interface AnsweredQuestion {
  step_id: string;
  question: string;
}

export type ObservationKind = "initial-goal" | "question-answer" | "free-form-feedback";

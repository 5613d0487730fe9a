// Session controller: the headless core of the console. The DOM layer and
// the end-to-end tests drive exactly this object, so the interaction logic
// (chip selection, sending, stream reconnection) is testable without a
// browser.
import { createSession, postMessage, subscribeEvents } from "./client.js";
import { applyServerEvent, initialState } from "./reducer.js";
export class ConsoleSession {
    constructor(baseUrl) {
        this.baseUrl = baseUrl;
        this.state = initialState("");
        this.pendingAnswer = null;
        this.listeners = [];
        this.abort = null;
        this.stopped = false;
    }
    onChange(listener) {
        this.listeners.push(listener);
    }
    update(next) {
        this.state = next;
        for (const listener of this.listeners) {
            listener(next);
        }
    }
    /** Create the session (turn 0 included) and start tailing its events. */
    async start(goalText) {
        const created = await createSession(this.baseUrl, goalText);
        this.update({ ...initialState(created.session_id), pendingTurn: false });
        void this.streamLoop();
    }
    /** Chip click: pre-select the step's follow-up question as the context the
     * next message answers. */
    selectFollowUp(stepId) {
        const step = this.state.planBoard.steps.find((s) => s.step_id === stepId);
        this.pendingAnswer = step
            ? { step_id: step.step_id, question: step.follow_up_question }
            : null;
        return this.pendingAnswer;
    }
    clearSelection() {
        this.pendingAnswer = null;
    }
    /** Send one message. A selected follow-up makes it a question answer with
     * the step reference; otherwise it is free-form feedback. The board itself
     * only changes when the server's events arrive. */
    async send(text) {
        const answered = this.pendingAnswer;
        this.pendingAnswer = null;
        this.update({ ...this.state, pendingTurn: true });
        try {
            await postMessage(this.baseUrl, this.state.sessionId, text, answered ? "question-answer" : "free-form-feedback", answered ?? undefined);
        }
        finally {
            // pendingTurn spans send -> TurnResult; the board itself still only
            // changes when the committed events arrive on the stream
            this.update({ ...this.state, pendingTurn: false });
        }
    }
    apply(event) {
        this.update(applyServerEvent(this.state, event));
    }
    /** Poll helper: resolves once the predicate holds. */
    async waitFor(predicate, timeoutMs = 10000) {
        const deadline = Date.now() + timeoutMs;
        while (Date.now() < deadline) {
            if (predicate(this.state)) {
                return this.state;
            }
            await new Promise((resolve) => setTimeout(resolve, 25));
        }
        throw new Error("timed out waiting for view state");
    }
    stop() {
        this.stopped = true;
        this.abort?.abort();
    }
    async streamLoop() {
        while (!this.stopped) {
            this.abort = new AbortController();
            try {
                this.update({ ...this.state, connectionState: "connected" });
                await subscribeEvents(this.baseUrl, this.state.sessionId, this.state.lastEventId + 1, // reconnect resumes after the last applied event
                (event) => this.apply(event), this.abort.signal);
            }
            catch {
                // fall through to reconnect
            }
            if (this.stopped) {
                break;
            }
            this.update({ ...this.state, connectionState: "reconnecting" });
            await new Promise((resolve) => setTimeout(resolve, 500));
        }
        this.update({ ...this.state, connectionState: "offline" });
    }
}

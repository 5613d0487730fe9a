// HTTP + SSE client for the planloop service. SSE is read from a fetch body
// stream (rather than EventSource) so the same code runs in browsers and in
// Node for headless tests.
export class ApiFailure extends Error {
    constructor(code, message, status) {
        super(message);
        this.code = code;
        this.status = status;
    }
}
async function jsonOrThrow(response) {
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
        const err = body.error ?? {};
        throw new ApiFailure(err.code ?? "internal", err.message ?? response.statusText, response.status);
    }
    return body;
}
export async function createSession(baseUrl, goalText) {
    const response = await fetch(`${baseUrl}/sessions`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ goal_text: goalText }),
    });
    return jsonOrThrow(response);
}
export async function postMessage(baseUrl, sessionId, text, kind, answeredQuestion) {
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
export async function getPlan(baseUrl, sessionId, version) {
    const suffix = version === undefined ? "" : `?version=${version}`;
    const response = await fetch(`${baseUrl}/sessions/${sessionId}/plan${suffix}`);
    return jsonOrThrow(response);
}
/**
 * Subscribe to the session event stream from `fromEventId`, invoking onEvent
 * for each frame. Resolves when the stream ends or the signal aborts.
 */
export async function subscribeEvents(baseUrl, sessionId, fromEventId, onEvent, signal) {
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
    }
    finally {
        reader.releaseLock();
    }
}
function parseFrame(frame, sessionId) {
    let id = null;
    let kind = "";
    let data = "";
    for (const line of frame.split("\n")) {
        if (line.startsWith("id: ")) {
            id = Number(line.slice(4));
        }
        else if (line.startsWith("event: ")) {
            kind = line.slice(7);
        }
        else if (line.startsWith("data: ")) {
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
            kind: kind,
            payload: JSON.parse(data || "{}"),
        };
    }
    catch {
        return null;
    }
}

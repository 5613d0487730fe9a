// DOM shell: renders the chat pane and plan board from ViewState and wires
// user input into the ConsoleSession controller.
import { ConsoleSession } from "./console.js";
const baseUrl = window.location.origin;
let session = null;
const el = (id) => document.getElementById(id);
function render(state) {
    el("connection").textContent = state.connectionState;
    el("connection").dataset.state = state.connectionState;
    el("pending").style.display = state.pendingTurn ? "inline" : "none";
    const log = el("chat-log");
    log.innerHTML = "";
    for (const message of state.messages) {
        const bubble = document.createElement("div");
        bubble.className = `bubble ${message.role}`;
        bubble.textContent = message.text;
        log.appendChild(bubble);
    }
    log.scrollTop = log.scrollHeight;
    const board = el("board");
    board.innerHTML = "";
    for (const step of state.planBoard.steps) {
        const card = document.createElement("div");
        card.className = "card";
        const title = document.createElement("h3");
        title.textContent = step.name;
        card.appendChild(title);
        const description = document.createElement("p");
        description.textContent = step.description;
        card.appendChild(description);
        if (step.content_items.length > 0) {
            const list = document.createElement("ul");
            for (const item of step.content_items) {
                const row = document.createElement("li");
                const link = document.createElement("a");
                link.href = item.locator;
                link.target = "_blank";
                link.rel = "noreferrer";
                link.textContent = item.title;
                row.appendChild(link);
                list.appendChild(row);
            }
            card.appendChild(list);
        }
        const chip = document.createElement("button");
        chip.className = "chip";
        chip.textContent = step.follow_up_question;
        chip.onclick = () => {
            const selected = session?.selectFollowUp(step.step_id) ?? null;
            const banner = el("answering");
            if (selected) {
                banner.textContent = `answering: ${selected.question}`;
                banner.style.display = "block";
                el("message-input").focus();
            }
        };
        card.appendChild(chip);
        board.appendChild(card);
    }
    el("plan-version").textContent = `plan v${state.planBoard.version}`;
}
async function startSession(goal) {
    session = new ConsoleSession(baseUrl);
    session.onChange(render);
    el("goal-form").style.display = "none";
    el("workspace").style.display = "grid";
    await session.start(goal);
}
async function sendCurrent() {
    if (!session) {
        return;
    }
    const input = el("message-input");
    const text = input.value.trim();
    if (!text) {
        return;
    }
    input.value = "";
    el("answering").style.display = "none";
    try {
        await session.send(text);
    }
    catch (err) {
        const note = document.createElement("div");
        note.className = "bubble system";
        note.textContent = `send failed: ${err instanceof Error ? err.message : err}`;
        el("chat-log").appendChild(note);
    }
}
window.addEventListener("DOMContentLoaded", () => {
    el("goal-form").addEventListener("submit", (event) => {
        event.preventDefault();
        const goal = el("goal-input").value.trim();
        if (goal) {
            void startSession(goal);
        }
    });
    el("message-form").addEventListener("submit", (event) => {
        event.preventDefault();
        void sendCurrent();
    });
    el("clear-answer").onclick = () => {
        session?.clearSelection();
        el("answering").style.display = "none";
    };
});

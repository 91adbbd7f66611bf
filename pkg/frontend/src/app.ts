// DOM wiring: a polling dashboard of sessions and the labeling view.
// Routing is hash-based: #/ lists sessions, #/session/<id> opens one.

import { ApiConfig, getSession, listSessions, SessionSummary } from "./api.js";
import { drawScatter } from "./scatter.js";
import { SessionView } from "./state.js";

declare global {
    interface Window { API_BASE_URL?: string }
}

const cfg: ApiConfig = { baseUrl: window.API_BASE_URL ?? "" };
const POLL_MS = 2000;

const root = document.getElementById("root") as HTMLElement;
let view: SessionView | null = null;
let pollTimer: number | undefined;

function el(tag: string, cls?: string, text?: string): HTMLElement {
    const node = document.createElement(tag);
    if (cls) node.className = cls;
    if (text !== undefined) node.textContent = text;
    return node;
}

function route(): void {
    if (pollTimer !== undefined) {
        window.clearInterval(pollTimer);
        pollTimer = undefined;
    }
    view = null;
    const hash = window.location.hash;
    const match = hash.match(/^#\/session\/(.+)$/);
    if (match) {
        openSession(match[1]);
    } else {
        openDashboard();
    }
}

// --- dashboard ---------------------------------------------------------------

function renderDashboard(sessions: SessionSummary[]): void {
    root.replaceChildren();
    root.appendChild(el("h1", "title", "Annotation sessions"));
    if (sessions.length === 0) {
        root.appendChild(el("p", "empty", "No sessions yet. Start a run in human mode and it will appear here."));
        return;
    }
    const list = el("ul", "sessions");
    for (const s of sessions) {
        const item = el("li", "session-row");
        const link = el("a", "session-link", s.session_id) as HTMLAnchorElement;
        link.href = `#/session/${s.session_id}`;
        item.appendChild(link);
        item.appendChild(el("span", `badge ${s.status}`, s.status === "complete" ? "complete" : "open"));
        item.appendChild(el("span", "progress", `${s.labeled}/${s.total} labeled`));
        list.appendChild(item);
    }
    root.appendChild(list);
}

function openDashboard(): void {
    const tick = () => listSessions(cfg).then(renderDashboard).catch(showError);
    tick();
    pollTimer = window.setInterval(tick, POLL_MS);
}

function showError(err: unknown): void {
    root.replaceChildren(el("p", "error", `service unreachable: ${String(err)}`));
}

// --- session view ------------------------------------------------------------

function openSession(id: string): void {
    getSession(cfg, id).then((state) => {
        view = new SessionView(state);
        renderSession();
        pollTimer = window.setInterval(() => {
            getSession(cfg, id).then((fresh) => {
                if (view) {
                    view.refresh(fresh);
                    renderSession();
                }
            }).catch(() => { /* keep the current view; confirm() surfaces failures */ });
        }, POLL_MS);
    }).catch(showError);
}

function renderSession(): void {
    if (!view) return;
    const v = view;
    root.replaceChildren();
    const back = el("a", "back", "< sessions") as HTMLAnchorElement;
    back.href = "#/";
    root.appendChild(back);
    root.appendChild(el("h1", "title", `Session ${v.state.session_id}`));

    const progress = v.progress();
    const header = el("div", "header");
    header.appendChild(el("span", "progress",
        `${progress.labeled} labeled / ${progress.queued} queued / ${progress.total} total`));
    if (v.exportReady()) {
        header.appendChild(el("span", "badge complete", "COMPLETE - export ready"));
    }
    if (v.retryBanner) {
        const banner = el("div", "retry-banner",
            "submit failed - your picks are still queued, press Confirm to retry");
        header.appendChild(banner);
    }
    root.appendChild(header);

    const canvas = el("canvas", "scatter") as HTMLCanvasElement;
    canvas.width = 560;
    canvas.height = 420;
    root.appendChild(canvas);
    const ctx = canvas.getContext("2d");
    if (ctx) {
        drawScatter(ctx, canvas.width, canvas.height, v.state.background ?? [],
                    v.state.items, v.current());
    }

    const currentId = v.current();
    const info = el("div", "current");
    if (currentId === null) {
        info.appendChild(el("p", undefined, v.buffer.length > 0
            ? "All items picked - press Confirm to submit."
            : "All items labeled."));
    } else {
        const item = v.state.items.find((it) => it.sample_id === currentId);
        const tau = item && item.tau !== null && item.tau !== undefined
            ? ` (score ${item.tau.toPrecision(4)})` : "";
        info.appendChild(el("p", undefined, `Label sample ${currentId}${tau}:`));
    }
    root.appendChild(info);

    const buttons = el("div", "buttons");
    v.classNames().forEach((name, idx) => {
        const b = el("button", "class-btn", `${idx + 1}: ${name}`) as HTMLButtonElement;
        b.style.borderColor = "#888";
        b.onclick = () => { v.pick(idx); renderSession(); };
        buttons.appendChild(b);
    });
    const bottom = el("button", "bottom-btn", "0: none of these") as HTMLButtonElement;
    bottom.onclick = () => { v.pick("BOTTOM"); renderSession(); };
    buttons.appendChild(bottom);
    const undo = el("button", "undo-btn", "Undo") as HTMLButtonElement;
    undo.onclick = () => { v.undo(); renderSession(); };
    buttons.appendChild(undo);
    const confirm = el("button", "confirm-btn", `Confirm (${v.buffer.length})`) as HTMLButtonElement;
    confirm.disabled = v.buffer.length === 0;
    confirm.onclick = () => {
        v.confirm(cfg).then(renderSession).catch(() => renderSession());
    };
    buttons.appendChild(confirm);
    root.appendChild(buttons);
}

window.addEventListener("keydown", (ev) => {
    if (!view) return;
    const label = view.labelForKey(ev.key);
    if (label !== null) {
        view.pick(label);
        renderSession();
    } else if (ev.key === "u") {
        view.undo();
        renderSession();
    } else if (ev.key === "Enter") {
        view.confirm(cfg).then(renderSession).catch(() => renderSession());
    }
});

window.addEventListener("hashchange", route);
route();

// Typed client for the annotation session API. All state lives server-side;
// the client never invents labels and never sees ground-truth membership
// (the API does not expose it).

export type Label = number | "BOTTOM";

export interface SessionSummary {
    session_id: string;
    status: "open" | "complete";
    num_classes: number;
    class_names: string[] | null;
    total: number;
    labeled: number;
}

export interface SessionItem {
    sample_id: number;
    features: number[];
    x: number;
    y: number;
    tau: number | null;
}

export interface BackgroundPoint {
    x: number;
    y: number;
    label: number;
}

export interface SessionState extends SessionSummary {
    items: SessionItem[];
    background: BackgroundPoint[] | null;
    received: Record<string, Label>;
}

export interface ExportedPool {
    features: number[][];
    class_labels: number[];
    num_classes: number;
}

export interface SessionExport {
    session_id: string;
    class_pool: ExportedPool;
    semantic_pool: ExportedPool;
    id_pool: ExportedPool;
}

export interface ApiConfig {
    baseUrl: string; // single configuration value, e.g. "" (same origin) or "http://127.0.0.1:8675"
}

async function asJson<T>(resp: Response): Promise<T> {
    const body = await resp.json();
    if (!resp.ok) {
        const message = typeof body === "object" && body !== null && "error" in body
            ? String((body as { error: unknown }).error)
            : `HTTP ${resp.status}`;
        throw new Error(message);
    }
    return body as T;
}

export function listSessions(cfg: ApiConfig): Promise<SessionSummary[]> {
    return fetch(`${cfg.baseUrl}/api/sessions`).then((r) => asJson<SessionSummary[]>(r));
}

export function getSession(cfg: ApiConfig, id: string): Promise<SessionState> {
    return fetch(`${cfg.baseUrl}/api/sessions/${id}`).then((r) => asJson<SessionState>(r));
}

export function submitLabel(cfg: ApiConfig, id: string, sampleId: number,
                            label: Label): Promise<SessionSummary> {
    return fetch(`${cfg.baseUrl}/api/sessions/${id}/labels`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify([{ sample_id: sampleId, label }]),
    }).then((r) => asJson<SessionSummary>(r));
}

export function exportSession(cfg: ApiConfig, id: string,
                              partial = false): Promise<SessionExport> {
    const suffix = partial ? "?partial=1" : "";
    return fetch(`${cfg.baseUrl}/api/sessions/${id}/export${suffix}`)
        .then((r) => asJson<SessionExport>(r));
}

// Used by integration tests and scripted flows; the UI itself never creates sessions.
export function createSession(cfg: ApiConfig, body: {
    selection: { indices: number[]; strategy: string; k: number;
                 tau_b?: number | null; lambda?: number | null };
    wild_path: string;
    id_train_path?: string;
    session_id?: string;
}): Promise<SessionState> {
    return fetch(`${cfg.baseUrl}/api/sessions`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
    }).then((r) => asJson<SessionState>(r));
}

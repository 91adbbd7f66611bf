// Session view model, kept framework-free so it is testable without a DOM.
//
// Labels are buffered locally: picking a class only queues it (Undo pops the
// queue and nothing has been sent), and Confirm flushes the buffer one POST
// per item. A failed POST stops the flush, keeps the unsent remainder queued,
// and raises the retry banner; nothing is lost.

import { ApiConfig, Label, SessionState, submitLabel } from "./api.js";

export interface BufferedLabel {
    sample_id: number;
    label: Label;
}

export class SessionView {
    state: SessionState;
    buffer: BufferedLabel[] = [];
    retryBanner = false;

    constructor(state: SessionState) {
        this.state = state;
    }

    refresh(state: SessionState): void {
        // server state is truth; buffered-but-unsent picks survive a refresh
        this.state = state;
        const pending = new Set(this.pendingIds());
        this.buffer = this.buffer.filter((b) => pending.has(b.sample_id));
    }

    /** Item ids the server has not recorded a label for yet, in queue order. */
    pendingIds(): number[] {
        return this.state.items
            .map((it) => it.sample_id)
            .filter((id) => !(String(id) in this.state.received));
    }

    /** The item the annotator should look at now, or null when done. */
    current(): number | null {
        const queued = new Set(this.buffer.map((b) => b.sample_id));
        for (const id of this.pendingIds()) {
            if (!queued.has(id)) {
                return id;
            }
        }
        return null;
    }

    classNames(): string[] {
        if (this.state.class_names) {
            return this.state.class_names;
        }
        return Array.from({ length: this.state.num_classes }, (_, i) => `class ${i}`);
    }

    /** Keyboard mapping: "1".."C" pick a class, "0" picks BOTTOM. */
    labelForKey(key: string): Label | null {
        if (key === "0") {
            return "BOTTOM";
        }
        const n = Number(key);
        if (Number.isInteger(n) && n >= 1 && n <= this.state.num_classes) {
            return n - 1;
        }
        return null;
    }

    /** Queue a label for the current item; returns false when nothing is pending. */
    pick(label: Label): boolean {
        if (label !== "BOTTOM"
            && (!Number.isInteger(label) || label < 0 || label >= this.state.num_classes)) {
            throw new Error(`label out of range: ${label}`);
        }
        const id = this.current();
        if (id === null) {
            return false;
        }
        this.buffer.push({ sample_id: id, label });
        return true;
    }

    /** Drop the most recent unsent pick. */
    undo(): BufferedLabel | null {
        return this.buffer.pop() ?? null;
    }

    /** Flush the buffer, one POST per item. Stops at the first failure. */
    async confirm(cfg: ApiConfig): Promise<number> {
        let sent = 0;
        while (this.buffer.length > 0) {
            const next = this.buffer[0];
            try {
                await submitLabel(cfg, this.state.session_id, next.sample_id, next.label);
            } catch (err) {
                this.retryBanner = true;
                throw err;
            }
            this.buffer.shift();
            this.state.received[String(next.sample_id)] = next.label;
            this.state.labeled = Object.keys(this.state.received).length;
            sent += 1;
        }
        this.retryBanner = false;
        if (this.state.labeled === this.state.total) {
            this.state.status = "complete";
        }
        return sent;
    }

    progress(): { labeled: number; queued: number; total: number } {
        return {
            labeled: this.state.labeled,
            queued: this.buffer.length,
            total: this.state.total,
        };
    }

    exportReady(): boolean {
        return this.state.status === "complete";
    }
}

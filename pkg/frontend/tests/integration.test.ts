// End-to-end round trip against the live annotation service: generate a small
// dataset with the CLI, serve it, create a session over HTTP, label it through
// the view model exactly as the browser UI does, and check the export echoes
// the labels verbatim.

import assert from "node:assert/strict";
import { after, before, test } from "node:test";
import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { createSession, exportSession, getSession, listSessions, Label } from "../src/api.js";
import { SessionView } from "../src/state.js";

const PY = process.env.PYTHON ?? "python3";
const PORT = 18000 + (process.pid % 1000);
const cfg = { baseUrl: `http://127.0.0.1:${PORT}` };

let work: string;
let service: ChildProcess;

function run(cmd: string, args: string[]): Promise<void> {
    return new Promise((resolve, reject) => {
        const p = spawn(cmd, args, { stdio: ["ignore", "ignore", "pipe"] });
        let err = "";
        p.stderr?.on("data", (d) => { err += d; });
        p.on("exit", (code) => code === 0 ? resolve() : reject(new Error(`${cmd} ${args.join(" ")} -> ${code}\n${err}`)));
    });
}

async function waitForService(): Promise<void> {
    for (let i = 0; i < 100; i++) {
        try {
            const resp = await fetch(`${cfg.baseUrl}/health`);
            if (resp.ok) return;
        } catch {
            // not up yet
        }
        await new Promise((r) => setTimeout(r, 100));
    }
    throw new Error("annotation service never came up");
}

before(async () => {
    work = mkdtempSync(join(tmpdir(), "annotator-"));
    // a small experiment config: enough wild samples for a 6-item session
    const experiment = {
        seed: 0,
        synthetic: {
            num_classes: 3, dim: 4,
            id_means: [[2, 2, 0, 0], [2, -2, 0, 0], [-2, 0, 0, 0]],
            id_cov_scale: 0.4,
            covariate_transform: { kind: "rotation", angle: 0.9 },
            semantic_clusters: [{ mean: [0, 0, 3, 1], scale: 0.6 }],
            seed: 0,
            sizes: { id_train: 80, id_pool: 80, cov_pool: 80, sem_pool: 60,
                     id_test: 60, cov_test: 60, sem_test: 40 },
            class_names: ["ant", "bee", "cat"],
        },
        wild: { pi_c: 0.4, pi_s: 0.2, m: 50 },
        architecture: { hidden_sizes: [8] },
        erm: { epochs: 2, batch_size: 16, learning_rate: 0.05 },
        joint: { epochs: 2, batch_size: 16, learning_rate: 0.05 },
    };
    writeFileSync(join(work, "cfg.json"), JSON.stringify(experiment));
    await run(PY, ["-m", "wildlearn.cli", "gen", "--config", join(work, "cfg.json"),
                   "--out", join(work, "data")]);
    service = spawn(PY, ["-m", "wildlearn.cli", "serve",
                         "--store", join(work, "sessions"),
                         "--addr", `127.0.0.1:${PORT}`],
                    { stdio: ["ignore", "ignore", "inherit"] });
    await waitForService();
});

after(() => {
    service?.kill();
});

test("dashboard is empty before any session exists", async () => {
    const sessions = await listSessions(cfg);
    assert.deepEqual(sessions, []);
});

test("render -> label -> export round trip", async () => {
    const created = await createSession(cfg, {
        selection: { indices: [0, 1, 2, 3, 4, 5], strategy: "top_k", k: 6 },
        wild_path: join(work, "data", "wild.wds"),
        id_train_path: join(work, "data", "id_train.wds"),
        session_id: "ui-round-trip",
    });
    assert.equal(created.status, "open");
    assert.equal(created.total, 6);
    assert.deepEqual(created.class_names, ["ant", "bee", "cat"]);
    assert.ok(created.background && created.background.length === 80,
              "labeled ID context points ship with the session");

    // the session appears on the dashboard poll
    const sessions = await listSessions(cfg);
    assert.equal(sessions.length, 1);
    assert.equal(sessions[0].session_id, "ui-round-trip");

    const view = new SessionView(await getSession(cfg, "ui-round-trip"));
    // label items like a human: first by click, one by keyboard, one BOTTOM
    const plan: Label[] = [0, 1, "BOTTOM", 2, view.labelForKey("1") as Label,
                           view.labelForKey("0") as Label];
    for (const label of plan) {
        assert.ok(view.pick(label));
    }
    // undo then re-pick the last one: nothing is posted until confirm
    view.undo();
    view.pick("BOTTOM");
    assert.equal((await getSession(cfg, "ui-round-trip")).labeled, 0);

    const sent = await view.confirm(cfg);
    assert.equal(sent, 6);
    assert.equal(view.exportReady(), true);

    const state = await getSession(cfg, "ui-round-trip");
    assert.equal(state.status, "complete");

    // labels appear verbatim in the export, ordered by wild index:
    // picks were (0, 1, BOTTOM, 2, 0, BOTTOM) for samples 0..5
    const exported = await exportSession(cfg, "ui-round-trip");
    assert.equal(exported.class_pool.features.length, 4);
    assert.deepEqual(exported.class_pool.class_labels, [0, 1, 2, 0]);
    assert.equal(exported.semantic_pool.features.length, 2);
    assert.ok(exported.semantic_pool.class_labels.every((l) => l === -1));
});

test("export of an open session needs the partial flag", async () => {
    await createSession(cfg, {
        selection: { indices: [6, 7], strategy: "top_k", k: 2 },
        wild_path: join(work, "data", "wild.wds"),
        session_id: "ui-partial",
    });
    await assert.rejects(() => exportSession(cfg, "ui-partial"));
    const partial = await exportSession(cfg, "ui-partial", true);
    assert.equal(partial.class_pool.features.length, 0);
});

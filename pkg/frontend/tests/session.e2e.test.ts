// @vitest-environment happy-dom
//
// End-to-end labeling session against the real Python service: a scripted
// 5-pair session must leave exactly 5 records in the service log, matching
// the scripted clicks, and duplicate clicks must never double-POST.
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { LabelerApp } from "../src/app.js";

const PORT = 8000 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const SCRIPTED: Array<0 | 0.5 | 1> = [0, 0.5, 1, 1, 0];

let dir: string;
let service: ChildProcess | null = null;

function cli(...args: string[]): void {
  const proc = spawnSync("python3", ["-m", "preflab.cli", ...args], { encoding: "utf-8" });
  if (proc.status !== 0) {
    throw new Error(`preflab ${args[0]} failed: ${proc.stderr}\n${proc.stdout}`);
  }
}

let serviceStderr = "";

async function waitForService(): Promise<void> {
  for (let i = 0; i < 300; i++) {
    try {
      const resp = await fetch(`${BASE}/api/progress`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`label service did not come up; stderr: ${serviceStderr}`);
}

beforeAll(async () => {
  dir = mkdtempSync(join(tmpdir(), "preflab-e2e-"));
  cli("gen-data", "--env", "maze7", "--episodes", "10", "--episode-len", "40",
      "--seed", "0", "--out", join(dir, "episodes.jsonl"));
  cli("make-pairs", "--data", join(dir, "episodes.jsonl"), "--pairs", "5",
      "--segment-len", "16", "--seed", "0", "--out", join(dir, "pairs.jsonl"));
  service = spawn("python3", [
    "-m", "preflab.cli", "serve",
    "--port", String(PORT),
    "--pairs", join(dir, "pairs.jsonl"),
    "--out", join(dir, "labels.jsonl"),
    "--ui", "",
  ]);
  service.stderr?.on("data", (chunk) => {
    serviceStderr += String(chunk);
  });
  await waitForService();
}, 120_000);

afterAll(() => {
  service?.kill("SIGINT");
  rmSync(dir, { recursive: true, force: true });
});

describe("scripted 5-pair session", () => {
  it("records exactly the scripted labels, one POST per pair", async () => {
    document.body.innerHTML = '<div id="app"></div>';
    const app = new LabelerApp(document.getElementById("app") as HTMLElement, BASE);

    let posts = 0;
    const realFetch = globalThis.fetch;
    globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
      if (init?.method === "POST") posts += 1;
      return realFetch(input, init);
    }) as typeof fetch;

    try {
      await app.start();
      for (const label of SCRIPTED) {
        expect(app.phase).toBe("labeling");
        // Double-click simulation: the second call must be swallowed.
        const first = app.submit(label);
        const second = app.submit(label);
        await Promise.all([first, second]);
      }
    } finally {
      globalThis.fetch = realFetch;
    }

    expect(app.phase).toBe("done");
    expect(posts).toBe(SCRIPTED.length);
    expect(app.postsIssued).toBe(SCRIPTED.length);

    const records = readFileSync(join(dir, "labels.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    expect(records).toHaveLength(SCRIPTED.length);
    expect(records.map((r) => r.label)).toEqual(SCRIPTED);
    for (const rec of records) {
      expect(rec.source).toBe("human");
      expect(rec.kind).toBe("preference");
    }

    const progress = await (await fetch(`${BASE}/api/progress`)).json();
    expect(progress).toEqual({ labeled: 5, total: 5 });
  }, 60_000);
});

// @vitest-environment node
//
// End-to-end: a scripted console run against a live service process.
//
// The pool holds 100 samples of which 50 are duplicated points (50 unique
// vectors, each ingested twice). Labeling one of a twin pair collapses the
// twin's expected gain to zero, so the run must hit the stop banner well
// before exhausting the pool: the saving ratio is realized, not configured.
// Every annotation POST suffers one injected network failure first, proving
// the retry path never double-submits.
import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ConsoleSession } from "../src/state.js";

const PORT = 18431;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workDir = "";

function buildPoolScript(dir: string): string {
  // 50 unique unit vectors, each duplicated -> 100 samples
  return `
import numpy as np
from annogain.formats import EmbeddingFile

rng = np.random.default_rng(424242)
unique = rng.standard_normal((50, 16)).astype(np.float32)
unique /= np.linalg.norm(unique, axis=1, keepdims=True)
vectors = np.concatenate([unique, unique])
ids = [f"u{i}" for i in range(50)] + [f"d{i}" for i in range(50)]
EmbeddingFile(vectors=vectors, ids=ids).write(${JSON.stringify(dir)} + "/pool.bin")
`;
}

async function waitForService(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/v1/status`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "annogain-e2e-"));
  const script = join(workDir, "make_pool.py");
  writeFileSync(script, buildPoolScript(workDir));
  execFileSync("python3", [script]);
  const session = join(workDir, "session");
  execFileSync("annogain", [
    "init", "--session", session, "--dim", "16", "--classes", "4",
    "--index-mode", "exact", "--annotator-alpha", "0.95",
    "--batch-size", "8", "--seed", "7",
    "--class-names", "ant,bee,cow,doe",
  ]);
  execFileSync("annogain", [
    "ingest", "--session", session, "--embeddings", join(workDir, "pool.bin"),
  ]);
  server = spawn("annogain",
                 ["serve", "--session", session, "--port", String(PORT)],
                 { stdio: "ignore" });
  await waitForService();
});

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("console against a live service", () => {
  it("labels until the stop banner and never double-POSTs", async () => {
    const dispatched = new Map<string, number>(); // POSTs that reached the wire
    const failedOnce = new Set<string>();

    const flaky: typeof fetch = async (input, init) => {
      const url = String(input);
      if (init?.method === "POST" && url.includes("/v1/annotations")) {
        const body = JSON.parse(String(init.body)) as { sample_id: string };
        if (!failedOnce.has(body.sample_id)) {
          // forced network failure before the request leaves the client
          failedOnce.add(body.sample_id);
          throw new TypeError("injected connection reset");
        }
        dispatched.set(body.sample_id, (dispatched.get(body.sample_id) ?? 0) + 1);
      }
      return fetch(input, init);
    };

    const api = new ApiClient({
      baseUrl: BASE,
      fetchFn: flaky,
      retryDelaysMs: [5, 10, 20],
    });
    const session = new ConsoleSession(api, { batchSize: 8 });

    // scripted annotator: class by stable hash of the sample id
    await session.run((item) => item.sample_id.charCodeAt(1) % 4, 500);

    expect(session.stopped).toBe(true);
    const banner = session.banner();
    expect(banner).not.toBeNull();
    expect(banner!.total).toBe(100);
    expect(banner!.annotated).toBeGreaterThan(0);
    expect(banner!.fraction).toBeLessThan(1.0); // saving ratio realized
    expect(banner!.maxGain).toBeLessThanOrEqual(0.05 * 0.95 + 1e-9);

    // every annotation retried once at the network level, reached the wire once
    expect(failedOnce.size).toBeGreaterThan(0);
    for (const [id, count] of dispatched) {
      expect(count, `sample ${id} hit the wire ${count} times`).toBe(1);
    }

    // the service agrees: annotated == distinct successful POSTs, < pool size
    const status = await api.status();
    expect(status.stats.counts.annotated).toBe(dispatched.size);
    expect(status.stats.counts.annotated).toBeLessThan(100);
    expect(status.stats.annotation_fraction).toBeLessThan(1.0);
    expect(status.stop.stop).toBe(true);
  });

  it("a reloaded console loses nothing: leased work is re-requested", async () => {
    // fresh session object == page reload; the pool is already quiesced,
    // so the new console lands directly on the stop banner.
    const api = new ApiClient({ baseUrl: BASE });
    const reloaded = new ConsoleSession(api, { batchSize: 4 });
    await reloaded.run(() => 0, 50);
    expect(reloaded.stopped).toBe(true);
    const banner = reloaded.banner()!;
    expect(banner.fraction).toBeLessThan(1.0);
    expect(banner.annotated).toBeGreaterThan(0);
  });
});

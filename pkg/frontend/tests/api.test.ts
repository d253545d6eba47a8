// @vitest-environment node
import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function clientWith(fetchFn: typeof fetch, extra: Partial<{ token: string }> = {}) {
  return new ApiClient({
    baseUrl: "http://svc",
    fetchFn,
    retryDelaysMs: [1, 1, 1],
    sleepFn: async () => {},
    ...extra,
  });
}

describe("ApiClient", () => {
  it("retries network failures with backoff, then succeeds", async () => {
    let calls = 0;
    const flaky: typeof fetch = async () => {
      calls++;
      if (calls <= 2) throw new TypeError("connection refused");
      return jsonResponse(200, { items: [], stop: { stop: false } });
    };
    const api = clientWith(flaky);
    const result = await api.nextBatch(3);
    expect(calls).toBe(3);
    expect(result.kind).toBe("items");
  });

  it("gives up after the backoff schedule is exhausted", async () => {
    const dead: typeof fetch = async () => {
      throw new TypeError("no route to host");
    };
    const api = clientWith(dead);
    await expect(api.status()).rejects.toThrow("no route");
  });

  it("does not retry HTTP error statuses", async () => {
    let calls = 0;
    const badRequest: typeof fetch = async () => {
      calls++;
      return jsonResponse(400, { error: "bad size" });
    };
    const api = clientWith(badRequest);
    await expect(api.nextBatch(0)).rejects.toThrow(ApiError);
    expect(calls).toBe(1);
  });

  it("maps next-batch 409 to a stopped result", async () => {
    const stopped: typeof fetch = async () =>
      jsonResponse(409, { stop: true, max_gain: 0, total_gain: 0,
                          positive_gain_count: 0 });
    const api = clientWith(stopped);
    const result = await api.nextBatch(4);
    expect(result.kind).toBe("stopped");
    if (result.kind === "stopped") {
      expect(result.stop.max_gain).toBe(0);
    }
  });

  it("maps annotation 409 to already_annotated", async () => {
    const conflict: typeof fetch = async () =>
      jsonResponse(409, { error: "already annotated" });
    const api = clientWith(conflict);
    const ack = await api.postAnnotation("s1", 0);
    expect(ack.kind).toBe("already_annotated");
  });

  it("sends the shared token header when configured", async () => {
    let seen: string | null = null;
    const spy: typeof fetch = async (_url, init) => {
      seen = new Headers(init?.headers).get("x-api-token");
      return jsonResponse(200, {
        stats: { total: 0, counts: { unlabeled: 0, selected: 0, annotated: 0, tombstoned: 0 },
                 annotation_fraction: 0, gain_histogram: [], event_count: 0 },
        stop: { stop: false, max_gain: 0, total_gain: 0, positive_gain_count: 0 },
        class_names: [],
      });
    };
    const api = clientWith(spy, { token: "sekrit" });
    await api.status();
    expect(seen).toBe("sekrit");
  });
});

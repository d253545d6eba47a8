/**
 * Typed client for the annotation service.
 *
 * Network failures (fetch rejections: the request may never have reached the
 * server) retry with exponential backoff. HTTP error statuses never retry:
 * once a response exists, the server has spoken, and re-POSTing an
 * acknowledged annotation would double-submit. A 409 on POST means the sample
 * is already annotated and is surfaced as a normal outcome, not an error.
 */

import type {
  AnnotationAck,
  NextBatchResult,
  StatusResponse,
  StopInfo,
} from "./types.js";

export interface ApiOptions {
  baseUrl: string;
  token?: string;
  /** Injection point for tests; defaults to the global fetch. */
  fetchFn?: typeof fetch;
  /** Backoff schedule for network-level retries, in milliseconds. */
  retryDelaysMs?: number[];
  /** Injection point for tests; defaults to setTimeout-based sleep. */
  sleepFn?: (ms: number) => Promise<void>;
}

export class ApiError extends Error {
  readonly status: number;
  readonly body: unknown;

  constructor(status: number, body: unknown, message?: string) {
    super(message ?? `service replied ${status}`);
    this.status = status;
    this.body = body;
  }
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchFn: typeof fetch;
  private readonly retryDelaysMs: number[];
  private readonly sleepFn: (ms: number) => Promise<void>;

  constructor(opts: ApiOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/+$/, "");
    this.token = opts.token;
    this.fetchFn = opts.fetchFn ?? fetch;
    this.retryDelaysMs = opts.retryDelaysMs ?? [250, 500, 1000, 2000];
    this.sleepFn = opts.sleepFn ?? defaultSleep;
  }

  private headers(json: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["content-type"] = "application/json";
    if (this.token) h["x-api-token"] = this.token;
    return h;
  }

  /** One logical request: retries only when fetch itself rejects. */
  private async request(path: string, init: RequestInit): Promise<Response> {
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.retryDelaysMs.length; attempt++) {
      try {
        return await this.fetchFn(`${this.baseUrl}${path}`, init);
      } catch (err) {
        lastError = err;
        if (attempt < this.retryDelaysMs.length) {
          await this.sleepFn(this.retryDelaysMs[attempt]);
        }
      }
    }
    throw lastError instanceof Error
      ? lastError
      : new Error(`network failure for ${path}`);
  }

  async nextBatch(size: number): Promise<NextBatchResult> {
    const res = await this.request(`/v1/next-batch?size=${size}`, {
      method: "GET",
      headers: this.headers(false),
    });
    if (res.status === 409) {
      return { kind: "stopped", stop: (await res.json()) as StopInfo };
    }
    if (!res.ok) {
      throw new ApiError(res.status, await safeJson(res));
    }
    const body = await res.json();
    return { kind: "items", items: body.items, stop: body.stop };
  }

  async postAnnotation(sampleId: string, label: number): Promise<AnnotationAck> {
    const res = await this.request("/v1/annotations", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ sample_id: sampleId, label }),
    });
    if (res.status === 409) {
      // someone (possibly our own lost-response retry) already labeled it
      await safeJson(res);
      return {
        kind: "already_annotated",
        sample_id: sampleId,
        neighbors_rechecked: 0,
        stats: null,
        stop: null,
      };
    }
    if (!res.ok) {
      throw new ApiError(res.status, await safeJson(res));
    }
    const body = await res.json();
    return {
      kind: "ok",
      sample_id: sampleId,
      neighbors_rechecked: body.neighbors_rechecked,
      stats: body.stats,
      stop: body.stop,
    };
  }

  async status(): Promise<StatusResponse> {
    const res = await this.request("/v1/status", {
      method: "GET",
      headers: this.headers(false),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await safeJson(res));
    }
    return (await res.json()) as StatusResponse;
  }
}

async function safeJson(res: Response): Promise<unknown> {
  try {
    return await res.json();
  } catch {
    return null;
  }
}

/**
 * Console session state machine, UI-free.
 *
 * Holds the local lease queue in service issuance order, guarantees exactly
 * one submission per displayed item (an item enters `submitted` before its
 * POST goes out and never leaves), skips expired leases, and latches the
 * stop banner when the service reports that the remaining gain is spent.
 */

import type { ApiClient } from "./api.js";
import type { StatusResponse, StopInfo, WorkItem } from "./types.js";

interface QueuedItem {
  item: WorkItem;
  /** Local receipt time; the lease deadline counts down from here. */
  receivedAt: number;
}

export interface BannerInfo {
  annotated: number;
  total: number;
  fraction: number;
  maxGain: number;
}

export interface ConsoleOptions {
  batchSize?: number;
  /** Millisecond clock, injectable for tests. */
  clock?: () => number;
}

export class ConsoleSession {
  readonly api: ApiClient;
  readonly batchSize: number;
  private readonly clock: () => number;

  private queue: QueuedItem[] = [];
  private submitted = new Set<string>();
  stopped = false;
  stopInfo: StopInfo | null = null;
  lastStatus: StatusResponse | null = null;
  labeledCount = 0;

  constructor(api: ApiClient, opts: ConsoleOptions = {}) {
    this.api = api;
    this.batchSize = opts.batchSize ?? 8;
    this.clock = opts.clock ?? (() => Date.now());
  }

  classNames(): string[] {
    const head = this.queue[0];
    if (head) return head.item.class_names;
    return this.lastStatus?.class_names ?? [];
  }

  /** The item currently on screen, with expired leases pruned away. */
  current(): WorkItem | null {
    this.pruneExpired();
    return this.queue.length ? this.queue[0].item : null;
  }

  queueLength(): number {
    this.pruneExpired();
    return this.queue.length;
  }

  private pruneExpired(): void {
    const now = this.clock();
    this.queue = this.queue.filter(
      (q) => now - q.receivedAt < q.item.lease_seconds_remaining * 1000,
    );
  }

  private leaseExpired(q: QueuedItem): boolean {
    return this.clock() - q.receivedAt >= q.item.lease_seconds_remaining * 1000;
  }

  /**
   * Top the local queue back up from the service. A 409 latches the stop
   * banner; items we already submitted (lost-response retries) are dropped.
   */
  async refill(): Promise<void> {
    if (this.stopped) return;
    this.pruneExpired();
    if (this.queue.length >= this.batchSize) return;
    const result = await this.api.nextBatch(this.batchSize);
    if (result.kind === "stopped") {
      this.stopped = true;
      this.stopInfo = result.stop;
      return;
    }
    this.stopInfo = result.stop;
    const now = this.clock();
    const queued = new Set(this.queue.map((q) => q.item.sample_id));
    for (const item of result.items) {
      if (queued.has(item.sample_id) || this.submitted.has(item.sample_id)) {
        continue;
      }
      this.queue.push({ item, receivedAt: now });
      queued.add(item.sample_id);
    }
  }

  /**
   * Label the current item. Exactly one submission per item: once an id is
   * marked submitted it can never be posted again from this console, no
   * matter how the network behaves afterwards.
   */
  async labelCurrent(classIndex: number): Promise<void> {
    const head = this.queue[0];
    if (!head) return;
    if (this.leaseExpired(head)) {
      // expired on screen: skip it; a later refill re-requests it
      this.queue.shift();
      return;
    }
    const item = head.item;
    if (classIndex < 0 || classIndex >= item.class_names.length) {
      throw new RangeError(`class index ${classIndex} out of range`);
    }
    if (this.submitted.has(item.sample_id)) {
      this.queue.shift();
      return;
    }
    this.submitted.add(item.sample_id);
    const ack = await this.api.postAnnotation(item.sample_id, classIndex);
    this.queue.shift();
    this.labeledCount += 1;
    if (ack.kind === "ok" && ack.stats && ack.stop) {
      this.lastStatus = {
        stats: ack.stats,
        stop: ack.stop,
        class_names: item.class_names,
      };
    }
  }

  async pollStatus(): Promise<StatusResponse> {
    const status = await this.api.status();
    this.lastStatus = status;
    if (status.stop.stop && this.queueLength() === 0) {
      this.stopped = true;
      this.stopInfo = status.stop;
    }
    return status;
  }

  /** Saving-ratio banner contents once the engine says stop. */
  banner(): BannerInfo | null {
    if (!this.stopped) return null;
    const stats = this.lastStatus?.stats;
    const annotated = stats?.counts.annotated ?? this.labeledCount;
    const total = stats?.total ?? 0;
    return {
      annotated,
      total,
      fraction: total > 0 ? annotated / total : 0,
      maxGain: this.stopInfo?.max_gain ?? 0,
    };
  }

  /** Drive the whole labeling loop with a scripted or human-backed chooser. */
  async run(
    choose: (item: WorkItem) => number | Promise<number>,
    maxSteps = 10_000,
  ): Promise<void> {
    for (let step = 0; step < maxSteps && !this.stopped; step++) {
      if (this.queueLength() === 0) {
        await this.refill();
        if (this.stopped || this.queueLength() === 0) break;
      }
      const item = this.current();
      if (!item) continue;
      await this.labelCurrent(await choose(item));
    }
    if (this.stopped || this.queueLength() === 0) {
      await this.pollStatus();
    }
  }
}

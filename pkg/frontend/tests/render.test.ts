// @vitest-environment happy-dom
import { beforeEach, describe, expect, it } from "vitest";

import {
  looksLikeImage,
  renderBanner,
  renderClassButtons,
  renderCounters,
  renderHistogram,
  renderWorkItem,
} from "../src/render.js";
import type { StatusResponse, WorkItem } from "../src/types.js";

function item(overrides: Partial<WorkItem> = {}): WorkItem {
  return {
    sample_id: "s1",
    payload_uri: "http://host/img.png",
    predicted_class: 1,
    predicted_class_name: "bee",
    alpha: 0.42,
    gain: 0.53,
    class_names: ["ant", "bee", "cow"],
    lease_seconds_remaining: 600,
    ...overrides,
  };
}

function status(): StatusResponse {
  return {
    stats: {
      total: 100,
      counts: { unlabeled: 80, selected: 5, annotated: 15, tombstoned: 0 },
      annotation_fraction: 0.15,
      gain_histogram: Array.from({ length: 32 }, (_, i) => i),
      event_count: 20,
    },
    stop: { stop: false, max_gain: 0.7, total_gain: 10, positive_gain_count: 80 },
    class_names: ["ant", "bee", "cow"],
  };
}

let host: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<div id='host'></div>";
  host = document.getElementById("host")!;
});

describe("looksLikeImage", () => {
  it("accepts common image urls and rejects the rest", () => {
    expect(looksLikeImage("http://x/a.png")).toBe(true);
    expect(looksLikeImage("https://x/a.jpeg?w=100")).toBe(true);
    expect(looksLikeImage("/local/b.webp")).toBe(true);
    expect(looksLikeImage("s3-object-key")).toBe(false);
    expect(looksLikeImage(null)).toBe(false);
  });
});

describe("renderWorkItem", () => {
  it("renders an <img> for image payloads", () => {
    renderWorkItem(document, host, item());
    const img = host.querySelector("img.payload") as HTMLImageElement;
    expect(img).toBeTruthy();
    expect(img.src).toContain("img.png");
    expect(host.textContent).toContain("bee");
  });

  it("renders a metadata card otherwise", () => {
    renderWorkItem(document, host, item({ payload_uri: "opaque-token" }));
    expect(host.querySelector("img")).toBeNull();
    expect(host.querySelector(".metadata-card")!.textContent).toContain("opaque-token");
  });

  it("renders an empty notice without an item", () => {
    renderWorkItem(document, host, null);
    expect(host.querySelector(".empty")).toBeTruthy();
  });
});

describe("renderClassButtons", () => {
  it("shows shortcuts and forwards clicks", () => {
    const picks: number[] = [];
    renderClassButtons(document, host, ["ant", "bee", "cow"], (i) => picks.push(i));
    const buttons = host.querySelectorAll("button");
    expect(buttons.length).toBe(3);
    expect(buttons[0].textContent).toBe("ant [1]");
    expect(buttons[2].textContent).toBe("cow [3]");
    (buttons[1] as HTMLButtonElement).click();
    expect(picks).toEqual([1]);
  });
});

describe("dashboard widgets", () => {
  it("renders counters from the status payload", () => {
    renderCounters(document, host, status());
    expect(host.textContent).toContain("annotated");
    expect(host.textContent).toContain("15");
    expect(host.textContent).toContain("15.0%");
  });

  it("renders 32 histogram bars scaled to the peak", () => {
    renderHistogram(document, host, status().stats.gain_histogram);
    const bars = host.querySelectorAll(".bar");
    expect(bars.length).toBe(32);
    expect((bars[31] as HTMLElement).style.height).toBe("100%");
  });

  it("toggles the stop banner", () => {
    renderBanner(document, host, null);
    expect(host.classList.contains("visible")).toBe(false);
    renderBanner(document, host,
                 { annotated: 53, total: 100, fraction: 0.53, maxGain: 0.01 });
    expect(host.classList.contains("visible")).toBe(true);
    expect(host.textContent).toContain("53.0%");
  });
});

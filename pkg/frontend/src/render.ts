/**
 * DOM rendering: pure functions of (document, state slices) so they run
 * identically under happy-dom in tests and in a real browser.
 */

import { classKey } from "./keymap.js";
import type { BannerInfo } from "./state.js";
import type { StatusResponse, WorkItem } from "./types.js";

const IMAGE_RE = /\.(png|jpe?g|gif|webp|bmp|svg)(\?.*)?$/i;

export function looksLikeImage(uri: string | null): boolean {
  if (!uri) return false;
  return IMAGE_RE.test(uri) && /^(https?:|file:|data:|\/|\.)/.test(uri);
}

export function renderWorkItem(doc: Document, host: HTMLElement,
                               item: WorkItem | null): void {
  host.replaceChildren();
  if (!item) {
    const empty = doc.createElement("p");
    empty.className = "empty";
    empty.textContent = "No work item — waiting for the queue.";
    host.appendChild(empty);
    return;
  }
  if (looksLikeImage(item.payload_uri)) {
    const img = doc.createElement("img");
    img.src = item.payload_uri as string;
    img.alt = item.sample_id;
    img.className = "payload";
    host.appendChild(img);
  } else {
    const card = doc.createElement("dl");
    card.className = "metadata-card";
    const rows: Array<[string, string]> = [
      ["sample", item.sample_id],
      ["payload", item.payload_uri ?? "(none)"],
    ];
    for (const [k, v] of rows) {
      const dt = doc.createElement("dt");
      dt.textContent = k;
      const dd = doc.createElement("dd");
      dd.textContent = v;
      card.append(dt, dd);
    }
    host.appendChild(card);
  }
  const hint = doc.createElement("p");
  hint.className = "prediction-hint";
  hint.textContent =
    `current guess: ${item.predicted_class_name} ` +
    `(α ${item.alpha.toFixed(3)}, gain ${item.gain.toFixed(3)})`;
  host.appendChild(hint);
}

export function renderClassButtons(doc: Document, host: HTMLElement,
                                   classNames: string[],
                                   onPick: (index: number) => void): void {
  host.replaceChildren();
  classNames.forEach((name, i) => {
    const btn = doc.createElement("button");
    btn.type = "button";
    btn.dataset.classIndex = String(i);
    const key = classKey(i);
    btn.textContent = key ? `${name} [${key}]` : name;
    btn.addEventListener("click", () => onPick(i));
    host.appendChild(btn);
  });
}

export function renderCounters(doc: Document, host: HTMLElement,
                               status: StatusResponse | null): void {
  host.replaceChildren();
  if (!status) return;
  const { counts } = status.stats;
  const entries: Array<[string, string]> = [
    ["annotated", String(counts.annotated)],
    ["selected", String(counts.selected)],
    ["unlabeled", String(counts.unlabeled)],
    ["budget used", `${(status.stats.annotation_fraction * 100).toFixed(1)}%`],
    ["max gain", status.stop.max_gain.toFixed(4)],
  ];
  for (const [label, value] of entries) {
    const box = doc.createElement("div");
    box.className = "counter";
    const v = doc.createElement("strong");
    v.textContent = value;
    const l = doc.createElement("span");
    l.textContent = label;
    box.append(v, l);
    host.appendChild(box);
  }
}

export function renderHistogram(doc: Document, host: HTMLElement,
                                bins: number[]): void {
  host.replaceChildren();
  const peak = Math.max(1, ...bins);
  bins.forEach((count, i) => {
    const bar = doc.createElement("div");
    bar.className = "bar";
    bar.style.height = `${Math.round((count / peak) * 100)}%`;
    bar.title = `gain ${(i / bins.length).toFixed(3)}–` +
      `${((i + 1) / bins.length).toFixed(3)}: ${count}`;
    host.appendChild(bar);
  });
}

export function renderBanner(doc: Document, host: HTMLElement,
                             banner: BannerInfo | null): void {
  host.replaceChildren();
  host.classList.toggle("visible", banner !== null);
  if (!banner) return;
  const h = doc.createElement("h2");
  h.textContent = "Saving ratio reached — annotation can stop";
  const p = doc.createElement("p");
  p.textContent =
    `${banner.annotated} of ${banner.total} samples annotated ` +
    `(${(banner.fraction * 100).toFixed(1)}%); ` +
    `best remaining gain ${banner.maxGain.toFixed(4)}.`;
  host.append(h, p);
}

/**
 * DOM builders. Pure functions from state to elements; the controller
 * re-renders a container by replacing its children.
 *
 * The compare grid is the blind surface: nothing engine-related may end
 * up in any node, attribute, or text it produces before submission.
 * Engine names appear only in the post-submit reveal, whose data comes
 * from the service's submit response.
 */

import type { EngineMetrics, SearchResult } from "./api.js";
import type { SessionView } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBanner(message: string): HTMLElement {
  const banner = el("div", "banner", message);
  banner.setAttribute("role", "alert");
  return banner;
}

/** Ranked search results: rank badge, screenshot, score to 3 decimals. */
export function renderSearchGrid(results: SearchResult[]): HTMLElement {
  const grid = el("ol", "grid search-grid");
  for (const [i, r] of results.entries()) {
    const tile = el("li", "tile");
    const img = el("img");
    img.src = r.image_url;
    img.alt = `screenshot ${r.id}`;
    img.loading = "lazy";
    const meta = el("div", "tile-meta");
    meta.append(
      el("span", "rank", `#${i + 1}`),
      el("span", "result-id", r.id),
      el("span", "score", r.score.toFixed(3)),
    );
    tile.append(img, meta);
    grid.append(tile);
  }
  return grid;
}

/**
 * Blind selection grid. Tiles are toggled by click or by space when
 * focused; every duplicate screenshot stays its own tile because slots,
 * not screenshots, are the unit of judgment.
 */
export function renderCompareGrid(
  view: SessionView,
  onToggle: (slotId: string) => void,
): HTMLElement {
  const grid = el("div", "grid compare-grid");
  grid.setAttribute("role", "group");
  grid.setAttribute("aria-label", `candidates for "${view.query}"`);
  for (const slot of view.slots) {
    const tile = el("div", slot.selected ? "tile selectable selected" : "tile selectable");
    tile.setAttribute("role", "checkbox");
    tile.setAttribute("aria-checked", String(slot.selected));
    tile.setAttribute("aria-label", `candidate ${slot.slotId}`);
    tile.dataset.slotId = slot.slotId;
    if (!view.submitted) {
      tile.tabIndex = 0;
      tile.addEventListener("click", () => onToggle(slot.slotId));
      tile.addEventListener("keydown", (ev: KeyboardEvent) => {
        if (ev.key === " " || ev.key === "Spacebar") {
          ev.preventDefault();
          onToggle(slot.slotId);
        }
      });
    } else {
      tile.setAttribute("aria-disabled", "true");
    }
    const img = el("img");
    img.src = slot.imageUrl;
    img.alt = `screenshot ${slot.screenshotId}`;
    img.loading = "lazy";
    const check = el("span", "checkmark", slot.selected ? "✓" : "");
    tile.append(img, check);
    grid.append(tile);
  }
  return grid;
}

function metricKs(metrics: Record<string, EngineMetrics>): string[] {
  const first = Object.values(metrics)[0];
  if (!first) return [];
  return Object.keys(first.p_at).sort((a, b) => Number(a) - Number(b));
}

/** Post-submit reveal: per-engine metric table from the service response. */
export function renderReveal(metrics: Record<string, EngineMetrics>): HTMLElement {
  const panel = el("section", "reveal");
  panel.append(el("h3", undefined, "Session metrics by engine"));
  const table = el("table", "metrics-table");
  const ks = metricKs(metrics);
  const head = el("tr");
  head.append(el("th", undefined, "engine"), el("th", undefined, "MRR"));
  for (const k of ks) head.append(el("th", undefined, `P@${k}`));
  for (const k of ks) head.append(el("th", undefined, `HIT@${k}`));
  const thead = el("thead");
  thead.append(head);
  table.append(thead);
  const body = el("tbody");
  for (const [engine, m] of Object.entries(metrics).sort()) {
    const row = el("tr");
    row.append(el("td", "engine-name", engine), el("td", undefined, m.mrr.toFixed(3)));
    for (const k of ks) row.append(el("td", undefined, (m.p_at[k] ?? 0).toFixed(3)));
    for (const k of ks) row.append(el("td", undefined, (m.hit_at[k] ?? 0).toFixed(3)));
    body.append(row);
  }
  table.append(body);
  panel.append(table);
  return panel;
}

/**
 * Controller: wires inputs, the service client, and the render functions.
 *
 * One active comparison session per page; the UI is optimistic (toggles
 * render instantly) and reconciles with the server only on submit.
 */

import { ApiError, ServiceClient } from "./api.js";
import {
  canSubmit,
  markSubmitted,
  selectedSlotIds,
  sessionFromCompare,
  toggleSlot,
  type SessionView,
} from "./session.js";
import { renderBanner, renderCompareGrid, renderReveal, renderSearchGrid } from "./render.js";

function field(label: string, input: HTMLElement): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "field";
  const span = document.createElement("span");
  span.textContent = label;
  wrap.append(span, input);
  return wrap;
}

function textInput(placeholder: string, value = ""): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = placeholder;
  input.value = value;
  return input;
}

export class App {
  private session: SessionView | null = null;
  private submitInFlight = false;
  private readonly history: string[] = [];

  private readonly searchBanner = document.createElement("div");
  private readonly searchResults = document.createElement("div");
  private readonly historyList = document.createElement("ul");
  private readonly compareBanner = document.createElement("div");
  private readonly compareGrid = document.createElement("div");
  private readonly revealPanel = document.createElement("div");

  private readonly searchQuery = textInput("query, e.g. sleep tracking");
  private readonly searchEngine = textInput("engine id", "vec");
  private readonly searchButton = document.createElement("button");

  private readonly compareQuery = textInput("query for all engines");
  private readonly compareEngines = textInput("engine ids, comma-separated");
  private readonly evaluatorId = textInput("evaluator id");
  private readonly startButton = document.createElement("button");
  private readonly submitButton = document.createElement("button");

  constructor(
    root: HTMLElement,
    private readonly client: ServiceClient,
    private readonly k: number = 10,
  ) {
    root.append(this.buildSearchSection(), this.buildCompareSection());
    this.refreshButtons();
  }

  private buildSearchSection(): HTMLElement {
    const section = document.createElement("section");
    section.className = "panel";
    const title = document.createElement("h2");
    title.textContent = "Search";
    this.searchButton.textContent = "Search";
    this.searchButton.addEventListener("click", () => void this.runSearch());
    this.searchQuery.addEventListener("input", () => this.refreshButtons());
    this.searchQuery.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter") void this.runSearch();
    });
    this.historyList.className = "history";
    section.append(
      title,
      field("Query", this.searchQuery),
      field("Engine", this.searchEngine),
      this.searchButton,
      this.searchBanner,
      this.searchResults,
      this.historyList,
    );
    return section;
  }

  private buildCompareSection(): HTMLElement {
    const section = document.createElement("section");
    section.className = "panel";
    const title = document.createElement("h2");
    title.textContent = "Blind comparison";
    this.startButton.textContent = "Start session";
    this.startButton.addEventListener("click", () => void this.startSession());
    this.submitButton.textContent = "Submit selections";
    this.submitButton.addEventListener("click", () => void this.submitSession());
    this.compareQuery.addEventListener("input", () => this.refreshButtons());
    this.compareEngines.addEventListener("input", () => this.refreshButtons());
    section.append(
      title,
      field("Query", this.compareQuery),
      field("Engines", this.compareEngines),
      field("Evaluator", this.evaluatorId),
      this.startButton,
      this.compareBanner,
      this.compareGrid,
      this.submitButton,
      this.revealPanel,
    );
    return section;
  }

  private refreshButtons(): void {
    this.searchButton.disabled = this.searchQuery.value.trim() === "";
    this.startButton.disabled =
      this.compareQuery.value.trim() === "" || this.parseEngines().length < 2;
    this.submitButton.disabled =
      this.session === null || !canSubmit(this.session) || this.submitInFlight;
  }

  private parseEngines(): string[] {
    return this.compareEngines.value
      .split(",")
      .map((e) => e.trim())
      .filter((e) => e !== "");
  }

  private showError(target: HTMLElement, err: unknown): void {
    const message =
      err instanceof ApiError
        ? `service error: ${err.message}`
        : "service unreachable";
    target.replaceChildren(renderBanner(message));
  }

  private pushHistory(query: string): void {
    if (this.history[this.history.length - 1] === query) return;
    this.history.push(query);
    this.historyList.replaceChildren(
      ...this.history.map((q) => {
        const item = document.createElement("li");
        const link = document.createElement("button");
        link.className = "history-entry";
        link.textContent = q;
        link.addEventListener("click", () => {
          this.searchQuery.value = q;
          this.refreshButtons();
          void this.runSearch();
        });
        item.append(link);
        return item;
      }),
    );
  }

  async runSearch(): Promise<void> {
    const query = this.searchQuery.value.trim();
    if (query === "") return;
    this.searchBanner.replaceChildren();
    try {
      const res = await this.client.search(query, this.searchEngine.value.trim(), this.k);
      this.searchResults.replaceChildren(renderSearchGrid(res.results));
      this.pushHistory(query);
    } catch (err) {
      this.showError(this.searchBanner, err);
    }
  }

  async startSession(): Promise<void> {
    const query = this.compareQuery.value.trim();
    const engines = this.parseEngines();
    if (query === "" || engines.length < 2) return;
    this.compareBanner.replaceChildren();
    this.revealPanel.replaceChildren();
    try {
      const res = await this.client.compare(query, engines, this.k);
      this.session = sessionFromCompare(res);
      this.renderSession();
    } catch (err) {
      this.showError(this.compareBanner, err);
    }
    this.refreshButtons();
  }

  private renderSession(): void {
    if (this.session === null) return;
    this.compareGrid.replaceChildren(
      renderCompareGrid(this.session, (slotId) => {
        if (this.session === null) return;
        this.session = toggleSlot(this.session, slotId);
        this.renderSession();
      }),
    );
    this.refreshButtons();
  }

  async submitSession(): Promise<void> {
    if (this.session === null || !canSubmit(this.session) || this.submitInFlight) return;
    this.submitInFlight = true;
    this.refreshButtons();
    try {
      const res = await this.client.submit(
        this.session.sessionId,
        selectedSlotIds(this.session),
        this.evaluatorId.value.trim() || "anonymous",
      );
      this.session = markSubmitted(this.session);
      this.renderSession();
      this.revealPanel.replaceChildren(renderReveal(res.per_engine_metrics));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone already judged this session under this evaluator id
        this.session = markSubmitted(this.session);
        this.renderSession();
      }
      this.showError(this.compareBanner, err);
    } finally {
      this.submitInFlight = false;
      this.refreshButtons();
    }
  }

  /** Test hook: current session state. */
  get sessionView(): SessionView | null {
    return this.session;
  }
}

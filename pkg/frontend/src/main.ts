import { ApiClient } from "./api.js";
import { DraftStore, Draft, draftFromJudgment, emptyDraft } from "./state.js";
import { renderInstance, renderStatsPanel } from "./render.js";
import type { Candidate, InstancePage } from "./types.js";

export class ReviewApp {
  readonly api: ApiClient;
  readonly drafts = new DraftStore();
  private page: InstancePage | null = null;
  private cursorStack: (string | null)[] = [];
  private root: HTMLElement;
  private statusLine: HTMLElement | null = null;

  constructor(root: HTMLElement, api: ApiClient = new ApiClient()) {
    this.root = root;
    this.api = api;
  }

  reviewerName(): string {
    const input = this.root.querySelector<HTMLInputElement>("#reviewer-name");
    return input ? input.value.trim() : "";
  }

  async start(): Promise<void> {
    this.renderShell();
    await this.loadPage(null);
    await this.refreshStats();
  }

  private renderShell(): void {
    this.root.textContent = "";
    const header = document.createElement("header");
    const title = document.createElement("h1");
    title.textContent = "novel label review";
    header.append(title);
    const nameLabel = document.createElement("label");
    nameLabel.textContent = "reviewer: ";
    const nameInput = document.createElement("input");
    nameInput.id = "reviewer-name";
    nameInput.placeholder = "your name";
    nameLabel.append(nameInput);
    header.append(nameLabel);
    this.statusLine = document.createElement("p");
    this.statusLine.className = "status-line";
    header.append(this.statusLine);
    this.root.append(header);
    this.root.append(this.makeSection("stats"));
    this.root.append(this.makeSection("instances"));
    this.root.append(this.makeSection("pager"));
  }

  private makeSection(id: string): HTMLElement {
    const section = document.createElement("div");
    section.id = id;
    return section;
  }

  private status(message: string): void {
    if (this.statusLine) this.statusLine.textContent = message;
  }

  async loadPage(cursor: string | null): Promise<void> {
    const container = this.root.querySelector<HTMLElement>("#instances");
    if (!container) return;
    try {
      this.page = await this.api.fetchInstances(cursor, 10);
    } catch (err) {
      container.textContent = "";
      const retry = document.createElement("button");
      retry.className = "retry-button";
      retry.textContent = `failed to load (${(err as Error).message}) — retry`;
      retry.addEventListener("click", () => void this.loadPage(cursor));
      container.append(retry);
      return;
    }
    if (this.cursorStack[this.cursorStack.length - 1] !== cursor) {
      this.cursorStack.push(cursor);
    }
    for (const instance of this.page.instances) {
      for (const candidate of instance.candidates) {
        this.drafts.seedFromCandidate(instance.id, candidate, this.reviewerName() || "");
      }
    }
    this.renderInstances();
    this.renderPager();
  }

  private renderInstances(): void {
    const container = this.root.querySelector<HTMLElement>("#instances");
    if (!container || !this.page) return;
    container.textContent = "";
    for (const instance of this.page.instances) {
      container.append(
        renderInstance(
          instance,
          this.drafts,
          (candidate, draft) => void this.submit(instance.id, candidate, draft),
          () => this.renderInstances(),
        ),
      );
    }
  }

  private renderPager(): void {
    const pager = this.root.querySelector<HTMLElement>("#pager");
    if (!pager || !this.page) return;
    pager.textContent = "";
    if (this.cursorStack.length > 1) {
      const prev = document.createElement("button");
      prev.textContent = "previous page";
      prev.addEventListener("click", () => {
        this.cursorStack.pop();
        const target = this.cursorStack.pop() ?? null;
        void this.loadPage(target);
      });
      pager.append(prev);
    }
    if (this.page.next_cursor) {
      const next = document.createElement("button");
      next.textContent = "next page";
      next.addEventListener("click", () => void this.loadPage(this.page!.next_cursor));
      pager.append(next);
    }
  }

  async refreshStats(): Promise<void> {
    const section = this.root.querySelector<HTMLElement>("#stats");
    if (!section) return;
    try {
      const stats = await this.api.fetchStats();
      section.textContent = "";
      section.append(renderStatsPanel(stats, this.api.exportUrl()));
    } catch (err) {
      this.status(`stats unavailable: ${(err as Error).message}`);
    }
  }

  async submit(instanceId: string, candidate: Candidate, draft: Draft): Promise<void> {
    const reviewer = this.reviewerName();
    if (!reviewer) {
      this.status("set a reviewer name before judging");
      return;
    }
    if (draft.sensible === null || draft.informative === null) {
      this.status("choose both axes before submitting");
      return;
    }
    // optimistic: lock the row immediately, roll back if the server refuses
    const optimistic = draftFromJudgment(draft.sensible, draft.informative);
    this.drafts.set(instanceId, candidate.label, optimistic);
    this.renderInstances();
    try {
      await this.api.submitReview({
        instance_id: instanceId,
        label: candidate.label,
        sensible: draft.sensible,
        informative: draft.informative,
        reviewer,
      });
      this.status(`recorded ${candidate.label}`);
      await this.refreshStats();
    } catch (err) {
      // rollback: restore the editable draft with the chosen axes intact
      this.drafts.set(instanceId, candidate.label, {
        sensible: draft.sensible,
        informative: draft.informative,
        locked: false,
      });
      this.renderInstances();
      this.status(`rejected: ${(err as Error).message}`);
    }
  }
}

export function mount(root: HTMLElement | null = document.getElementById("app")): ReviewApp {
  if (!root) throw new Error("missing #app mount point");
  const app = new ReviewApp(root);
  void app.start();
  return app;
}

declare global {
  interface Window {
    __GROOV_NO_AUTOSTART__?: boolean;
  }
}

if (typeof window !== "undefined" && !window.__GROOV_NO_AUTOSTART__) {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => mount());
  } else if (document.getElementById("app")) {
    mount();
  }
}

export { emptyDraft };

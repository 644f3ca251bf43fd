import type { Candidate, InstancePayload, Stats } from "./types.js";
import { Draft, DraftStore, draftComplete } from "./state.js";

export interface SubmitHandler {
  (candidate: Candidate, draft: Draft): void;
}

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

/** Shown in place of a number the API did not provide. */
export function formatPct(value: number | null): string {
  return value === null ? "–" : String(value);
}

function axisPicker(
  name: string,
  current: boolean | null,
  onPick: (value: boolean) => void,
): HTMLElement {
  const wrap = el("span", "axis");
  wrap.append(el("span", "axis-name", name));
  for (const value of [true, false]) {
    const button = el("button", "axis-choice", value ? "yes" : "no");
    button.type = "button";
    if (current === value) button.classList.add("chosen");
    button.addEventListener("click", () => onPick(value));
    wrap.append(button);
  }
  return wrap;
}

function judgmentRow(
  instance: InstancePayload,
  candidate: Candidate,
  drafts: DraftStore,
  onSubmit: SubmitHandler,
  rerender: () => void,
): HTMLElement {
  const draft = drafts.get(instance.id, candidate.label);
  const row = el("div", "candidate-row");
  row.dataset.label = candidate.label;
  const title = el("span", "candidate-label", candidate.label);
  if (candidate.semantic_match !== null) {
    title.append(
      el("span", "semantic-flag", candidate.semantic_match ? " ≈gold" : ""),
    );
  }
  row.append(title);

  if (draft.locked) {
    row.classList.add("locked");
    row.append(
      el("span", "judgment-summary",
         `sensible: ${draft.sensible ? "yes" : "no"}, ` +
         `informative: ${draft.informative ? "yes" : "no"}`),
    );
    const edit = el("button", "edit-button", "edit");
    edit.type = "button";
    edit.addEventListener("click", () => {
      drafts.set(instance.id, candidate.label, { ...draft, locked: false });
      rerender();
    });
    row.append(edit);
    return row;
  }

  row.append(
    axisPicker("sensible", draft.sensible, (value) => {
      drafts.set(instance.id, candidate.label, { ...draft, sensible: value });
      rerender();
    }),
    axisPicker("informative", draft.informative, (value) => {
      drafts.set(instance.id, candidate.label, { ...draft, informative: value });
      rerender();
    }),
  );
  const submit = el("button", "submit-button", "submit");
  submit.type = "button";
  submit.disabled = !draftComplete(draft);
  submit.addEventListener("click", () => onSubmit(candidate, draft));
  row.append(submit);
  const error = el("span", "submit-error");
  error.hidden = true;
  row.append(error);
  return row;
}

export function renderInstance(
  instance: InstancePayload,
  drafts: DraftStore,
  onSubmit: SubmitHandler,
  rerender: () => void,
): HTMLElement {
  const card = el("article", "instance-card");
  card.dataset.id = instance.id;
  card.append(el("h3", "instance-id", instance.id));
  card.append(el("p", "instance-text", instance.text));

  const goldList = el("div", "gold-labels");
  goldList.append(el("span", "section-title", "gold:"));
  for (const gold of instance.gold) {
    const chip = el("span", "gold-label", gold.label);
    if (gold.unseen) chip.classList.add("unseen-gold");
    goldList.append(chip);
  }
  card.append(goldList);

  const predList = el("div", "predicted-labels");
  predList.append(el("span", "section-title", "predicted:"));
  for (const pred of instance.predicted) {
    predList.append(el("span", `predicted-label cat-${pred.category}`, pred.label));
  }
  card.append(predList);

  const judgments = el("div", "judgments");
  for (const candidate of instance.candidates) {
    judgments.append(judgmentRow(instance, candidate, drafts, onSubmit, rerender));
  }
  card.append(judgments);
  return card;
}

export function renderStatsPanel(stats: Stats | null, exportUrl: string): HTMLElement {
  const panel = el("section", "stats-panel");
  panel.append(el("h2", undefined, "review statistics"));
  if (stats === null || stats.coverage.total === 0) {
    panel.append(el("p", "stats-placeholder", "no reviewable candidates loaded"));
    return panel;
  }
  const table = el("table", "stats-table");
  const head = el("tr");
  for (const column of ["semantic match", "# labels", "sen %", "inf %"]) {
    head.append(el("th", undefined, column));
  }
  table.append(head);
  for (const row of stats.rows) {
    const tr = el("tr", `stats-row-${row.key}`);
    tr.append(el("td", undefined, row.key));
    tr.append(el("td", "n-labels", String(row.n_labels)));
    tr.append(el("td", "sen-pct", formatPct(row.sensible_pct)));
    tr.append(el("td", "inf-pct", formatPct(row.informative_pct)));
    table.append(tr);
  }
  panel.append(table);
  panel.append(
    el("p", "coverage",
       `reviewed ${stats.coverage.reviewed} of ${stats.coverage.total} candidates`),
  );
  const exportLink = el("a", "export-link", "download accepted labels");
  exportLink.href = exportUrl;
  exportLink.setAttribute("download", "accepted_labels.txt");
  panel.append(exportLink);
  return panel;
}

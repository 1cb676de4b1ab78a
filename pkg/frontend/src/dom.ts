// Thin view-model -> DOM layer. No scoring logic lives here: everything
// rendered comes from render.ts view models field by field.

import type { AuditView, LabelBadge, QuadPanel, TokenSpan } from "./render.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTokens(container: HTMLElement, spans: TokenSpan[]): void {
  container.replaceChildren();
  for (const span of spans) {
    const node = el("span", span.highlighted ? "tok tok-hit" : "tok", span.text);
    node.style.backgroundColor = span.color;
    node.title = `score ${span.score.toFixed(4)}`;
    container.appendChild(node);
    container.appendChild(document.createTextNode(" "));
  }
}

export function renderLabelList(
  container: HTMLElement,
  badges: LabelBadge[],
  selected: string | null,
  onSelect: (label: string) => void,
): void {
  container.replaceChildren();
  for (const badge of badges) {
    const row = el("div", "label-row" + (badge.label === selected ? " selected" : ""));
    row.dataset.label = badge.label;
    const pill = el("span", badge.predicted ? "badge badge-on" : "badge", badge.label);
    row.appendChild(pill);
    row.appendChild(el("span", "label-desc", badge.description));
    row.appendChild(el("span", "label-sigma", badge.sigma.toFixed(3)));
    row.addEventListener("click", () => onSelect(badge.label));
    container.appendChild(row);
  }
}

function renderPanel(panel: QuadPanel): HTMLElement {
  const box = el("div", "quad-panel" + (panel.present ? "" : " absent"));
  const head = el("div", "quad-head", panel.title + (panel.isNearest ? "  ★ nearest" : ""));
  box.appendChild(head);
  if (!panel.present) {
    box.appendChild(el("div", "quad-absent", panel.absentText ?? "not in database"));
    return box;
  }
  const bar = el("div", "prob-bar");
  const fill = el("div", "prob-fill");
  fill.style.width = `${((panel.prob ?? 0) * 100).toFixed(1)}%`;
  bar.appendChild(fill);
  box.appendChild(bar);
  box.appendChild(
    el(
      "div",
      "quad-meta",
      `normalized softmax distance ${(panel.prob ?? 0).toFixed(3)} | raw ${panel.distance?.toFixed(4)} | train doc ${panel.trainDocId}`,
    ),
  );
  box.appendChild(el("div", "quad-snippet", panel.snippet ?? ""));
  return box;
}

export function renderAudit(container: HTMLElement, view: AuditView): void {
  container.replaceChildren();
  const head = el(
    "div",
    "audit-head",
    `${view.label}  ${view.description} (train frequency ${view.trainFrequency})`,
  );
  container.appendChild(head);
  if (view.needsReview) {
    container.appendChild(
      el("div", "review-flag", "needs review: nearest exemplar is not a confident TP"),
    );
  }
  container.appendChild(el("div", "audit-query", view.querySnippet));
  const decisions = Object.entries(view.decisions)
    .map(([name, flag]) => `${name}=${flag ? "yes" : "no"}`)
    .join("  ");
  container.appendChild(el("div", "audit-decisions", decisions));
  const grid = el("div", "quad-grid");
  for (const panel of view.panels) grid.appendChild(renderPanel(panel));
  container.appendChild(grid);
}

export function renderStaleBanner(container: HTMLElement, visible: boolean): void {
  container.style.display = visible ? "block" : "none";
}

import { ApiClient } from "./api.js";
import {
  renderAudit,
  renderLabelList,
  renderStaleBanner,
  renderTokens,
  el,
} from "./dom.js";
import { auditView, documentView, labelListView } from "./render.js";
import { AnnotationOutbox } from "./queue.js";
import { OffsetSlider } from "./slider.js";
import type { PredictPayload } from "./types.js";

type Elements = {
  docList: HTMLElement;
  labelList: HTMLElement;
  tokens: HTMLElement;
  audit: HTMLElement;
  slider: HTMLInputElement;
  sliderValue: HTMLElement;
  staleBanner: HTMLElement;
  verdicts: HTMLElement;
  status: HTMLElement;
};

class App {
  private api = new ApiClient("");
  private outbox = new AnnotationOutbox(this.api);
  private slider: OffsetSlider;
  private sessionHash = "";
  private currentDoc: PredictPayload | null = null;
  private selectedLabel: string | null = null;
  private locked = new Set<string>();

  constructor(private ui: Elements) {
    this.slider = new OffsetSlider(this.api, 150, () => void this.refreshPredictions());
    ui.slider.addEventListener("input", () => {
      const value = Number(ui.slider.value);
      ui.sliderValue.textContent = value.toFixed(2);
      this.slider.change(value);
    });
    window.addEventListener("online", () => {
      void this.outbox.flush().then((sent) => {
        if (sent > 0) this.setStatus(`${sent} queued verdict(s) delivered`);
      });
    });
  }

  setStatus(text: string): void {
    this.ui.status.textContent = text;
  }

  async start(): Promise<void> {
    const session = await this.api.getSession();
    this.sessionHash = session.model_sha256;
    this.ui.slider.value = String(session.offset);
    this.ui.sliderValue.textContent = session.offset.toFixed(2);
    const docs = await this.api.listDocs();
    this.ui.docList.replaceChildren();
    for (const docId of docs.doc_ids) {
      const row = el("div", "doc-row", docId);
      row.addEventListener("click", () => void this.selectDoc(docId));
      this.ui.docList.appendChild(row);
    }
    this.setStatus(
      session.db_loaded ? "ready (exemplar database loaded)" : "ready (no database: audits unavailable)",
    );
  }

  private checkHash(hash: string): void {
    renderStaleBanner(this.ui.staleBanner, hash !== this.sessionHash);
  }

  async selectDoc(docId: string): Promise<void> {
    const payload = await this.api.getDoc(docId);
    this.checkHash(payload.model_sha256);
    this.currentDoc = payload;
    this.selectedLabel = null;
    renderLabelList(this.ui.labelList, labelListView(payload), null, (label) =>
      void this.selectLabel(label),
    );
    this.ui.tokens.textContent = (payload.tokens ?? []).join(" ");
    this.ui.audit.replaceChildren();
    this.renderVerdictControls();
  }

  /** Label switch swaps the overlay with exactly one /tokens call. */
  async selectLabel(label: string): Promise<void> {
    if (!this.currentDoc) return;
    this.selectedLabel = label;
    const payload = await this.api.getTokens(this.currentDoc.doc_id, label);
    this.checkHash(payload.model_sha256);
    renderTokens(this.ui.tokens, documentView(payload));
    renderLabelList(
      this.ui.labelList,
      labelListView(this.currentDoc),
      label,
      (next) => void this.selectLabel(next),
    );
    this.renderVerdictControls();
    try {
      const audit = await this.api.getAudit(this.currentDoc.doc_id, label, true);
      this.checkHash(audit.model_sha256);
      renderAudit(this.ui.audit, auditView(audit));
    } catch (err) {
      this.ui.audit.textContent = `audit unavailable: ${(err as Error).message}`;
    }
  }

  async refreshPredictions(): Promise<void> {
    if (!this.currentDoc) return;
    const payload = await this.api.getDoc(this.currentDoc.doc_id);
    this.currentDoc = payload;
    renderLabelList(
      this.ui.labelList,
      labelListView(payload),
      this.selectedLabel,
      (label) => void this.selectLabel(label),
    );
  }

  private renderVerdictControls(): void {
    const box = this.ui.verdicts;
    box.replaceChildren();
    if (!this.currentDoc || !this.selectedLabel) return;
    const key = `${this.currentDoc.doc_id}:${this.selectedLabel}`;
    if (this.locked.has(key)) {
      box.appendChild(el("span", "verdict-locked", "verdict recorded"));
      return;
    }
    for (const verdict of ["accept", "reject"] as const) {
      const button = el("button", "verdict-btn", verdict);
      button.addEventListener("click", () => void this.submitVerdict(verdict));
      box.appendChild(button);
    }
  }

  async submitVerdict(verdict: "accept" | "reject"): Promise<void> {
    if (!this.currentDoc || !this.selectedLabel) return;
    const key = `${this.currentDoc.doc_id}:${this.selectedLabel}`;
    const result = await this.outbox.submit({
      doc_id: this.currentDoc.doc_id,
      label: this.selectedLabel,
      verdict,
    });
    this.locked.add(key);
    this.renderVerdictControls();
    this.setStatus(
      result.queued ? "offline: verdict queued, will flush on reconnect" : "verdict recorded",
    );
  }
}

export function bootstrap(): void {
  const byId = (id: string) => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node;
  };
  const app = new App({
    docList: byId("doc-list"),
    labelList: byId("label-list"),
    tokens: byId("token-pane"),
    audit: byId("audit-pane"),
    slider: byId("offset-slider") as HTMLInputElement,
    sliderValue: byId("offset-value"),
    staleBanner: byId("stale-banner"),
    verdicts: byId("verdict-controls"),
    status: byId("status-line"),
  });
  void app.start();
}

if (typeof document !== "undefined" && document.getElementById("doc-list")) {
  bootstrap();
}

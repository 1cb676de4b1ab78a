// Pure payload -> view-model functions. Everything the user sees is built
// here from service fields without rescaling: highlights, probabilities,
// sigmoids, and badges pass through exactly. The only display-side
// derivation is the token color, a signed diverging scale clipped at the
// 95th percentile magnitude within the document.

import type {
  AuditPayload,
  ExemplarClass,
  PredictPayload,
  TokensPayload,
} from "./types.js";
import { EXEMPLAR_CLASSES } from "./types.js";

export type TokenSpan = {
  text: string;
  score: number;
  highlighted: boolean;
  /** css background color (display-only derivation of score) */
  color: string;
};

function percentile(sorted: number[], q: number): number {
  if (sorted.length === 0) return 0;
  const pos = Math.min(sorted.length - 1, Math.floor(q * (sorted.length - 1)));
  return sorted[pos];
}

export function scoreColor(score: number, clip: number): string {
  if (clip <= 0 || score === 0) return "transparent";
  const t = Math.max(-1, Math.min(1, score / clip));
  const alpha = Math.abs(t) * 0.85;
  // diverging: positive red, negative blue
  return t > 0
    ? `rgba(214, 39, 40, ${alpha.toFixed(3)})`
    : `rgba(31, 119, 180, ${alpha.toFixed(3)})`;
}

export function documentView(payload: TokensPayload): TokenSpan[] {
  const magnitudes = payload.tokens
    .map((t) => Math.abs(t.score))
    .sort((a, b) => a - b);
  const clip = percentile(magnitudes, 0.95);
  return payload.tokens.map((t) => ({
    text: t.token,
    score: t.score,
    highlighted: t.highlighted,
    color: scoreColor(t.score, clip),
  }));
}

export type LabelBadge = {
  rank: number;
  label: string;
  description: string;
  sigma: number;
  predicted: boolean;
};

export function labelListView(payload: PredictPayload): LabelBadge[] {
  return payload.labels.map((row) => ({
    rank: row.rank,
    label: row.label,
    description: row.description,
    sigma: row.sigmoid,
    predicted: row.predicted,
  }));
}

export type QuadPanel = {
  cls: ExemplarClass;
  title: string;
  present: boolean;
  isNearest: boolean;
  /** normalized softmax distance straight from the payload (bar length) */
  prob: number | null;
  distance: number | null;
  snippet: string | null;
  trainDocId: string | null;
  absentText: string | null;
};

export type AuditView = {
  docId: string;
  label: string;
  description: string;
  trainFrequency: number;
  querySnippet: string;
  querySigma: number;
  queryPredicted: boolean;
  iStar: ExemplarClass;
  needsReview: boolean;
  decisions: Record<string, boolean>;
  panels: QuadPanel[];
};

const PANEL_TITLES: Record<ExemplarClass, string> = {
  tp: "Nearest training TP",
  fn: "Nearest training FN",
  fp: "Nearest training FP",
  tn: "Nearest unrelated (TN)",
};

export function auditView(payload: AuditPayload, reviewThreshold = 0.5): AuditView {
  const panels: QuadPanel[] = EXEMPLAR_CLASSES.map((cls) => {
    const entry = payload.exemplars[cls];
    if (entry === null || entry === undefined) {
      return {
        cls,
        title: PANEL_TITLES[cls],
        present: false,
        isNearest: false,
        prob: null,
        distance: null,
        snippet: null,
        trainDocId: null,
        absentText: "not in database",
      };
    }
    return {
      cls,
      title: PANEL_TITLES[cls],
      present: true,
      isNearest: payload.i_star === cls,
      prob: payload.softmax_probs[cls] ?? entry.softmax_prob,
      distance: entry.distance,
      snippet: entry.snippet,
      trainDocId: entry.doc_id,
      absentText: null,
    };
  });
  const tpProb = payload.softmax_probs.tp ?? 0;
  const needsReview = payload.i_star !== "tp" || tpProb < reviewThreshold;
  return {
    docId: payload.doc_id,
    label: payload.label,
    description: payload.description,
    trainFrequency: payload.train_frequency,
    querySnippet: payload.query.snippet,
    querySigma: payload.query.sigmoid,
    queryPredicted: payload.query.predicted,
    iStar: payload.i_star,
    needsReview,
    decisions: payload.decisions,
    panels,
  };
}

export function predictedBadgeSet(payload: PredictPayload): Set<string> {
  return new Set(payload.labels.filter((r) => r.predicted).map((r) => r.label));
}

/** True when every predicted badge at the lower offset survives at the
 * higher offset (the visible form of slider monotonicity). */
export function badgeSetNonDecreasing(lower: Set<string>, higher: Set<string>): boolean {
  for (const label of lower) {
    if (!higher.has(label)) return false;
  }
  return true;
}

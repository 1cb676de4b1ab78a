// Payload shapes mirroring the service JSON. Every number displayed by the
// UI must be traceable to one of these fields: the client never rescales or
// recomputes model quantities (colors are the only display-side derivation).

export type LabelRow = {
  rank: number;
  label: string;
  description: string;
  logit: number;
  sigmoid: number;
  predicted: boolean;
  token_index: number;
};

export type PredictPayload = {
  model_sha256: string;
  doc_id: string;
  offset: number;
  mode: string;
  labels: LabelRow[];
  tokens?: string[];
  gold?: string[];
};

export type TokenRow = {
  token: string;
  score: number;
  highlighted: boolean;
};

export type TokensPayload = {
  model_sha256: string;
  doc_id: string;
  label: string;
  mode: string;
  tokens: TokenRow[];
};

export const EXEMPLAR_CLASSES = ["tp", "fn", "fp", "tn"] as const;
export type ExemplarClass = (typeof EXEMPLAR_CLASSES)[number];

export type ExemplarEntry = {
  doc_id: string;
  token_index: number;
  snippet: string;
  distance: number;
  softmax_prob: number | null;
  logit: number;
} | null;

export type AuditPayload = {
  model_sha256: string;
  doc_id: string;
  label: string;
  description: string;
  train_frequency: number;
  query: {
    token_index: number;
    token: string | null;
    snippet: string;
    logit: number;
    sigmoid: number;
    predicted: boolean;
  };
  i_star: ExemplarClass;
  softmax_probs: Partial<Record<ExemplarClass, number>>;
  exa_logit: number;
  tau: number;
  decisions: Record<string, boolean>;
  exemplars: Record<ExemplarClass, ExemplarEntry>;
  query_negative?: boolean;
};

export type SessionPayload = {
  model_sha256: string;
  offset: number;
  tau: number;
  db_loaded: boolean;
  num_labels: number;
  num_docs: number;
  mode: string;
};

export type AnnotationVerdict = "accept" | "reject" | `relabel-to:${string}`;

export type AnnotationRequest = {
  doc_id: string;
  label: string;
  verdict: AnnotationVerdict;
  context?: unknown;
  annotator?: string;
};

export type AnnotationRecord = AnnotationRequest & {
  id: number;
  timestamp: number;
};

export type DocListPayload = {
  model_sha256: string;
  doc_ids: string[];
};

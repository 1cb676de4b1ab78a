import type {
  AnnotationRecord,
  AnnotationRequest,
  AuditPayload,
  DocListPayload,
  PredictPayload,
  SessionPayload,
  TokensPayload,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Thin JSON client over the audit service. Keeps a timestamp log of offset
 * writes so tests (and the debounce contract) can be checked against the
 * actual requests that went out. */
export class ApiClient {
  offsetWriteTimes: number[] = [];

  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private now: () => number = () => Date.now(),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const text = await resp.text();
    const payload = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const message =
        payload && typeof payload.error === "string" ? payload.error : resp.statusText;
      throw new ApiError(resp.status, message);
    }
    return payload as T;
  }

  getSession(): Promise<SessionPayload> {
    return this.request("GET", "/session");
  }

  listDocs(limit = 200): Promise<DocListPayload> {
    return this.request("GET", `/docs?limit=${limit}`);
  }

  getDoc(docId: string): Promise<PredictPayload> {
    return this.request("GET", `/docs/${encodeURIComponent(docId)}`);
  }

  predictText(text: string, top?: number): Promise<PredictPayload> {
    const body: Record<string, unknown> = { text };
    if (top !== undefined) body.top = top;
    return this.request("POST", "/predict", body);
  }

  getTokens(docId: string, label: string): Promise<TokensPayload> {
    return this.request(
      "GET",
      `/docs/${encodeURIComponent(docId)}/labels/${encodeURIComponent(label)}/tokens`,
    );
  }

  getAudit(docId: string, label: string, force = false): Promise<AuditPayload> {
    const suffix = force ? "?force=1" : "";
    return this.request(
      "GET",
      `/docs/${encodeURIComponent(docId)}/labels/${encodeURIComponent(label)}/audit${suffix}`,
    );
  }

  setOffset(value: number): Promise<{ offset: number }> {
    this.offsetWriteTimes.push(this.now());
    return this.request("PUT", "/session/offset", { value });
  }

  postAnnotation(annotation: AnnotationRequest): Promise<AnnotationRecord> {
    return this.request("POST", "/annotations", annotation);
  }

  getAnnotations(docId?: string): Promise<{ annotations: AnnotationRecord[] }> {
    const suffix = docId ? `?doc=${encodeURIComponent(docId)}` : "";
    return this.request("GET", `/annotations${suffix}`);
  }
}

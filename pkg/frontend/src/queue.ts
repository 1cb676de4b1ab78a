import type { ApiClient } from "./api.js";
import type { AnnotationRecord, AnnotationRequest } from "./types.js";

export type SubmitResult =
  | { queued: false; record: AnnotationRecord }
  | { queued: true };

/** Verdict outbox: submissions that fail to reach the service are queued
 * locally (in order) and flushed on reconnect, so no verdict is silently
 * lost. HTTP-level rejections (4xx) are surfaced, not queued. */
export class AnnotationOutbox {
  private queue: AnnotationRequest[] = [];

  constructor(private api: ApiClient) {}

  get pendingCount(): number {
    return this.queue.length;
  }

  async submit(annotation: AnnotationRequest): Promise<SubmitResult> {
    try {
      const record = await this.api.postAnnotation(annotation);
      return { queued: false, record };
    } catch (err) {
      if ((err as { status?: number }).status !== undefined) throw err;
      this.queue.push(annotation);
      return { queued: true };
    }
  }

  /** Retry queued verdicts in order; stops at the first network failure so
   * ordering is preserved for the next attempt. */
  async flush(): Promise<number> {
    let sent = 0;
    while (this.queue.length > 0) {
      const next = this.queue[0];
      try {
        await this.api.postAnnotation(next);
      } catch (err) {
        if ((err as { status?: number }).status !== undefined) {
          // service rejected it outright: drop rather than retry forever
          this.queue.shift();
          throw err;
        }
        break;
      }
      this.queue.shift();
      sent += 1;
    }
    return sent;
  }
}

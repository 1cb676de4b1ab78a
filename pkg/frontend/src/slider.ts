import type { ApiClient } from "./api.js";

/** Debounced bias-offset writer: at most one offset write per window, and
 * the final value of a drag is always the one that lands. */
export class OffsetSlider {
  private pending: number | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;

  constructor(
    private api: ApiClient,
    private windowMs = 150,
    private onApplied?: (value: number) => void,
  ) {}

  change(value: number): void {
    this.pending = value;
    if (this.timer === null) {
      this.timer = setTimeout(() => void this.fire(), this.windowMs);
    }
  }

  /** Send the latest pending value immediately (used on blur/unload). */
  async flush(): Promise<void> {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    await this.fire();
  }

  private async fire(): Promise<void> {
    this.timer = null;
    if (this.pending === null || this.inFlight) return;
    const value = this.pending;
    this.pending = null;
    this.inFlight = true;
    try {
      await this.api.setOffset(value);
      this.onApplied?.(value);
    } finally {
      this.inFlight = false;
      // a drag that continued while the write was in flight left a newer
      // value behind: schedule it so the final position always lands
      if (this.pending !== null && this.timer === null) {
        this.timer = setTimeout(() => void this.fire(), this.windowMs);
      }
    }
  }

  get settled(): boolean {
    return this.pending === null && this.timer === null && !this.inFlight;
  }
}

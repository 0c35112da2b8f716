// Operator input handling: slider drags are rate-limited so the service
// never sees more than `maxPerSecond` force commands.

import { setForceCommand, UiCommand } from "./protocol.js";

export class ForceCommandLimiter {
  private sent: number[] = [];
  private pending: number | null = null;

  constructor(readonly maxPerSecond = 20) {}

  /** Returns commands to emit for this input event (0 or 1). */
  push(value: number, nowMs: number): UiCommand[] {
    this.sent = this.sent.filter((t) => nowMs - t < 1000);
    if (this.sent.length >= this.maxPerSecond) {
      this.pending = value; // remember the newest value for the next slot
      return [];
    }
    this.sent.push(nowMs);
    this.pending = null;
    return [setForceCommand(value)];
  }

  /** Flush a deferred value once a slot frees up (call on a timer). */
  flush(nowMs: number): UiCommand[] {
    if (this.pending === null) return [];
    const value = this.pending;
    return this.push(value, nowMs);
  }
}

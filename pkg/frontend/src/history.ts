import type { ConversationEntry } from "./types";

/**
 * Append-only conversation log.
 *
 * Entries can only be added, never reordered or mutated; timestamps are
 * assigned here and clamped monotone so the order invariant holds even
 * across clock adjustments. A bot (or error) entry is only accepted while
 * a user question is awaiting its reply, so every bot entry directly
 * answers the user entry before it.
 */
export class ConversationLog {
  private entries: ConversationEntry[] = [];
  private lastTimestamp = 0;
  private awaiting = false;

  private stamp(): number {
    const now = Math.max(Date.now(), this.lastTimestamp);
    this.lastTimestamp = now;
    return now;
  }

  get length(): number {
    return this.entries.length;
  }

  get awaitingReply(): boolean {
    return this.awaiting;
  }

  all(): readonly ConversationEntry[] {
    return this.entries.slice();
  }

  addUser(text: string): ConversationEntry {
    if (this.awaiting) {
      throw new Error("a question is already in flight");
    }
    const entry: ConversationEntry = {
      role: "user",
      text,
      timestamp: this.stamp(),
    };
    this.entries.push(entry);
    this.awaiting = true;
    return entry;
  }

  addBot(text: string, latencyMs: number, modelTag: string): ConversationEntry {
    if (!this.awaiting) {
      throw new Error("bot reply without a pending question");
    }
    const entry: ConversationEntry = {
      role: "bot",
      text,
      timestamp: this.stamp(),
      latencyMs,
      modelTag,
    };
    this.entries.push(entry);
    this.awaiting = false;
    return entry;
  }

  addError(text: string, retriable: boolean): ConversationEntry {
    if (!this.awaiting) {
      throw new Error("error entry without a pending question");
    }
    const entry: ConversationEntry = {
      role: "error",
      text,
      timestamp: this.stamp(),
      retriable,
    };
    this.entries.push(entry);
    this.awaiting = false;
    return entry;
  }
}

import type { ConversationEntry, HealthPayload, InfoPayload } from "./types";

/** Pure view models: same state in, same view out. No DOM access here. */

export interface StatusView {
  badge: "online" | "offline";
  label: string;
}

export function statusView(
  health: HealthPayload | null,
  info: InfoPayload | null,
): StatusView {
  if (!health || health.status !== "ok") {
    return { badge: "offline", label: "service offline" };
  }
  const parts = [`model ${health.model}`];
  if (info) {
    parts.push(`vocab ${info.vocab_size}`);
    if (info.bleu !== null && info.bleu !== undefined) {
      parts.push(`BLEU ${info.bleu.toFixed(2)}`);
    }
  }
  return { badge: "online", label: parts.join(" · ") };
}

export interface EntryView {
  className: string;
  speaker: string;
  text: string;
  meta: string;
}

export function entryView(entry: ConversationEntry): EntryView {
  if (entry.role === "user") {
    return { className: "entry user", speaker: "you", text: entry.text, meta: "" };
  }
  if (entry.role === "bot") {
    const meta =
      entry.latencyMs !== undefined ? `${entry.latencyMs.toFixed(0)} ms` : "";
    return { className: "entry bot", speaker: "bot", text: entry.text, meta };
  }
  const meta = entry.retriable ? "retriable" : "";
  return { className: "entry error", speaker: "error", text: entry.text, meta };
}

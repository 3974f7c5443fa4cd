/** Wire formats of the chat service and the UI's own conversation model. */

export type Role = "user" | "bot" | "error";

export interface ConversationEntry {
  role: Role;
  text: string;
  /** milliseconds since epoch; entries are appended in timestamp order */
  timestamp: number;
  /** bot entries: round-trip latency reported by the service */
  latencyMs?: number;
  /** bot entries: family + checkpoint checksum of the serving model */
  modelTag?: string;
  /** error entries: whether resending the same question may succeed */
  retriable?: boolean;
}

export interface ChatResponse {
  answer: string;
  token_ids: number[];
  latency_ms: number;
  model: string;
}

export interface HealthPayload {
  status: string;
  model: string;
  uptime_s: number;
}

export interface InfoPayload {
  model: string;
  family: string;
  vocab_size: number;
  bleu: number | null;
  config: Record<string, unknown>;
  requests: number;
}

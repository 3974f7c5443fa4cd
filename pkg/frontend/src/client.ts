import type { ChatResponse, HealthPayload, InfoPayload } from "./types";

/** Error with the HTTP status and the service's error field, verbatim. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function readError(response: Response): Promise<string> {
  try {
    const payload = (await response.json()) as { error?: string };
    if (payload && typeof payload.error === "string") {
      return payload.error;
    }
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${response.status}`;
}

/** Thin fetch wrapper over the chat service JSON API. */
export class ChatClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path);
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
    return (await response.json()) as T;
  }

  async chat(question: string, maxSteps?: number): Promise<ChatResponse> {
    const body: Record<string, unknown> = { question };
    if (maxSteps !== undefined) {
      body.max_steps = maxSteps;
    }
    const response = await this.fetchImpl(this.baseUrl + "/chat", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
    return (await response.json()) as ChatResponse;
  }

  health(): Promise<HealthPayload> {
    return this.getJson<HealthPayload>("/health");
  }

  info(): Promise<InfoPayload> {
    return this.getJson<InfoPayload>("/info");
  }
}

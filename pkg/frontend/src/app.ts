import { ApiError, ChatClient } from "./client";
import { ConversationLog } from "./history";
import { entryView, statusView } from "./view";
import type { HealthPayload, InfoPayload } from "./types";

export interface AppElements {
  form: HTMLFormElement;
  input: HTMLInputElement;
  sendButton: HTMLButtonElement;
  history: HTMLElement;
  statusBadge: HTMLElement;
  statusLabel: HTMLElement;
}

/**
 * Wires the conversation log, the HTTP client, and the DOM together.
 *
 * One question is in flight at a time: the input is disabled from submits
 * until the reply (or an error entry) lands. The service is single-turn,
 * so only the typed question is sent, never prior history.
 */
export class ChatApp {
  readonly log = new ConversationLog();
  private health: HealthPayload | null = null;
  private info: InfoPayload | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: ChatClient,
    private readonly el: AppElements,
  ) {
    el.form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.send();
    });
  }

  get inFlight(): boolean {
    return this.log.awaitingReply;
  }

  async send(): Promise<void> {
    const question = this.el.input.value.trim();
    if (!question || this.inFlight) {
      return;
    }
    this.log.addUser(question);
    this.el.input.value = "";
    this.setBusy(true);
    this.render();
    try {
      const reply = await this.client.chat(question);
      this.log.addBot(reply.answer, reply.latency_ms, reply.model);
    } catch (error) {
      if (error instanceof ApiError) {
        // 4xx carries the service's error text verbatim
        this.log.addError(error.message, error.status >= 500);
      } else {
        this.log.addError("network failure, question not delivered", true);
      }
    } finally {
      this.setBusy(false);
      this.render();
    }
  }

  private setBusy(busy: boolean): void {
    this.el.input.disabled = busy;
    this.el.sendButton.disabled = busy;
    if (!busy) {
      this.el.input.focus();
    }
  }

  async refreshStatus(): Promise<void> {
    try {
      this.health = await this.client.health();
      this.info = await this.client.info();
    } catch {
      this.health = null;
      this.info = null;
    }
    this.renderStatus();
  }

  startPolling(intervalMs = 5000): void {
    if (this.pollTimer !== null) {
      return;
    }
    void this.refreshStatus();
    this.pollTimer = setInterval(() => void this.refreshStatus(), intervalMs);
  }

  stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  render(): void {
    const doc = this.el.history.ownerDocument;
    this.el.history.replaceChildren();
    for (const entry of this.log.all()) {
      const view = entryView(entry);
      const item = doc.createElement("li");
      item.className = view.className;
      const speaker = doc.createElement("span");
      speaker.className = "speaker";
      speaker.textContent = view.speaker;
      const text = doc.createElement("span");
      text.className = "text";
      text.textContent = view.text;
      item.append(speaker, text);
      if (view.meta) {
        const meta = doc.createElement("span");
        meta.className = "meta";
        meta.textContent = view.meta;
        item.append(meta);
      }
      this.el.history.append(item);
    }
    this.el.history.scrollTop = this.el.history.scrollHeight;
  }

  renderStatus(): void {
    const view = statusView(this.health, this.info);
    this.el.statusBadge.className = `badge ${view.badge}`;
    this.el.statusBadge.textContent = view.badge;
    this.el.statusLabel.textContent = view.label;
  }
}

export function mount(doc: Document, client?: ChatClient): ChatApp {
  const el: AppElements = {
    form: doc.querySelector("#chat-form") as HTMLFormElement,
    input: doc.querySelector("#question") as HTMLInputElement,
    sendButton: doc.querySelector("#send") as HTMLButtonElement,
    history: doc.querySelector("#history") as HTMLElement,
    statusBadge: doc.querySelector("#status-badge") as HTMLElement,
    statusLabel: doc.querySelector("#status-label") as HTMLElement,
  };
  const app = new ChatApp(client ?? new ChatClient(""), el);
  app.render();
  app.renderStatus();
  return app;
}

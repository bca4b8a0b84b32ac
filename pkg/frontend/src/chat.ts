/**
 * Customer-facing chat view.
 *
 * Holds the conversation state (message list, pending flag, progress) and
 * renders it into a mounted root element. All facts on screen come from
 * API responses; this module decides layout, never content. One message is
 * in flight at a time: the input stays disabled while pending and comes
 * back with a notice if the server reports the session as busy.
 */

import { ApiError, type ApiLike, type SessionView, type TranscriptEntry } from "./api.js";
import { clear, el } from "./dom.js";

export const SESSION_STORAGE_KEY = "ecpcounsel.session_id";

export interface ChatMessage {
  speaker: "customer" | "assistant";
  text: string;
  ts: string;
}

export interface ChatViewState {
  sessionId: string | null;
  messages: ChatMessage[];
  pending: boolean;
  progress: { done: number; total: number } | null;
  status: string | null;
  notice: string | null;
  startError: string | null;
}

function freshState(): ChatViewState {
  return {
    sessionId: null,
    messages: [],
    pending: false,
    progress: null,
    status: null,
    notice: null,
    startError: null,
  };
}

function messagesFromTranscript(entries: TranscriptEntry[]): ChatMessage[] {
  const messages: ChatMessage[] = [];
  for (const entry of entries) {
    if (entry.kind === "customer_message") {
      messages.push({ speaker: "customer", text: String(entry.payload.text ?? ""), ts: entry.ts });
    } else if (entry.kind === "reply") {
      messages.push({ speaker: "assistant", text: String(entry.payload.text ?? ""), ts: entry.ts });
    }
  }
  return messages;
}

export class ChatView {
  readonly state: ChatViewState = freshState();
  onStateChange: (() => void) | null = null;

  private root: HTMLElement | null = null;
  private doc: Document | null = null;
  private statusEl: HTMLElement | null = null;
  private noticeEl: HTMLElement | null = null;
  private errorEl: HTMLElement | null = null;
  private listEl: HTMLOListElement | null = null;
  private inputEl: HTMLInputElement | null = null;
  private sendEl: HTMLButtonElement | null = null;

  constructor(
    private readonly client: ApiLike,
    private readonly win: Window,
  ) {}

  mount(root: HTMLElement): void {
    this.root = root;
    const doc = root.ownerDocument;
    this.doc = doc;

    this.statusEl = el(doc, "div", { class: "status-bar" });
    this.noticeEl = el(doc, "div", { class: "notice", hidden: "" });
    this.errorEl = el(doc, "div", { class: "error-banner", hidden: "" });
    this.listEl = el(doc, "ol", { class: "messages", "aria-live": "polite" });
    this.inputEl = el(doc, "input", {
      class: "chat-input",
      type: "text",
      placeholder: "Type your answer...",
      autocomplete: "off",
    });
    this.sendEl = el(doc, "button", { class: "send", type: "submit" }, "Send");
    const form = el(doc, "form", { class: "chat-form" }, this.inputEl, this.sendEl);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.send(this.inputEl?.value ?? "");
    });
    this.inputEl.addEventListener("input", () => this.syncControls());

    clear(root);
    root.append(this.statusEl, this.noticeEl, this.errorEl, this.listEl, form);
    this.render();
  }

  /** Resume the stored session if one exists, otherwise create a new one. */
  async start(): Promise<void> {
    this.state.startError = null;
    this.state.notice = null;
    this.render();
    const stored = this.win.sessionStorage.getItem(SESSION_STORAGE_KEY);
    try {
      if (stored) {
        try {
          await this.restore(stored);
          return;
        } catch (err) {
          if (err instanceof ApiError && err.kind === "SessionNotFound") {
            this.win.sessionStorage.removeItem(SESSION_STORAGE_KEY);
          } else {
            throw err;
          }
        }
      }
      await this.create();
    } catch (err) {
      this.state.startError = err instanceof ApiError ? err.message : String(err);
      this.render();
    }
  }

  /** Drop the stored session id and open a fresh consultation. */
  async startNew(): Promise<void> {
    this.win.sessionStorage.removeItem(SESSION_STORAGE_KEY);
    Object.assign(this.state, freshState());
    await this.start();
  }

  async send(raw: string): Promise<void> {
    const text = raw.trim();
    if (!text || this.state.pending || !this.state.sessionId) return;
    if (this.state.status !== null && this.state.status !== "active") return;

    this.state.pending = true;
    this.state.notice = null;
    // echo the outgoing line right away; rolled back if the server rejects
    // it, so the list always mirrors the transcript
    const echo: ChatMessage = { speaker: "customer", text, ts: "" };
    this.state.messages.push(echo);
    this.render();
    try {
      const result = await this.client.postMessage(this.state.sessionId, text);
      echo.ts = result.session.updated_at;
      this.state.messages.push({
        speaker: "assistant",
        text: result.reply,
        ts: result.session.updated_at,
      });
      this.applyView(result.session);
      if (this.inputEl) this.inputEl.value = "";
    } catch (err) {
      this.state.messages = this.state.messages.filter((m) => m !== echo);
      if (err instanceof ApiError && err.kind === "SessionBusy") {
        this.state.notice =
          "The assistant is still working on your previous message. Please try again in a moment.";
      } else if (err instanceof ApiError && err.kind === "SessionNotActive") {
        this.state.notice = "This consultation has ended and no longer accepts messages.";
      } else {
        const detail = err instanceof ApiError ? err.message : String(err);
        this.state.notice = `Could not send the message (${detail}). Your text was kept; try again.`;
      }
    } finally {
      this.state.pending = false;
      this.render();
    }
  }

  private async create(): Promise<void> {
    const created = await this.client.createSession();
    this.win.sessionStorage.setItem(SESSION_STORAGE_KEY, created.session.id);
    this.state.messages = [
      { speaker: "assistant", text: created.greeting, ts: created.session.created_at },
    ];
    this.applyView(created.session);
  }

  private async restore(sessionId: string): Promise<void> {
    const view = await this.client.getSession(sessionId);
    const transcript = await this.client.getTranscript(sessionId);
    this.state.messages = messagesFromTranscript(transcript.entries);
    this.applyView(view);
  }

  private applyView(view: SessionView): void {
    this.state.sessionId = view.id;
    this.state.status = view.status;
    this.state.progress = { done: view.mandatory_done, total: view.mandatory_total };
    this.render();
  }

  private locked(): boolean {
    if (this.state.pending) return true;
    if (this.state.sessionId === null) return true;
    return this.state.status !== null && this.state.status !== "active";
  }

  private syncControls(): void {
    if (!this.inputEl || !this.sendEl) return;
    const locked = this.locked();
    this.inputEl.disabled = locked;
    this.sendEl.disabled = locked || this.inputEl.value.trim() === "";
  }

  render(): void {
    if (!this.root || !this.doc) return;
    const doc = this.doc;

    if (this.statusEl) {
      clear(this.statusEl);
      const status = this.state.status ?? "connecting";
      this.statusEl.append(
        el(doc, "span", { class: `status-chip status-${status}` }, status),
      );
      if (this.state.progress) {
        this.statusEl.append(
          el(
            doc,
            "span",
            { class: "progress" },
            `Screening progress: ${this.state.progress.done} / ${this.state.progress.total} steps`,
          ),
        );
      }
      if (this.state.pending) {
        this.statusEl.append(el(doc, "span", { class: "pending-hint" }, "assistant is typing..."));
      }
      if (this.state.sessionId && this.state.status && this.state.status !== "active") {
        this.statusEl.append(
          el(
            doc,
            "a",
            { class: "review-link", href: `#/review/${this.state.sessionId}` },
            "Open the review report",
          ),
        );
      }
      if (this.state.sessionId) {
        const restart = el(doc, "button", { class: "new-session", type: "button" }, "New consultation");
        restart.addEventListener("click", () => void this.startNew());
        this.statusEl.append(restart);
      }
    }

    if (this.noticeEl) {
      if (this.state.notice) {
        this.noticeEl.hidden = false;
        this.noticeEl.textContent = this.state.notice;
      } else {
        this.noticeEl.hidden = true;
        this.noticeEl.textContent = "";
      }
    }

    if (this.errorEl) {
      clear(this.errorEl);
      if (this.state.startError) {
        this.errorEl.hidden = false;
        this.errorEl.append(
          el(doc, "span", {}, `Could not reach the counseling service: ${this.state.startError}`),
        );
        const retry = el(doc, "button", { class: "retry", type: "button" }, "Retry");
        retry.addEventListener("click", () => void this.start());
        this.errorEl.append(retry);
      } else {
        this.errorEl.hidden = true;
      }
    }

    if (this.listEl) {
      clear(this.listEl);
      for (const message of this.state.messages) {
        this.listEl.append(
          el(
            doc,
            "li",
            { class: `message ${message.speaker}`, title: message.ts },
            el(doc, "span", { class: "speaker" }, message.speaker === "customer" ? "You" : "Assistant"),
            el(doc, "span", { class: "text" }, message.text),
          ),
        );
      }
    }

    this.syncControls();
    this.onStateChange?.();
  }
}

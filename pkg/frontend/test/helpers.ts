/**
 * Test doubles. The fixtures deliberately use invented product and term
 * names (prodx, aurorin, reason-a...) so the assertions prove that the UI
 * renders whatever the API says rather than any built-in medical facts.
 */

import type {
  ApiLike,
  CreateSessionResult,
  PostMessageResult,
  SessionView,
  Summary,
  TranscriptEntry,
} from "../src/api.js";

export function makeView(overrides: Partial<SessionView> = {}): SessionView {
  return {
    id: "sess-1",
    status: "active",
    backend_profile: "standard",
    created_at: "2023-11-14T22:13:20Z",
    updated_at: "2023-11-14T22:13:20Z",
    turn: 0,
    mandatory_coverage: 0.0,
    mandatory_done: 0,
    mandatory_total: 9,
    complete: false,
    escalated: false,
    last_reply: null,
    ...overrides,
  };
}

export function makeSummary(overrides: Partial<Summary> = {}): Summary {
  return {
    status: "complete",
    turns: 4,
    mandatory_coverage: 1.0,
    complete: true,
    escalated: false,
    collected: {},
    step_outcomes: {},
    canonical_contraindications: [],
    resolutions: [],
    condition_answers: {},
    dropped_mentions: [],
    safe_products: [],
    excluded_products: {},
    recommendation: null,
    flags: [],
    ...overrides,
  };
}

export function entry(overrides: Partial<TranscriptEntry> = {}): TranscriptEntry {
  return {
    seq: 0,
    turn: 0,
    ts: "2023-11-14T22:13:20Z",
    actor: "conversationalist",
    kind: "reply",
    payload: {},
    ...overrides,
  };
}

type Impl<T> = () => Promise<T>;

export class FakeClient implements ApiLike {
  calls: string[] = [];

  createSessionImpl: Impl<CreateSessionResult> = async () => ({
    session: makeView(),
    greeting: "GREETING-FROM-API",
  });
  getSessionImpl: (id: string) => Promise<SessionView> = async () => makeView();
  postMessageImpl: (id: string, text: string) => Promise<PostMessageResult> = async () => ({
    reply: "REPLY-FROM-API",
    session: makeView({ turn: 1 }),
  });
  getTranscriptImpl: (id: string) => Promise<{ entries: TranscriptEntry[] }> = async () => ({
    entries: [],
  });
  getSummaryImpl: (id: string) => Promise<Summary> = async () => makeSummary();
  finalizeImpl: (id: string) => Promise<Summary> = async () => makeSummary();

  createSession(): Promise<CreateSessionResult> {
    this.calls.push("createSession");
    return this.createSessionImpl();
  }
  getSession(id: string): Promise<SessionView> {
    this.calls.push("getSession");
    return this.getSessionImpl(id);
  }
  postMessage(id: string, text: string): Promise<PostMessageResult> {
    this.calls.push("postMessage");
    return this.postMessageImpl(id, text);
  }
  getTranscript(id: string): Promise<{ entries: TranscriptEntry[] }> {
    this.calls.push("getTranscript");
    return this.getTranscriptImpl(id);
  }
  getSummary(id: string): Promise<Summary> {
    this.calls.push("getSummary");
    return this.getSummaryImpl(id);
  }
  finalize(id: string): Promise<Summary> {
    this.calls.push("finalize");
    return this.finalizeImpl(id);
  }
}

export function deferred<T>(): {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (err: unknown) => void;
} {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

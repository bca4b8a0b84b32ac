/**
 * Typed client for the counseling service HTTP API (/api/v1).
 *
 * Every view in this app talks to the service exclusively through this
 * module, so the wire types below are the only place the server contract
 * is spelled out. The client never interprets medical content; it moves
 * JSON back and forth.
 */

export interface SessionView {
  id: string;
  status: string;
  backend_profile: string;
  created_at: string;
  updated_at: string;
  turn: number;
  mandatory_coverage: number;
  mandatory_done: number;
  mandatory_total: number;
  complete: boolean;
  escalated: boolean;
  last_reply: string | null;
}

export interface TranscriptEntry {
  seq: number;
  turn: number;
  ts: string;
  actor: string;
  kind: string;
  payload: Record<string, unknown>;
}

export interface TermResolution {
  table: string;
  term: string;
  mention: string;
  score: number | null;
}

export interface Summary {
  status: string;
  turns: number;
  mandatory_coverage: number;
  complete: boolean;
  escalated: boolean;
  collected: Record<string, unknown>;
  step_outcomes: Record<string, string>;
  canonical_contraindications: [string, string][];
  resolutions: TermResolution[];
  condition_answers: Record<string, boolean>;
  dropped_mentions: string[];
  safe_products: string[] | null;
  excluded_products: Record<string, string[]> | null;
  recommendation: string | null;
  flags: string[];
}

export interface CreateSessionResult {
  session: SessionView;
  greeting: string;
}

export interface PostMessageResult {
  reply: string;
  session: SessionView;
}

export interface HealthInfo {
  status: string;
  spec: string;
  spec_version: number;
  version: string;
}

/**
 * Error kinds mirror the service's exception names (SessionBusy,
 * SessionNotActive, SessionNotFound, NotFinalizable, ValidationError...).
 * Transport failures surface as kind "NetworkError" with status 0.
 */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly kind: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ApiClientOptions {
  baseUrl?: string;
  token?: string | null;
  fetchFn?: typeof fetch;
}

async function errorFromResponse(response: Response): Promise<ApiError> {
  let kind = "HttpError";
  let message = `${response.status} ${response.statusText}`.trim();
  try {
    const body: unknown = await response.json();
    if (body && typeof body === "object") {
      const record = body as Record<string, unknown>;
      if (typeof record.kind === "string") kind = record.kind;
      if (typeof record.error === "string") message = record.error;
      else if (typeof record.detail === "string") message = record.detail;
      else if (record.detail !== undefined) message = JSON.stringify(record.detail);
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, kind, message);
}

export class ApiClient {
  private readonly base: string;
  private readonly token: string | null;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiClientOptions = {}) {
    this.base = (options.baseUrl ?? "").replace(/\/+$/, "");
    this.token = options.token ?? null;
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}/api/v1${path}`, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      const detail = err instanceof Error ? err.message : String(err);
      throw new ApiError(0, "NetworkError", detail);
    }
    if (!response.ok) throw await errorFromResponse(response);
    return (await response.json()) as T;
  }

  health(): Promise<HealthInfo> {
    return this.request("GET", "/health");
  }

  createSession(backendProfile?: string): Promise<CreateSessionResult> {
    const body = backendProfile === undefined ? {} : { backend_profile: backendProfile };
    return this.request("POST", "/sessions", body);
  }

  listSessions(): Promise<{ sessions: SessionView[] }> {
    return this.request("GET", "/sessions");
  }

  getSession(id: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${encodeURIComponent(id)}`);
  }

  postMessage(id: string, text: string): Promise<PostMessageResult> {
    return this.request("POST", `/sessions/${encodeURIComponent(id)}/messages`, { text });
  }

  getTranscript(id: string): Promise<{ entries: TranscriptEntry[] }> {
    return this.request("GET", `/sessions/${encodeURIComponent(id)}/transcript`);
  }

  getSummary(id: string): Promise<Summary> {
    return this.request("GET", `/sessions/${encodeURIComponent(id)}/summary`);
  }

  finalize(id: string): Promise<Summary> {
    return this.request("POST", `/sessions/${encodeURIComponent(id)}/finalize`);
  }
}

/** The subset of ApiClient the views depend on; tests substitute fakes. */
export type ApiLike = Pick<
  ApiClient,
  | "createSession"
  | "getSession"
  | "postMessage"
  | "getTranscript"
  | "getSummary"
  | "finalize"
>;

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface Captured {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: string | null;
}

function capturingFetch(
  status: number,
  body: unknown,
): { calls: Captured[]; fetchFn: typeof fetch } {
  const calls: Captured[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    calls.push({
      url: String(input),
      method: init?.method ?? "GET",
      headers: (init?.headers as Record<string, string>) ?? {},
      body: typeof init?.body === "string" ? init.body : null,
    });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }) as typeof fetch;
  return { calls, fetchFn };
}

describe("ApiClient", () => {
  it("joins the base url without a double slash and hits /api/v1", async () => {
    const { calls, fetchFn } = capturingFetch(200, { status: "ok" });
    const client = new ApiClient({ baseUrl: "http://host:9/", fetchFn });
    await client.health();
    expect(calls[0].url).toBe("http://host:9/api/v1/health");
  });

  it("defaults to same-origin relative paths", async () => {
    const { calls, fetchFn } = capturingFetch(200, { sessions: [] });
    await new ApiClient({ fetchFn }).listSessions();
    expect(calls[0].url).toBe("/api/v1/sessions");
  });

  it("sends the bearer token on every call when configured", async () => {
    const { calls, fetchFn } = capturingFetch(200, { entries: [] });
    await new ApiClient({ token: "s3cret", fetchFn }).getTranscript("abc");
    expect(calls[0].headers.authorization).toBe("Bearer s3cret");
  });

  it("posts JSON bodies with the right content type", async () => {
    const { calls, fetchFn } = capturingFetch(200, { reply: "r", session: {} });
    await new ApiClient({ fetchFn }).postMessage("abc", "hello");
    expect(calls[0].method).toBe("POST");
    expect(calls[0].headers["content-type"]).toBe("application/json");
    expect(JSON.parse(calls[0].body ?? "")).toEqual({ text: "hello" });
  });

  it("url-encodes session ids", async () => {
    const { calls, fetchFn } = capturingFetch(200, {});
    await new ApiClient({ fetchFn }).getSession("a/b");
    expect(calls[0].url).toBe("/api/v1/sessions/a%2Fb");
  });

  it("maps service error bodies onto ApiError with the service's kind", async () => {
    const { fetchFn } = capturingFetch(409, {
      error: "another message is in flight",
      kind: "SessionBusy",
    });
    const err = await new ApiClient({ fetchFn })
      .postMessage("abc", "hi")
      .then(() => null)
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).kind).toBe("SessionBusy");
    expect((err as ApiError).message).toContain("in flight");
  });

  it("surfaces FastAPI detail-only bodies (401 token guard)", async () => {
    const { fetchFn } = capturingFetch(401, { detail: "missing bearer token" });
    const err = await new ApiClient({ fetchFn })
      .listSessions()
      .catch((e: unknown) => e);
    expect((err as ApiError).kind).toBe("HttpError");
    expect((err as ApiError).message).toBe("missing bearer token");
  });

  it("wraps transport failures as NetworkError with status 0", async () => {
    const fetchFn = (async () => {
      throw new TypeError("fetch failed");
    }) as typeof fetch;
    const err = await new ApiClient({ fetchFn }).health().catch((e: unknown) => e);
    expect((err as ApiError).kind).toBe("NetworkError");
    expect((err as ApiError).status).toBe(0);
  });
});

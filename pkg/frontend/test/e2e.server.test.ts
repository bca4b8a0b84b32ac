/**
 * End-to-end: boots the real counseling API server (scripted deterministic
 * backend, fixed clock, throwaway sqlite file) and drives the actual view
 * code against it over HTTP inside jsdom. Covers the release gate for the
 * UI: a happy-path conversation completes in the chat view with the
 * disclosure line first, and the review view shows every exclusion with
 * its reason term.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ChatView, SESSION_STORAGE_KEY } from "../src/chat.js";
import { ReviewView } from "../src/review.js";

const REPO_ROOT = resolve(dirname(fileURLToPath(import.meta.url)), "..", "..");
const SPEC = join(REPO_ROOT, "fixtures", "specs", "ecp_counseling.yaml");
const KB = join(REPO_ROOT, "fixtures", "kb", "ecp_kb.yaml");

const HAPPY_LINES = [
  "Hi, I need the morning-after pill.",
  "About 14 hours ago.",
  "No allergies.",
  "Nothing regular.",
  "No ongoing illnesses.",
  "No.",
  "No chance, my last period was normal.",
  "No, never.",
  "All correct.",
  "Okay.",
  "Norlevex please.",
  "Okay, I will.",
  "No, all clear. Thank you!",
];

const ASTHMA_LINES = [
  "Hi, I had an accident with a condom last night.",
  "Roughly 12 hours ago.",
  "No allergies.",
  "Nothing regular.",
  "I have asthma.",
  "Yes, I use cortisone daily.",
  "No.",
  "No.",
  "No.",
  "Yes, that's right.",
  "Okay.",
  "Gestrapid sounds good.",
  "Okay.",
  "No, thank you.",
];

function freePort(): Promise<number> {
  return new Promise((resolvePort, rejectPort) => {
    const server = net.createServer();
    server.once("error", rejectPort);
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolvePort(port));
      } else {
        server.close(() => rejectPort(new Error("no port assigned")));
      }
    });
  });
}

let serverProc: ChildProcess | null = null;
let baseUrl = "";
let workDir = "";
let client: ApiClient;
const passed = { happy: false, exclusions: false };

async function waitForHealth(url: string): Promise<void> {
  for (let attempt = 0; attempt < 120; attempt += 1) {
    try {
      const response = await fetch(`${url}/api/v1/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`server at ${url} never became healthy`);
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "ecpui-e2e-"));
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  serverProc = spawn(
    "ecpcounsel",
    [
      "serve",
      "--spec",
      SPEC,
      "--kb",
      KB,
      "--db",
      join(workDir, "sessions.db"),
      "--host",
      "127.0.0.1",
      "--port",
      String(port),
      "--fixed-clock",
    ],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  serverProc.stderr?.on("data", (chunk: Buffer) => {
    process.stderr.write(`[server] ${chunk.toString()}`);
  });
  await waitForHealth(baseUrl);
  client = new ApiClient({ baseUrl });
});

afterAll(async () => {
  if (serverProc) {
    serverProc.kill("SIGTERM");
    await new Promise((r) => setTimeout(r, 300));
    if (serverProc.exitCode === null) serverProc.kill("SIGKILL");
  }
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

beforeEach(() => {
  sessionStorage.clear();
  document.body.innerHTML = "";
});

function mountChat(): { chat: ChatView; root: HTMLElement } {
  const root = document.createElement("div");
  document.body.append(root);
  const chat = new ChatView(client, window);
  chat.mount(root);
  return { chat, root };
}

async function mountReview(sessionId: string): Promise<{ review: ReviewView; root: HTMLElement }> {
  const root = document.createElement("div");
  document.body.append(root);
  const review = new ReviewView(client);
  review.mount(root);
  await review.load(sessionId);
  return { review, root };
}

describe("ui end to end against a live server", () => {
  it("completes a happy-path conversation; disclosure is the first rendered message", async () => {
    const { chat, root } = mountChat();
    await chat.start();

    const first = root.querySelector(".message");
    expect(first?.classList.contains("assistant")).toBe(true);
    expect(first?.textContent).toContain("Welcome to the pharmacy counseling assistant");
    expect(chat.state.messages[0].speaker).toBe("assistant");

    for (const line of HAPPY_LINES) {
      await chat.send(line);
      expect(chat.state.notice).toBeNull();
    }

    expect(chat.state.status).toBe("complete");
    expect(root.querySelector(".status-bar")?.textContent).toContain("27 / 27");
    expect((root.querySelector(".chat-input") as HTMLInputElement).disabled).toBe(true);

    const sessionId = chat.state.sessionId ?? "";
    expect(sessionId).not.toBe("");
    expect(sessionStorage.getItem(SESSION_STORAGE_KEY)).toBe(sessionId);

    const { review, root: reviewRoot } = await mountReview(sessionId);
    expect(review.state.notFinalizable).toBe(false);
    expect(reviewRoot.textContent).toContain("Norlevex");
    expect(reviewRoot.textContent).toContain("No products were excluded.");
    const outcomes = review.state.summary?.step_outcomes ?? {};
    expect(Object.values(outcomes).filter((status) => status === "done").length).toBeGreaterThanOrEqual(27);
    passed.happy = true;
  });

  it("shows every exclusion with its reason term after a contraindicated conversation", async () => {
    const { chat, root } = mountChat();
    await chat.start();
    expect(root.querySelector(".message")?.textContent).toContain(
      "Welcome to the pharmacy counseling assistant",
    );

    for (const line of ASTHMA_LINES) {
      await chat.send(line);
      expect(chat.state.notice).toBeNull();
    }

    const askedAboutSteroids = chat.state.messages.some(
      (message) => message.speaker === "assistant" && /glucocorticoid/i.test(message.text),
    );
    expect(askedAboutSteroids).toBe(true);
    expect(chat.state.status).toBe("complete");

    const sessionId = chat.state.sessionId ?? "";
    const { review, root: reviewRoot } = await mountReview(sessionId);
    const summary = review.state.summary;
    expect(summary?.excluded_products).toEqual({ ulipra: ["Asthma"] });

    const exclusionRows = Array.from(
      reviewRoot.querySelectorAll(".exclusions .product.excluded"),
    ).map((node) => node.textContent ?? "");
    expect(exclusionRows).toHaveLength(1);
    expect(exclusionRows[0]).toContain("ulipra");
    expect(exclusionRows[0]).toContain("Asthma");

    const resolutionsText = reviewRoot.querySelector("table.resolutions")?.textContent ?? "";
    expect(resolutionsText).toContain("asthma");
    // condition answers are keyed by the normalized (lowercase) term
    expect(reviewRoot.textContent).toContain("asthma: yes");
    expect(reviewRoot.textContent).toContain("Gestrapid");
    passed.exclusions = true;
  });

  it("acceptance: ui end to end", () => {
    const ok = passed.happy && passed.exclusions;
    const detail = ok
      ? "happy path complete in chat view; disclosure first; review shows exclusion reasons"
      : `happy=${passed.happy} exclusions=${passed.exclusions}`;
    console.log(`\nACCEPTANCE ${ok ? "PASS" : "FAIL"}: ui_end_to_end  [${detail}]`);
    expect(ok).toBe(true);
  });
});

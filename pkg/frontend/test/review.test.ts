import { beforeEach, describe, expect, it } from "vitest";

import { ApiError } from "../src/api.js";
import { ReviewView } from "../src/review.js";
import { FakeClient, entry, makeSummary, makeView } from "./helpers.js";

function mountView(client: FakeClient): { view: ReviewView; root: HTMLElement } {
  const root = document.createElement("div");
  document.body.append(root);
  const view = new ReviewView(client);
  view.mount(root);
  return { view, root };
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("ReviewView", () => {
  it("renders the finalized report with every exclusion reason", async () => {
    const client = new FakeClient();
    client.getSessionImpl = async () =>
      makeView({ id: "done-1", status: "complete", complete: true, mandatory_done: 9 });
    client.finalizeImpl = async () =>
      makeSummary({
        safe_products: ["aurorin"],
        excluded_products: { prodx: ["reason-a", "reason-b"], prody: ["reason-c"] },
        resolutions: [
          { table: "allergies", term: "reason-a", mention: "resona", score: 0.8321 },
          { table: "medications_and_diseases", term: "reason-c", mention: "reason-c", score: null },
        ],
        condition_answers: { "reason-a": true },
        collected: { hours_since_intercourse: "10 hours" },
        step_outcomes: { s1: "done", s2: "pending" },
        recommendation: "Take Aurorin as soon as possible.",
      });
    const { view, root } = mountView(client);
    await view.load("done-1");

    expect(client.calls).toContain("finalize");
    expect(client.calls).not.toContain("getSummary");

    const exclusionRows = Array.from(root.querySelectorAll(".exclusions .product.excluded")).map(
      (node) => node.textContent ?? "",
    );
    expect(exclusionRows).toHaveLength(2);
    expect(exclusionRows[0]).toContain("prodx");
    expect(exclusionRows[0]).toContain("reason-a");
    expect(exclusionRows[0]).toContain("reason-b");
    expect(exclusionRows[1]).toContain("prody");
    expect(exclusionRows[1]).toContain("reason-c");

    const tableText = root.querySelector("table.resolutions")?.textContent ?? "";
    expect(tableText).toContain("resona");
    expect(tableText).toContain("reason-a");
    expect(tableText).toContain("0.8321");
    expect(tableText).toContain("n/a");

    expect(root.textContent).toContain("Take Aurorin as soon as possible.");
    expect(root.textContent).toContain("reason-a: yes");
    expect(root.textContent).toContain("10 hours");
    expect(root.querySelector(".badge-done")).not.toBeNull();
    expect(root.querySelector(".badge-pending")).not.toBeNull();
    expect(root.querySelector(".escalation-box")).toBeNull();
  });

  it("shows a not-finalizable notice with the live summary for active sessions", async () => {
    const client = new FakeClient();
    client.getSessionImpl = async () => makeView({ id: "live-1", status: "active" });
    client.getSummaryImpl = async () => makeSummary({ status: "active", complete: false });
    const { view, root } = mountView(client);
    await view.load("live-1");

    expect(client.calls).toContain("getSummary");
    expect(client.calls).not.toContain("finalize");
    expect(root.textContent).toMatch(/not finalizable/i);
  });

  it("falls back to the live summary when finalize races a status change", async () => {
    const client = new FakeClient();
    client.getSessionImpl = async () => makeView({ id: "race-1", status: "complete" });
    client.finalizeImpl = async () => {
      throw new ApiError(409, "NotFinalizable", "session is active");
    };
    client.getSummaryImpl = async () => makeSummary();
    const { view, root } = mountView(client);
    await view.load("race-1");

    expect(client.calls).toContain("getSummary");
    expect(root.textContent).toMatch(/not finalizable/i);
  });

  it("highlights the escalation cause from the transcript flags", async () => {
    const client = new FakeClient();
    client.getSessionImpl = async () => makeView({ id: "esc-1", status: "escalated", escalated: true });
    client.finalizeImpl = async () =>
      makeSummary({
        status: "escalated",
        escalated: true,
        complete: false,
        safe_products: null,
        excluded_products: null,
        recommendation: null,
        flags: ["self_correction_retry", "escalation"],
      });
    client.getTranscriptImpl = async () => ({
      entries: [
        entry({ kind: "flag", payload: { code: "self_correction_retry", detail: "tool call rejected" } }),
        entry({ kind: "flag", payload: { code: "escalation", detail: "second failure in one turn" } }),
      ],
    });
    const { view, root } = mountView(client);
    await view.load("esc-1");

    const box = root.querySelector(".escalation-box") as HTMLElement;
    expect(box).not.toBeNull();
    expect(box.textContent).toContain("Escalated to a human pharmacist");
    expect(box.textContent).toContain("second failure in one turn");
    expect(root.textContent).toContain("No product partition was computed.");
  });

  it("explains how to reach it when no session id is given", async () => {
    const { view, root } = mountView(new FakeClient());
    await view.load("");
    expect(root.textContent).toContain("No session id given");
  });

  it("offers a retry when the report cannot be loaded", async () => {
    const client = new FakeClient();
    let attempts = 0;
    client.getSessionImpl = async () => {
      attempts += 1;
      if (attempts === 1) throw new ApiError(0, "NetworkError", "connection refused");
      return makeView({ id: "r-1", status: "complete" });
    };
    const { view, root } = mountView(client);
    await view.load("r-1");
    expect(root.textContent).toContain("connection refused");

    (root.querySelector(".retry") as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(root.querySelector(".error-banner")).toBeNull();
    expect(root.textContent).toContain("Recommendation");
  });
});

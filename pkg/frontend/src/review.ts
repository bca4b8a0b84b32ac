/**
 * Pharmacist-facing review view.
 *
 * Fetches the session, its summary report and the raw transcript, and lays
 * them out for audit. For ended sessions the report comes from the
 * finalize endpoint (persisted snapshot); an active session instead shows
 * the live summary plus a "not finalizable yet" notice. Every excluded
 * product is rendered together with the reason terms the service supplied.
 */

import {
  ApiError,
  type ApiLike,
  type SessionView,
  type Summary,
  type TranscriptEntry,
} from "./api.js";
import { clear, el, type Child } from "./dom.js";

export interface ReviewViewState {
  sessionId: string | null;
  loading: boolean;
  error: string | null;
  notFinalizable: boolean;
  view: SessionView | null;
  summary: Summary | null;
  transcript: TranscriptEntry[];
}

function entrySnippet(entry: TranscriptEntry): string {
  const payload = entry.payload;
  switch (entry.kind) {
    case "customer_message":
    case "reply":
      return String(payload.text ?? "");
    case "flag":
      return [payload.code, payload.detail].filter(Boolean).join(": ");
    case "tool_call":
    case "tool_result":
      return String(payload.name ?? "");
    case "status_change":
      return String(payload.to ?? payload.status ?? "");
    default: {
      const text = JSON.stringify(payload);
      return text.length > 120 ? `${text.slice(0, 117)}...` : text;
    }
  }
}

export class ReviewView {
  readonly state: ReviewViewState = {
    sessionId: null,
    loading: false,
    error: null,
    notFinalizable: false,
    view: null,
    summary: null,
    transcript: [],
  };

  private root: HTMLElement | null = null;

  constructor(private readonly client: ApiLike) {}

  mount(root: HTMLElement): void {
    this.root = root;
    this.render();
  }

  async load(sessionId: string): Promise<void> {
    this.state.sessionId = sessionId || null;
    this.state.loading = true;
    this.state.error = null;
    this.state.notFinalizable = false;
    this.state.view = null;
    this.state.summary = null;
    this.state.transcript = [];
    this.render();
    if (!this.state.sessionId) {
      this.state.loading = false;
      this.render();
      return;
    }
    try {
      const view = await this.client.getSession(this.state.sessionId);
      this.state.view = view;
      this.state.transcript = (await this.client.getTranscript(this.state.sessionId)).entries;
      if (view.status === "active") {
        this.state.notFinalizable = true;
        this.state.summary = await this.client.getSummary(this.state.sessionId);
      } else {
        try {
          this.state.summary = await this.client.finalize(this.state.sessionId);
        } catch (err) {
          // the session may have changed under us; fall back to the live view
          if (err instanceof ApiError && err.kind === "NotFinalizable") {
            this.state.notFinalizable = true;
            this.state.summary = await this.client.getSummary(this.state.sessionId);
          } else {
            throw err;
          }
        }
      }
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    } finally {
      this.state.loading = false;
      this.render();
    }
  }

  render(): void {
    if (!this.root) return;
    const doc = this.root.ownerDocument;
    clear(this.root);
    const add = (node: Child) => {
      if (node) this.root?.append(node);
    };

    add(el(doc, "h2", {}, "Consultation review"));

    if (!this.state.sessionId) {
      add(
        el(
          doc,
          "p",
          { class: "notice" },
          "No session id given. Open this view as #/review/<session id>, or from the chat's review link.",
        ),
      );
      return;
    }
    add(el(doc, "p", { class: "session-id" }, "Session ", el(doc, "code", {}, this.state.sessionId)));

    if (this.state.loading) {
      add(el(doc, "p", { class: "loading" }, "Loading report..."));
      return;
    }
    if (this.state.error) {
      const retry = el(doc, "button", { class: "retry", type: "button" }, "Retry");
      retry.addEventListener("click", () => void this.load(this.state.sessionId ?? ""));
      add(el(doc, "div", { class: "error-banner" }, `Could not load the report: ${this.state.error} `, retry));
      return;
    }
    const view = this.state.view;
    const summary = this.state.summary;
    if (!view || !summary) return;

    add(
      el(
        doc,
        "p",
        { class: "status-line" },
        el(doc, "span", { class: `status-chip status-${view.status}` }, view.status),
        ` ${summary.turns} turns, mandatory steps ${view.mandatory_done} / ${view.mandatory_total} done`,
      ),
    );
    if (this.state.notFinalizable) {
      add(
        el(
          doc,
          "p",
          { class: "notice" },
          "This consultation is not finalizable yet (still active); showing the live summary instead of a persisted report.",
        ),
      );
    }

    if (summary.escalated) {
      const causes = this.state.transcript
        .filter((entry) => entry.kind === "flag")
        .map((entry) => entrySnippet(entry))
        .filter((text) => text.length > 0);
      const causeList = el(doc, "ul", {});
      for (const cause of causes) causeList.append(el(doc, "li", {}, cause));
      add(
        el(
          doc,
          "div",
          { class: "escalation-box" },
          el(doc, "h3", {}, "Escalated to a human pharmacist"),
          causes.length ? causeList : el(doc, "p", {}, "No cause details recorded."),
        ),
      );
    }

    add(el(doc, "h3", {}, "Recommendation"));
    add(
      summary.recommendation
        ? el(doc, "blockquote", { class: "recommendation" }, summary.recommendation)
        : el(doc, "p", { class: "muted" }, "No recommendation was recorded."),
    );

    add(el(doc, "h3", {}, "Product partition"));
    if (summary.safe_products === null || summary.excluded_products === null) {
      add(el(doc, "p", { class: "muted" }, "No product partition was computed."));
    } else {
      const safe = el(doc, "ul", { class: "safe-products" });
      for (const productId of summary.safe_products) {
        safe.append(el(doc, "li", { class: "product safe" }, productId));
      }
      add(
        el(
          doc,
          "p",
          {},
          `Safe to dispense (${summary.safe_products.length}):`,
          summary.safe_products.length ? safe : el(doc, "span", { class: "muted" }, " none"),
        ),
      );
      const exclusions = Object.entries(summary.excluded_products);
      if (exclusions.length === 0) {
        add(el(doc, "p", { class: "muted" }, "No products were excluded."));
      } else {
        const list = el(doc, "ul", { class: "exclusions" });
        for (const [productId, reasons] of exclusions) {
          list.append(
            el(
              doc,
              "li",
              { class: "product excluded" },
              el(doc, "strong", {}, productId),
              ` excluded because of: ${reasons.join(", ")}`,
            ),
          );
        }
        add(list);
      }
    }

    add(el(doc, "h3", {}, "Term resolutions"));
    if (summary.resolutions.length === 0) {
      add(el(doc, "p", { class: "muted" }, "No contraindication terms were resolved."));
    } else {
      const table = el(doc, "table", { class: "resolutions" });
      table.append(
        el(
          doc,
          "tr",
          {},
          el(doc, "th", {}, "Customer said"),
          el(doc, "th", {}, "Canonical term"),
          el(doc, "th", {}, "Table"),
          el(doc, "th", {}, "Score"),
        ),
      );
      for (const resolution of summary.resolutions) {
        table.append(
          el(
            doc,
            "tr",
            {},
            el(doc, "td", {}, resolution.mention),
            el(doc, "td", {}, resolution.term),
            el(doc, "td", {}, resolution.table),
            el(doc, "td", {}, resolution.score === null ? "n/a" : resolution.score.toFixed(4)),
          ),
        );
      }
      add(table);
    }

    const conditions = Object.entries(summary.condition_answers);
    if (conditions.length) {
      add(el(doc, "h3", {}, "Condition answers"));
      const list = el(doc, "ul", { class: "conditions" });
      for (const [term, answer] of conditions) {
        list.append(el(doc, "li", {}, `${term}: ${answer ? "yes" : "no"}`));
      }
      add(list);
    }

    const collected = Object.entries(summary.collected);
    if (collected.length) {
      add(el(doc, "h3", {}, "Collected answers"));
      const dl = el(doc, "dl", { class: "collected" });
      for (const [key, value] of collected) {
        dl.append(el(doc, "dt", {}, key), el(doc, "dd", {}, String(value)));
      }
      add(dl);
    }

    if (summary.dropped_mentions.length) {
      add(
        el(
          doc,
          "p",
          { class: "muted dropped" },
          `Mentions set aside as not relevant: ${summary.dropped_mentions.join(", ")}`,
        ),
      );
    }

    add(el(doc, "h3", {}, "Step outcomes"));
    const steps = el(doc, "ul", { class: "steps" });
    for (const [stepId, outcome] of Object.entries(summary.step_outcomes)) {
      steps.append(
        el(
          doc,
          "li",
          { class: `step ${outcome}` },
          el(doc, "code", {}, stepId),
          el(doc, "span", { class: `badge badge-${outcome}` }, outcome),
        ),
      );
    }
    add(steps);

    if (summary.flags.length) {
      add(el(doc, "p", { class: "flags" }, `Flags raised: ${summary.flags.join(", ")}`));
    }

    const log = el(doc, "ol", { class: "transcript" });
    for (const entry of this.state.transcript) {
      log.append(
        el(
          doc,
          "li",
          { class: `entry entry-${entry.kind}` },
          el(doc, "span", { class: "meta" }, `t${entry.turn} ${entry.actor} ${entry.kind}`),
          " ",
          el(doc, "span", { class: "snippet" }, entrySnippet(entry)),
        ),
      );
    }
    add(
      el(
        doc,
        "details",
        { class: "transcript-box" },
        el(doc, "summary", {}, `Full transcript (${this.state.transcript.length} entries)`),
        log,
      ),
    );
  }
}

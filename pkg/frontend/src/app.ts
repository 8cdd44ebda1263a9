/**
 * Single-page console over the /api/v1 session contract.
 *
 * Layout is a session list on the left and the selected session on the
 * right: header badges, the agent timeline, transcript and controls, the
 * live metric chart, a checkpoint editor while the run is paused for
 * review, and the report with mismatch overlays once the run is done.
 *
 * The view polls the session detail while anything can still change and
 * feeds the chart from the metric stream; every displayed number comes
 * straight from the service.
 */

import {
  ApiClient,
  ApiError,
  CheckpointPatch,
  FetchLike,
  Report,
  SessionConfig,
  SessionDetail,
} from "./api.js";
import { ChatPanel } from "./chat.js";
import { MetricChart } from "./chart.js";
import { el, clear, fmt } from "./dom.js";
import { OptimizerEditor, ParameterEditor } from "./editor.js";
import { MismatchView } from "./mismatch.js";
import { FeedState, MetricFeed } from "./sse.js";
import { WorkflowTimeline } from "./timeline.js";

export interface AppOptions {
  apiBase?: string;
  pollMs?: number;
  fetchFn?: FetchLike;
  llmConfigured?: boolean;
}

const TERMINAL = new Set(["done", "failed"]);

class SessionView {
  readonly element: HTMLElement;
  readonly chart: MetricChart;
  readonly feed: MetricFeed;
  private readonly timeline: WorkflowTimeline;
  private readonly chat: ChatPanel;
  private readonly headerBadges: HTMLElement;
  private readonly feedBadge: HTMLElement;
  private readonly checkpointHost: HTMLElement;
  private readonly reportHost: HTMLElement;
  private readonly errorBar: HTMLElement;
  private editor: ParameterEditor | OptimizerEditor | null = null;
  private editorVersion = -1;
  private editorKind = "";
  private reportShown = false;
  private loadingReport = false;

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    private readonly requestRefresh: () => void,
    llmConfigured: boolean,
  ) {
    this.headerBadges = el("div", { class: "session-badges" });
    this.feedBadge = el("span", { class: "feed-state" });
    this.timeline = new WorkflowTimeline();
    this.chart = new MetricChart();
    this.chat = new ChatPanel({
      onAdvance: () => void this.advance(),
      onOpenReport: () => {
        this.reportHost.scrollIntoView?.({ behavior: "smooth" });
      },
    }, llmConfigured);
    this.checkpointHost = el("section", { class: "checkpoint-host hidden" });
    this.reportHost = el("section", { class: "report-host hidden" });
    this.errorBar = el("p", { class: "error-bar hidden" });

    this.element = el("div", { class: "session-view" },
      el("header", { class: "session-header" },
        el("h2", {}, `session ${sessionId.slice(0, 8)}`),
        this.headerBadges,
      ),
      this.errorBar,
      this.timeline.element,
      el("section", { class: "chart-section" },
        el("h3", {}, "Misfit by evaluation ", this.feedBadge),
        this.chart.element,
      ),
      this.checkpointHost,
      this.chat.element,
      this.reportHost,
    );

    this.feed = new MetricFeed(api, sessionId, {
      onRow: (row) => this.chart.push(row),
      onEnd: () => this.requestRefresh(),
      onState: (state) => this.showFeedState(state),
    });
  }

  start(): void {
    this.feed.start(0);
  }

  dispose(): void {
    this.feed.stop();
  }

  private showFeedState(state: FeedState): void {
    const text: Record<FeedState, string> = {
      idle: "",
      connecting: "connecting",
      live: "live",
      retrying: "reconnecting",
      ended: "",
    };
    this.feedBadge.textContent = text[state];
    this.feedBadge.className = `feed-state feed-${state}`;
  }

  private showError(message: string): void {
    this.errorBar.textContent = message;
    this.errorBar.classList.toggle("hidden", message === "");
  }

  private async advance(): Promise<void> {
    try {
      await this.api.advance(this.sessionId);
      this.showError("");
    } catch (error) {
      if (!(error instanceof ApiError && error.errorType === "Busy")) {
        this.showError(error instanceof Error ? error.message : String(error));
      }
    }
    this.requestRefresh();
  }

  async refresh(detail: SessionDetail): Promise<void> {
    clear(this.headerBadges);
    this.headerBadges.appendChild(
      el("span", { class: `badge phase-badge` }, detail.phase));
    this.headerBadges.appendChild(
      el("span", { class: `badge status-badge status-${detail.status}` },
        detail.status));
    if (detail.best !== null) {
      this.headerBadges.appendChild(el("span", { class: "badge best-badge" },
        `best ${fmt(detail.best.metric, 4)}`));
    }

    this.timeline.render(detail);
    this.chat.update(detail);
    await this.syncCheckpoint(detail);
    await this.syncReport(detail);
  }

  private async syncCheckpoint(detail: SessionDetail): Promise<void> {
    if (detail.status !== "waiting_checkpoint") {
      this.checkpointHost.classList.add("hidden");
      this.editor = null;
      this.editorVersion = -1;
      return;
    }
    // Rebuild only when the version moved, so typing survives polls.
    if (this.editor !== null &&
        this.editorVersion === detail.checkpoint_version) {
      return;
    }
    let view;
    try {
      view = await this.api.getCheckpoint(this.sessionId);
    } catch (error) {
      this.showError(error instanceof Error ? error.message : String(error));
      return;
    }
    const io = {
      patch: (body: CheckpointPatch) =>
        this.api.patchCheckpoint(this.sessionId, body),
      reload: () => this.api.getCheckpoint(this.sessionId),
      onApplied: () => this.requestRefresh(),
    };
    if (this.editor === null || this.editorKind !== view.kind) {
      this.editor = view.kind === "parameters"
        ? new ParameterEditor(io)
        : new OptimizerEditor(io);
      this.editorKind = view.kind;
      clear(this.checkpointHost);
      this.checkpointHost.appendChild(el("h3", {},
        view.kind === "parameters"
          ? "Parameter checkpoint"
          : "Optimizer checkpoint"));
      this.checkpointHost.appendChild(this.editor.element);
    }
    this.editor.load(view);
    this.editorVersion = view.version;
    this.checkpointHost.classList.remove("hidden");
  }

  private async syncReport(detail: SessionDetail): Promise<void> {
    if (detail.phase !== "done" || this.reportShown || this.loadingReport) {
      return;
    }
    this.loadingReport = true;
    try {
      const report = await this.api.getReport(this.sessionId);
      this.renderReport(report);
      this.reportShown = true;
    } catch (error) {
      this.showError(error instanceof Error ? error.message : String(error));
    } finally {
      this.loadingReport = false;
    }
  }

  private renderReport(report: Report): void {
    clear(this.reportHost);
    this.reportHost.classList.remove("hidden");
    this.reportHost.appendChild(el("h3", {}, "Report"));

    const improvement = report.improvement_pct;
    this.reportHost.appendChild(el("p", { class: "report-line" },
      el("span", { class: "report-initial" },
        `initial ${fmt(report.initial, 4)}`),
      el("span", { class: "report-best" }, `best ${fmt(report.best, 4)}`),
      el("span", { class: "report-improvement" },
        improvement === undefined
          ? "improvement -"
          : `improvement ${improvement.toFixed(1)}%`),
    ));

    if (report.parameters !== undefined && report.parameters.length > 0) {
      const table = el("table", { class: "report-params" });
      table.appendChild(el("thead", {}, el("tr", {},
        el("th", {}, "parameter"), el("th", {}, "lower"),
        el("th", {}, "upper"), el("th", {}, "initial"), el("th", {}, "best"),
      )));
      const body = el("tbody");
      for (const row of report.parameters) {
        body.appendChild(el("tr", { "data-name": row.name },
          el("td", {}, row.name),
          el("td", {}, fmt(row.lower, 4)),
          el("td", {}, fmt(row.upper, 4)),
          el("td", {}, fmt(row.initial, 4)),
          el("td", { class: "report-best-value" }, fmt(row.best, 4)),
        ));
      }
      table.appendChild(body);
      this.reportHost.appendChild(table);
    }

    if (report.recommendations !== undefined &&
        report.recommendations.length > 0) {
      const list = el("ul", { class: "report-recommendations" });
      for (const item of report.recommendations) {
        list.appendChild(el("li", {}, item));
      }
      this.reportHost.appendChild(el("h4", {}, "Recommendations"));
      this.reportHost.appendChild(list);
    }

    if (report.text !== undefined && report.text !== "") {
      this.reportHost.appendChild(
        el("pre", { class: "report-text" }, report.text));
    }

    const mismatch = new MismatchView(
      (file) => this.api.fetchReportFile(this.sessionId, file));
    this.reportHost.appendChild(el("h4", {}, "Observed vs simulated"));
    this.reportHost.appendChild(mismatch.element);
    void mismatch.load(report);
  }
}

export class App {
  readonly api: ApiClient;
  readonly element: HTMLElement;
  private readonly listEl: HTMLElement;
  private readonly mainEl: HTMLElement;
  private readonly pollMs: number;
  private readonly llmConfigured: boolean;
  private view: SessionView | null = null;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private disposed = false;
  private refreshing = false;

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.api = new ApiClient(options.apiBase ?? "", options.fetchFn);
    this.pollMs = options.pollMs ?? 1500;
    this.llmConfigured = options.llmConfigured ?? false;

    this.listEl = el("ul", { class: "session-list" });
    const newButton = el("button", { class: "new-session", type: "button" },
      "New session") as HTMLButtonElement;
    newButton.addEventListener("click", () => this.showCreateForm());
    this.mainEl = el("main", { class: "main" },
      el("p", { class: "main-placeholder" },
        "Pick a session or start a new one."));
    this.element = el("div", { class: "app" },
      el("aside", { class: "sidebar" },
        el("h1", {}, "petromatch"),
        newButton,
        this.listEl,
      ),
      this.mainEl,
    );
    root.appendChild(this.element);
    void this.refreshList();
  }

  dispose(): void {
    this.disposed = true;
    this.stopPolling();
    this.view?.dispose();
    this.view = null;
  }

  async refreshList(): Promise<void> {
    let sessions;
    try {
      sessions = (await this.api.listSessions()).sessions;
    } catch {
      return; // sidebar keeps its last state when the service blips
    }
    clear(this.listEl);
    for (const brief of sessions) {
      const item = el("li", {
        class: "session-item", "data-id": brief.id,
      },
        el("span", { class: "item-id" }, brief.id.slice(0, 8)),
        el("span", { class: `item-status status-${brief.status}` },
          brief.status),
      );
      if (this.view?.sessionId === brief.id) item.classList.add("selected");
      item.addEventListener("click", () => void this.openSession(brief.id));
      this.listEl.appendChild(item);
    }
  }

  showCreateForm(): void {
    this.closeView();
    clear(this.mainEl);

    const deck = el("textarea", {
      class: "deck-input", rows: "10",
      placeholder: "simulation deck",
    }) as HTMLTextAreaElement;
    const obs = el("textarea", {
      class: "obs-input", rows: "6",
      placeholder: "observed history CSV",
    }) as HTMLTextAreaElement;
    const seed = el("input", { class: "cfg-seed", type: "text" }) as
      HTMLInputElement;
    seed.value = "0";
    const budget = el("input", { class: "cfg-budget", type: "text" }) as
      HTMLInputElement;
    budget.value = "40";
    const nInitial = el("input", { class: "cfg-n-initial", type: "text" }) as
      HTMLInputElement;
    nInitial.value = "16";
    const autoApprove = el("input", {
      class: "cfg-auto-approve", type: "checkbox",
    }) as HTMLInputElement;
    const error = el("p", { class: "form-error hidden" });
    const create = el("button", { class: "create", type: "button" },
      "Create session") as HTMLButtonElement;

    create.addEventListener("click", () => void (async () => {
      const config: SessionConfig = {
        seed: Number(seed.value) || 0,
        budget: Number(budget.value) || 40,
        n_initial: Number(nInitial.value) || 16,
        auto_approve: autoApprove.checked,
      };
      create.disabled = true;
      try {
        const brief = await this.api.createSession(
          deck.value, obs.value, config);
        await this.refreshList();
        await this.openSession(brief.id);
      } catch (err) {
        error.textContent = err instanceof ApiError
          ? err.detail
          : err instanceof Error ? err.message : String(err);
        error.classList.remove("hidden");
        create.disabled = false;
      }
    })());

    this.mainEl.appendChild(el("div", { class: "create-form" },
      el("h2", {}, "New session"),
      el("label", {}, "deck", deck),
      el("label", {}, "observations", obs),
      el("div", { class: "create-config" },
        el("label", {}, "seed", seed),
        el("label", {}, "evaluations", budget),
        el("label", {}, "initial samples", nInitial),
        el("label", { class: "cfg-check" }, autoApprove, "skip checkpoints"),
      ),
      error,
      create,
    ));
  }

  async openSession(id: string): Promise<void> {
    this.closeView();
    const view = new SessionView(
      this.api, id, () => void this.refreshNow(), this.llmConfigured);
    this.view = view;
    clear(this.mainEl);
    this.mainEl.appendChild(view.element);
    view.start();
    await this.refreshNow();
    void this.refreshList();
  }

  private closeView(): void {
    this.stopPolling();
    this.view?.dispose();
    this.view = null;
  }

  /** One detail fetch + render; reschedules the poll afterwards. */
  async refreshNow(): Promise<void> {
    const view = this.view;
    if (view === null || this.refreshing) return;
    this.refreshing = true;
    let detail: SessionDetail | null = null;
    try {
      detail = await this.api.getSession(view.sessionId);
      await view.refresh(detail);
    } catch {
      // transient fetch failure; the next poll retries
    } finally {
      this.refreshing = false;
    }
    this.stopPolling();
    if (this.disposed || this.view !== view) return;
    if (detail === null || !TERMINAL.has(detail.phase)) {
      this.pollTimer = setTimeout(() => void this.refreshNow(), this.pollMs);
    } else {
      void this.refreshList(); // pick up the final status in the sidebar
    }
  }

  private stopPolling(): void {
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
      this.pollTimer = null;
    }
  }
}

export function mountApp(root: HTMLElement, options: AppOptions = {}): App {
  return new App(root, options);
}

/**
 * Typed client for the /api/v1 session contract.
 *
 * Every number shown in the console comes through this module; nothing is
 * recomputed client-side. Errors carry the service's {error, detail} body
 * so callers can branch on conflict semantics (409 version conflicts get
 * reload-and-merge treatment, 422 becomes a field message).
 */

export interface SessionBrief {
  id: string;
  created_at: string;
  phase: string;
  status: string;
}

export interface TranscriptMessage {
  role: string;
  agent: string;
  text: string;
}

export interface ParameterTarget {
  section: string;
  keyword: string;
  occurrence: number;
  token: [number, number];
}

export interface ParameterSpec {
  name: string;
  lower: number;
  upper: number;
  initial: number;
  scale: string;
  unit: string;
  target: ParameterTarget;
}

export interface OptimizerSettings {
  dimension: number;
  n_initial: number;
  n_total: number;
  acquisition: string;
  seed: number;
  kernel: string;
  ei_xi: number;
  lcb_kappa: number;
  hedge_eta: number;
  candidate_pool: number;
  refine_steps: number;
  duplicate_tol: number;
  nan_penalty: number;
}

export interface SessionDetail extends SessionBrief {
  seed: number;
  failure: string | null;
  initial_metric: number | null;
  description: { summary: string } & Record<string, unknown> | null;
  plan: Record<string, unknown> | null;
  parameters: ParameterSpec[] | null;
  optimizer: OptimizerSettings | null;
  best: { assignment: Record<string, number>; metric: number } | null;
  n_evaluations: number;
  checkpoint_version: number;
  messages: TranscriptMessage[];
}

export interface MetricRow {
  iter: number;
  values: Record<string, number>;
  metric: number;
  best_so_far: number;
}

export interface CheckpointView {
  kind: "parameters" | "optimizer";
  version: number;
  parameters?: ParameterSpec[];
  optimizer?: OptimizerSettings;
}

/** PATCH body; bounds map a parameter name to its [lower, upper] pair. */
export interface CheckpointPatch {
  version: number;
  approve?: boolean;
  bounds?: Record<string, [number, number]>;
  add?: ParameterSpec[];
  remove?: string[];
  optimizer?: Partial<OptimizerSettings>;
}

export interface QuantityRow {
  key: string;
  weight: number;
  nrmse_before: number;
  nrmse_after: number;
}

export interface SeriesEntry {
  key: string;
  quantity: string;
  well: string;
  file: string;
}

export interface ParameterOutcome {
  name: string;
  lower: number;
  upper: number;
  initial: number;
  best: number;
}

export interface Report {
  status: "done" | "failed";
  initial: number | null;
  best: number | null;
  improvement_pct?: number;
  parameters?: ParameterOutcome[];
  quantities?: QuantityRow[];
  series?: SeriesEntry[];
  recommendations?: string[];
  text?: string;
  report_md?: string;
  failure?: string | null;
}

export interface SessionConfig {
  seed?: number;
  budget?: number;
  n_initial?: number;
  auto_approve?: boolean;
  backend?: string;
  command?: string;
  timeout_s?: number;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly errorType: string,
    public readonly detail: string,
  ) {
    super(`${errorType}: ${detail}`);
    this.name = "ApiError";
  }
}

async function toApiError(response: Response): Promise<ApiError> {
  let errorType = `HTTP ${response.status}`;
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.error === "string") {
      errorType = body.error;
      detail = String(body.detail ?? "");
    } else if (body.detail !== undefined) {
      // FastAPI validation errors put a list under detail
      detail = typeof body.detail === "string"
        ? body.detail
        : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, errorType, detail);
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    public readonly base: string = "",
    fetchFn?: FetchLike,
  ) {
    // bind so the browser's fetch keeps its window receiver
    const f = fetchFn ?? globalThis.fetch;
    this.fetchFn = (input, init) => f(input, init);
  }

  url(path: string): string {
    return `${this.base}/api/v1${path}`;
  }

  /** Plain fetch against an already-built URL (used by the SSE feed). */
  raw(url: string, init?: RequestInit): Promise<Response> {
    return this.fetchFn(url, init);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.url(path), init);
    if (!response.ok) throw await toApiError(response);
    return (await response.json()) as T;
  }

  private jsonInit(method: string, body: unknown): RequestInit {
    return {
      method,
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    };
  }

  listSessions(): Promise<{ sessions: SessionBrief[] }> {
    return this.request("/sessions");
  }

  createSession(
    deck: string,
    observations: string,
    config: SessionConfig = {},
  ): Promise<SessionBrief> {
    return this.request(
      "/sessions",
      this.jsonInit("POST", { deck, observations, config }),
    );
  }

  getSession(id: string): Promise<SessionDetail> {
    return this.request(`/sessions/${id}`);
  }

  advance(id: string, until?: string): Promise<SessionBrief> {
    const body = until === undefined ? {} : { until };
    return this.request(`/sessions/${id}/advance`, this.jsonInit("POST", body));
  }

  getCheckpoint(id: string): Promise<CheckpointView> {
    return this.request(`/sessions/${id}/checkpoint`);
  }

  patchCheckpoint(
    id: string,
    patch: CheckpointPatch,
  ): Promise<{ phase: string; status: string; version: number }> {
    return this.request(
      `/sessions/${id}/checkpoint`,
      this.jsonInit("PATCH", patch),
    );
  }

  getMetrics(id: string, since = 0): Promise<{ rows: MetricRow[] }> {
    return this.request(`/sessions/${id}/metrics?since=${since}`);
  }

  /** URL of the metric stream; the SSE feed fetches it itself. */
  metricsUrl(id: string, since = 0): string {
    return this.url(`/sessions/${id}/metrics?since=${since}`);
  }

  getReport(id: string): Promise<Report> {
    return this.request(`/sessions/${id}/report`);
  }

  reportFileUrl(id: string, file: string): string {
    return this.url(`/sessions/${id}/report/files/${file}`);
  }

  async fetchReportFile(id: string, file: string): Promise<string> {
    const response = await this.fetchFn(this.reportFileUrl(id, file));
    if (!response.ok) throw await toApiError(response);
    return response.text();
  }
}

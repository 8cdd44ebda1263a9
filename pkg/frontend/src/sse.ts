/**
 * Metric stream client.
 *
 * The service streams evaluation rows as server-sent events with the row
 * index in the `id:` field and accepts a `since` query parameter for
 * replay. EventSource reconnects blindly to its original URL, which would
 * replay everything, so this client reads the stream through fetch and
 * reconnects itself with `since` set to the last row it saw. Rows at or
 * below the cursor are dropped, so a reconnect never duplicates a point.
 */

import { ApiClient, MetricRow } from "./api.js";

export type FeedState = "idle" | "connecting" | "live" | "retrying" | "ended";

export interface FeedCallbacks {
  onRow(row: MetricRow): void;
  /** Terminal event from the service: the run is done or failed. */
  onEnd?(): void;
  onState?(state: FeedState): void;
}

interface SseEvent {
  event: string;
  data: string;
}

/** Incremental SSE frame parser; feed() returns completed events. */
export class SseParser {
  private buffer = "";

  feed(chunk: string): SseEvent[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const events: SseEvent[] = [];
    let split: number;
    while ((split = this.buffer.indexOf("\n\n")) >= 0) {
      const frame = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const parsed = this.parseFrame(frame);
      if (parsed !== null) events.push(parsed);
    }
    return events;
  }

  private parseFrame(frame: string): SseEvent | null {
    let event = "message";
    const data: string[] = [];
    for (const line of frame.split("\n")) {
      if (line.startsWith("event:")) event = line.slice(6).trim();
      else if (line.startsWith("data:")) data.push(line.slice(5).trim());
      // id: and retry: lines are intentionally ignored; the row carries
      // its own iteration index
    }
    if (data.length === 0) return null;
    return { event, data: data.join("\n") };
  }
}

export class MetricFeed {
  private cursor = 0;
  private stopped = true;
  private controller: AbortController | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly callbacks: FeedCallbacks,
    private readonly retryMs = 1000,
  ) {}

  /** Last iteration delivered; the next connect resumes after it. */
  get lastIter(): number {
    return this.cursor;
  }

  start(since = 0): void {
    this.stop();
    this.stopped = false;
    this.cursor = since;
    void this.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.controller?.abort();
    this.controller = null;
  }

  private setState(state: FeedState): void {
    this.callbacks.onState?.(state);
  }

  private async connect(): Promise<void> {
    this.setState("connecting");
    this.controller = new AbortController();
    try {
      const response = await fetchStream(
        this.api,
        this.api.metricsUrl(this.sessionId, this.cursor),
        this.controller.signal,
      );
      this.setState("live");
      const ended = await this.consume(response);
      if (ended) {
        this.stopped = true;
        this.setState("ended");
        this.callbacks.onEnd?.();
        return;
      }
      // server closed without an end event: reconnect from the cursor
      this.scheduleRetry();
    } catch {
      if (!this.stopped) this.scheduleRetry();
    }
  }

  /** Returns true when the service sent its terminal `end` event. */
  private async consume(response: Response): Promise<boolean> {
    if (response.body === null) return false;
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return false;
      for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
        if (event.event === "end") return true;
        let row: MetricRow;
        try {
          row = JSON.parse(event.data) as MetricRow;
        } catch {
          continue;
        }
        if (row.iter > this.cursor) {
          this.cursor = row.iter;
          this.callbacks.onRow(row);
        }
      }
    }
  }

  private scheduleRetry(): void {
    if (this.stopped) return;
    this.setState("retrying");
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      void this.connect();
    }, this.retryMs);
  }
}

async function fetchStream(
  api: ApiClient,
  url: string,
  signal: AbortSignal,
): Promise<Response> {
  const response = await api.raw(url, {
    headers: { Accept: "text/event-stream" },
    signal,
  });
  if (!response.ok) {
    throw new Error(`metric stream failed: HTTP ${response.status}`);
  }
  return response;
}

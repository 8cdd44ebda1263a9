/**
 * Mismatch overlays.
 *
 * One panel per series the report names: observed history, the initial
 * simulation, and the best simulation drawn over each other, with the
 * before/after mismatch numbers in the panel header. Each CSV is fetched
 * independently so one missing file degrades to a notice on its own panel
 * rather than blanking the whole view.
 */

import { QuantityRow, Report, SeriesEntry } from "./api.js";
import { el, clear, svgEl, fmt } from "./dom.js";

const WIDTH = 320;
const HEIGHT = 170;
const PAD = { left: 46, right: 10, top: 10, bottom: 24 };

export interface SeriesData {
  time: number[];
  observed: Array<number | null>;
  initial: Array<number | null>;
  best: Array<number | null>;
}

/** Parse a "time_days,observed,initial,best" CSV; blank cells become null. */
export function parseSeriesCsv(text: string): SeriesData {
  const lines = text.trim().split(/\r?\n/);
  if (lines.length < 2 || !lines[0].startsWith("time_days")) {
    throw new Error("not a series file");
  }
  const data: SeriesData = { time: [], observed: [], initial: [], best: [] };
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    const time = Number(cells[0]);
    if (Number.isNaN(time)) throw new Error(`bad time value: ${cells[0]}`);
    data.time.push(time);
    for (const [column, index] of [
      ["observed", 1], ["initial", 2], ["best", 3],
    ] as const) {
      const raw = (cells[index] ?? "").trim();
      const value = raw === "" ? null : Number(raw);
      data[column].push(value !== null && Number.isNaN(value) ? null : value);
    }
  }
  return data;
}

type CurveName = "observed" | "initial" | "best";

const CURVES: CurveName[] = ["observed", "initial", "best"];

function finiteRange(data: SeriesData): [number, number] | null {
  let lo = Infinity;
  let hi = -Infinity;
  for (const curve of CURVES) {
    for (const value of data[curve]) {
      if (value === null || !Number.isFinite(value)) continue;
      if (value < lo) lo = value;
      if (value > hi) hi = value;
    }
  }
  if (lo === Infinity) return null;
  if (lo === hi) return [lo - 1, hi + 1];
  return [lo, hi];
}

function curvePath(
  data: SeriesData,
  curve: CurveName,
  tRange: [number, number],
  vRange: [number, number],
): string {
  const [t0, t1] = tRange;
  const [v0, v1] = vRange;
  const tSpan = t1 - t0 || 1;
  const vSpan = v1 - v0 || 1;
  const points: string[] = [];
  for (let i = 0; i < data.time.length; i++) {
    const value = data[curve][i];
    if (value === null || !Number.isFinite(value)) continue;
    const x = PAD.left +
      ((data.time[i] - t0) / tSpan) * (WIDTH - PAD.left - PAD.right);
    const y = HEIGHT - PAD.bottom -
      ((value - v0) / vSpan) * (HEIGHT - PAD.top - PAD.bottom);
    points.push(`${x.toFixed(1)},${y.toFixed(1)}`);
  }
  return points.join(" ");
}

function drawPanelSvg(data: SeriesData): SVGElement {
  const svg = svgEl("svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    class: "mismatch-svg",
    preserveAspectRatio: "xMidYMid meet",
  });
  const vRange = finiteRange(data);
  const t0 = data.time[0] ?? 0;
  const t1 = data.time[data.time.length - 1] ?? 1;
  if (vRange === null) return svg;

  svg.appendChild(svgEl("line", {
    x1: String(PAD.left), y1: String(HEIGHT - PAD.bottom),
    x2: String(WIDTH - PAD.right), y2: String(HEIGHT - PAD.bottom),
    class: "axis",
  }));
  svg.appendChild(svgEl("line", {
    x1: String(PAD.left), y1: String(PAD.top),
    x2: String(PAD.left), y2: String(HEIGHT - PAD.bottom),
    class: "axis",
  }));

  for (const curve of CURVES) {
    const points = curvePath(data, curve, [t0, t1], vRange);
    if (points === "") continue;
    svg.appendChild(svgEl("polyline", {
      points,
      class: `series-${curve}`,
      fill: "none",
    }));
  }

  const tickLow = svgEl("text", {
    x: String(PAD.left - 4), y: String(HEIGHT - PAD.bottom),
    class: "tick", "text-anchor": "end",
  });
  tickLow.textContent = fmt(vRange[0], 3);
  svg.appendChild(tickLow);
  const tickHigh = svgEl("text", {
    x: String(PAD.left - 4), y: String(PAD.top + 8),
    class: "tick", "text-anchor": "end",
  });
  tickHigh.textContent = fmt(vRange[1], 3);
  svg.appendChild(tickHigh);
  const tickTime = svgEl("text", {
    x: String(WIDTH - PAD.right), y: String(HEIGHT - 8),
    class: "tick", "text-anchor": "end",
  });
  tickTime.textContent = `${fmt(t1, 4)} days`;
  svg.appendChild(tickTime);
  return svg;
}

function panelHeader(entry: SeriesEntry, row: QuantityRow | undefined): HTMLElement {
  const title = el("span", { class: "panel-title" },
    `${entry.well} ${entry.quantity}`);
  const header = el("header", { class: "panel-header" }, title);
  if (row !== undefined) {
    header.appendChild(el("span", { class: "panel-nrmse" },
      `mismatch ${fmt(row.nrmse_before, 3)} → ${fmt(row.nrmse_after, 3)}`));
  }
  return header;
}

export class MismatchView {
  readonly element: HTMLElement;

  constructor(
    private readonly fetchFile: (file: string) => Promise<string>,
  ) {
    this.element = el("div", { class: "mismatch-view" });
  }

  async load(report: Report): Promise<void> {
    clear(this.element);
    const series = report.series ?? [];
    if (series.length === 0) {
      this.element.appendChild(
        el("p", { class: "mismatch-empty" }, "No series in this report."));
      return;
    }
    const byKey = new Map((report.quantities ?? []).map((q) => [q.key, q]));
    const jobs = series.map(async (entry) => {
      const panel = el("section", {
        class: "mismatch-panel",
        "data-key": entry.key,
      }, panelHeader(entry, byKey.get(entry.key)));
      this.element.appendChild(panel);
      try {
        const text = await this.fetchFile(entry.file);
        panel.appendChild(drawPanelSvg(parseSeriesCsv(text)));
        panel.appendChild(el("footer", { class: "panel-legend" },
          el("span", { class: "legend-observed" }, "observed"),
          el("span", { class: "legend-initial" }, "initial"),
          el("span", { class: "legend-best" }, "best"),
        ));
      } catch {
        panel.appendChild(
          el("p", { class: "panel-missing" }, "series data unavailable"));
      }
    });
    await Promise.all(jobs);
  }
}

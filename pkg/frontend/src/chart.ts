/**
 * Metric evolution chart: raw misfit per iteration as points, running best
 * as a step line. Pure SVG, rebuilt on every update; at desk-scale budgets
 * (tens to low hundreds of points) that is cheaper than bookkeeping.
 */

import { MetricRow } from "./api.js";
import { el, svgEl, clear, fmt } from "./dom.js";

const WIDTH = 640;
const HEIGHT = 260;
const PAD = { left: 64, right: 16, top: 14, bottom: 30 };

export class MetricChart {
  readonly element: HTMLElement;
  private rows: MetricRow[] = [];

  constructor() {
    this.element = el("div", { class: "metric-chart" });
    this.renderEmpty();
  }

  get pointCount(): number {
    return this.rows.length;
  }

  /** Running-best values in iteration order, as drawn. */
  get bestValues(): number[] {
    return this.rows.map((r) => r.best_so_far);
  }

  setRows(rows: MetricRow[]): void {
    this.rows = [];
    for (const row of rows) this.appendRow(row, false);
    this.render();
  }

  push(row: MetricRow): void {
    if (this.appendRow(row, true)) this.render();
  }

  private appendRow(row: MetricRow, _live: boolean): boolean {
    const last = this.rows[this.rows.length - 1];
    if (last !== undefined && row.iter <= last.iter) return false;
    this.rows.push(row);
    return true;
  }

  private renderEmpty(): void {
    clear(this.element);
    this.element.appendChild(
      el("p", { class: "chart-empty" }, "No evaluations yet."),
    );
  }

  private render(): void {
    if (this.rows.length === 0) {
      this.renderEmpty();
      return;
    }
    const values = this.rows.flatMap((r) => [r.metric, r.best_so_far]);
    const rawMin = Math.min(...values);
    const rawMax = Math.max(...values);
    // misfits can fall by orders of magnitude; switch to log when they do
    const useLog = rawMin > 0 && rawMax / rawMin > 50;
    const toScale = (v: number) => (useLog ? Math.log10(v) : v);
    let lo = toScale(rawMin);
    let hi = toScale(rawMax);
    if (hi - lo < 1e-12) {
      hi += 0.5;
      lo -= 0.5;
    }
    const maxIter = this.rows[this.rows.length - 1].iter;
    const x = (iter: number) =>
      PAD.left +
      ((iter - 1) / Math.max(maxIter - 1, 1)) * (WIDTH - PAD.left - PAD.right);
    const y = (v: number) =>
      HEIGHT - PAD.bottom -
      ((toScale(v) - lo) / (hi - lo)) * (HEIGHT - PAD.top - PAD.bottom);

    const svg = svgEl("svg", {
      viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
      class: "metric-svg",
      role: "img",
    });

    svg.appendChild(svgEl("line", {
      class: "axis", x1: String(PAD.left), y1: String(HEIGHT - PAD.bottom),
      x2: String(WIDTH - PAD.right), y2: String(HEIGHT - PAD.bottom),
    }));
    svg.appendChild(svgEl("line", {
      class: "axis", x1: String(PAD.left), y1: String(PAD.top),
      x2: String(PAD.left), y2: String(HEIGHT - PAD.bottom),
    }));

    const metricPts = this.rows
      .map((r) => `${x(r.iter).toFixed(2)},${y(r.metric).toFixed(2)}`)
      .join(" ");
    svg.appendChild(svgEl("polyline", { class: "metric-line", points: metricPts }));

    // step line: hold each best value until the iteration that improves it
    const bestPts: string[] = [];
    for (let i = 0; i < this.rows.length; i++) {
      const row = this.rows[i];
      if (i > 0) {
        bestPts.push(
          `${x(row.iter).toFixed(2)},${y(this.rows[i - 1].best_so_far).toFixed(2)}`,
        );
      }
      bestPts.push(`${x(row.iter).toFixed(2)},${y(row.best_so_far).toFixed(2)}`);
    }
    svg.appendChild(
      svgEl("polyline", { class: "best-line", points: bestPts.join(" ") }),
    );

    for (const row of this.rows) {
      svg.appendChild(svgEl("circle", {
        class: "metric-point",
        cx: x(row.iter).toFixed(2),
        cy: y(row.metric).toFixed(2),
        r: "2.5",
      }));
    }

    const label = (text: string, xPos: number, yPos: number, cls: string) => {
      const node = svgEl("text", {
        class: cls, x: xPos.toFixed(1), y: yPos.toFixed(1),
      });
      node.textContent = text;
      return node;
    };
    svg.appendChild(label(fmt(rawMax, 4), 4, y(rawMax) + 4, "tick"));
    svg.appendChild(label(fmt(rawMin, 4), 4, y(rawMin) + 4, "tick"));
    svg.appendChild(label("1", PAD.left, HEIGHT - 8, "tick"));
    svg.appendChild(
      label(String(maxIter), x(maxIter) - 4, HEIGHT - 8, "tick"),
    );
    if (useLog) {
      svg.appendChild(label("log scale", 4, PAD.top + 4, "tick tick-note"));
    }

    clear(this.element);
    const latest = this.rows[this.rows.length - 1];
    this.element.appendChild(el("div", { class: "chart-caption" },
      `${this.rows.length} evaluation(s), best wNRMSE ${fmt(latest.best_so_far)}`,
    ));
    this.element.appendChild(svg);
  }
}

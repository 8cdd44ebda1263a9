/**
 * Workflow timeline: one lane per agent in pipeline order, with a status
 * badge and that agent's transcript. Phase-to-lane status is a pure
 * function so the mapping is testable without a DOM.
 */

import { SessionDetail, TranscriptMessage } from "./api.js";
import { el, clear } from "./dom.js";

export type LaneStatus =
  | "pending"
  | "active"
  | "attention"
  | "complete"
  | "failed";

export interface Lane {
  agent: string;
  label: string;
  status: LaneStatus;
  /** Cause text on the failed lane, empty otherwise. */
  note: string;
  messages: TranscriptMessage[];
}

const PHASES = [
  "created", "reviewed", "planned", "parameterized", "checkpoint_params",
  "optimizer_ready", "checkpoint_optimizer", "matching", "summarizing",
  "done",
] as const;

interface LaneDef {
  agent: string;
  label: string;
  /** Lane is complete once the session phase reaches this index. */
  doneAt: number;
  /** Phases during which this lane is the active one. */
  activeIn: string[];
  /** Checkpoint phase that parks attention on this lane, if any. */
  gate?: string;
}

const LANES: LaneDef[] = [
  { agent: "reviewer", label: "Reviewer", doneAt: 1, activeIn: ["created"] },
  { agent: "planner", label: "Planner", doneAt: 2, activeIn: ["reviewed"] },
  {
    agent: "parameterizer", label: "Parameterizer", doneAt: 5,
    activeIn: ["planned", "parameterized"], gate: "checkpoint_params",
  },
  {
    agent: "optimizer", label: "Optimizer", doneAt: 7,
    activeIn: ["optimizer_ready"], gate: "checkpoint_optimizer",
  },
  { agent: "simulator", label: "Simulator", doneAt: 8, activeIn: ["matching"] },
  { agent: "summarizer", label: "Summarizer", doneAt: 9, activeIn: ["summarizing"] },
];

function failedLaneAgent(messages: TranscriptMessage[]): string {
  const laneAgents = new Set(LANES.map((lane) => lane.agent));
  for (let i = messages.length - 1; i >= 0; i--) {
    const msg = messages[i];
    if (laneAgents.has(msg.agent)) return msg.agent;
  }
  return LANES[0].agent;
}

export function buildLanes(detail: SessionDetail): Lane[] {
  const phaseIndex = PHASES.indexOf(detail.phase as (typeof PHASES)[number]);
  const failed = detail.phase === "failed";
  const failedAgent = failed ? failedLaneAgent(detail.messages) : null;

  return LANES.map((def) => {
    let status: LaneStatus = "pending";
    let note = "";
    if (failed) {
      if (def.agent === failedAgent) {
        status = "failed";
        note = detail.failure ?? "run failed";
      } else {
        const failedIndex = LANES.findIndex((l) => l.agent === failedAgent);
        const thisIndex = LANES.findIndex((l) => l.agent === def.agent);
        status = thisIndex < failedIndex ? "complete" : "pending";
      }
    } else if (phaseIndex >= def.doneAt) {
      status = "complete";
    } else if (def.gate === detail.phase) {
      status = "attention";
      note = "waiting for review";
    } else if (def.activeIn.includes(detail.phase)) {
      status = "active";
    }
    return {
      agent: def.agent,
      label: def.label,
      status,
      note,
      messages: detail.messages.filter((m) => m.agent === def.agent),
    };
  });
}

const BADGE_TEXT: Record<LaneStatus, string> = {
  pending: "pending",
  active: "running",
  attention: "review",
  complete: "done",
  failed: "failed",
};

export class WorkflowTimeline {
  readonly element: HTMLElement;

  constructor() {
    this.element = el("div", { class: "timeline" });
  }

  render(detail: SessionDetail): void {
    clear(this.element);
    for (const lane of buildLanes(detail)) {
      const body = el("div", { class: "lane-body" });
      const agentLines = lane.messages.filter((m) => m.role === "agent");
      const shown = agentLines.length > 0 ? agentLines : lane.messages;
      if (shown.length > 0) {
        const last = shown[shown.length - 1];
        body.appendChild(el("p", { class: "lane-text" }, last.text));
        if (shown.length > 1) {
          const details = el("details", {},
            el("summary", {}, `${shown.length - 1} earlier entries`));
          for (const msg of shown.slice(0, -1)) {
            details.appendChild(
              el("p", { class: `lane-text role-${msg.role}` }, msg.text));
          }
          body.appendChild(details);
        }
      }
      if (lane.note) {
        body.appendChild(el("p", { class: "lane-note" }, lane.note));
      }
      this.element.appendChild(
        el("section", { class: `lane lane-${lane.status}`, "data-agent": lane.agent },
          el("header", { class: "lane-header" },
            el("span", { class: "lane-label" }, lane.label),
            el("span", { class: `badge badge-${lane.status}` },
              BADGE_TEXT[lane.status]),
          ),
          body,
        ),
      );
    }
  }
}

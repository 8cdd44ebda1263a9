/**
 * Transcript panel with the advance controls.
 *
 * The transcript is whatever the agents wrote, newest at the bottom. The
 * input row under it depends on the run state: a paused session gets a
 * "Continue run" trigger, a checkpoint points at the editor, a finished
 * one offers the report. Free text is only accepted when a language model
 * is wired in; against a plain service the field stays disabled with a
 * note saying why.
 */

import { SessionDetail, TranscriptMessage } from "./api.js";
import { el, clear } from "./dom.js";

export interface ChatHooks {
  onAdvance(): void;
  onOpenReport(): void;
  /** Only called when llmConfigured; the free-text line to pass along. */
  onSay?(text: string): void;
}

function messageNode(message: TranscriptMessage): HTMLElement {
  if (message.role === "tool_call" || message.role === "tool_result") {
    const details = el("details", { class: `msg msg-${message.role}` },
      el("summary", {}, `${message.agent} ${message.role.replace("_", " ")}`),
      el("pre", {}, message.text),
    );
    return details;
  }
  return el("div", { class: `msg msg-${message.role}` },
    el("span", { class: "msg-agent" }, message.agent),
    el("span", { class: "msg-text" }, message.text),
  );
}

export class ChatPanel {
  readonly element: HTMLElement;
  private readonly log: HTMLElement;
  private readonly actions: HTMLElement;
  private pendingText: TranscriptMessage[] = [];

  constructor(
    private readonly hooks: ChatHooks,
    private readonly llmConfigured = false,
  ) {
    this.log = el("div", { class: "chat-log" });
    this.actions = el("div", { class: "chat-actions" });
    this.element = el("section", { class: "chat" }, this.log, this.actions);
  }

  update(detail: SessionDetail): void {
    clear(this.log);
    const messages = [...detail.messages, ...this.pendingText];
    if (messages.length === 0) {
      this.log.appendChild(
        el("p", { class: "chat-empty" }, "Nothing in the transcript yet."));
    }
    for (const message of messages) {
      this.log.appendChild(messageNode(message));
    }
    this.log.scrollTop = this.log.scrollHeight;
    this.renderActions(detail);
  }

  private renderActions(detail: SessionDetail): void {
    clear(this.actions);
    const { phase, status } = detail;

    if (status === "failed") {
      this.actions.appendChild(el("p", { class: "chat-note chat-failed" },
        detail.failure ?? "the run failed"));
    } else if (phase === "done") {
      const open = el("button", { class: "open-report", type: "button" },
        "Open report") as HTMLButtonElement;
      open.addEventListener("click", () => this.hooks.onOpenReport());
      this.actions.appendChild(open);
    } else if (status === "waiting_checkpoint") {
      this.actions.appendChild(el("p", { class: "chat-note" },
        "Paused at a checkpoint. Review the values below, then approve to continue."));
    } else if (status === "running") {
      this.actions.appendChild(el("p", { class: "chat-note chat-running" },
        "Working..."));
    } else {
      const advance = el("button", { class: "advance", type: "button" },
        "Continue run") as HTMLButtonElement;
      advance.addEventListener("click", () => this.hooks.onAdvance());
      this.actions.appendChild(advance);
    }

    const input = el("input", {
      class: "chat-input", type: "text",
      placeholder: this.llmConfigured
        ? "Say something to the agents"
        : "Free-text steering needs a configured language model",
    }) as HTMLInputElement;
    input.disabled = !this.llmConfigured;
    const send = el("button", { class: "chat-send", type: "button" },
      "Send") as HTMLButtonElement;
    send.disabled = !this.llmConfigured;
    if (this.llmConfigured) {
      const submit = () => {
        const text = input.value.trim();
        if (text === "") return;
        this.pendingText.push({ role: "agent", agent: "user", text });
        input.value = "";
        this.hooks.onSay?.(text);
        this.hooks.onAdvance();
      };
      send.addEventListener("click", submit);
      input.addEventListener("keydown", (event) => {
        if ((event as KeyboardEvent).key === "Enter") submit();
      });
    }
    this.actions.appendChild(
      el("div", { class: "chat-input-row" }, input, send));
  }
}

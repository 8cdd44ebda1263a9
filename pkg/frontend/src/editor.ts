/**
 * Checkpoint editors.
 *
 * The parameter editor is a table of {name, lower, upper, scale, include}
 * rows; edits are validated client-side (both bounds numeric, lower below
 * upper) before anything is sent. Submits carry the checkpoint version.
 * A 409 means someone else edited the checkpoint first: the fresh payload
 * is reloaded and unsaved edits are reapplied on top. A 422 is surfaced on
 * the offending row when the message names it, or on the form otherwise.
 *
 * Inputs are built once per payload; typing only refreshes validation
 * state, so focus never jumps mid-edit.
 */

import {
  ApiError,
  CheckpointPatch,
  CheckpointView,
  OptimizerSettings,
  ParameterSpec,
} from "./api.js";
import { el, clear, fmt } from "./dom.js";

export interface EditorIO {
  patch(body: CheckpointPatch): Promise<unknown>;
  reload(): Promise<CheckpointView>;
  /** Called after a PATCH the service accepted. */
  onApplied?(): void;
}

interface RowState {
  spec: ParameterSpec;
  lower: string;
  upper: string;
  included: boolean;
}

interface RowIssue {
  name: string;
  message: string;
}

export function validateRows(rows: RowState[]): RowIssue[] {
  const issues: RowIssue[] = [];
  for (const row of rows) {
    if (!row.included) continue;
    const lower = Number(row.lower);
    const upper = Number(row.upper);
    if (row.lower.trim() === "" || Number.isNaN(lower)) {
      issues.push({ name: row.spec.name, message: "lower bound is not a number" });
    } else if (row.upper.trim() === "" || Number.isNaN(upper)) {
      issues.push({ name: row.spec.name, message: "upper bound is not a number" });
    } else if (lower >= upper) {
      issues.push({
        name: row.spec.name,
        message: "lower bound must be below the upper bound",
      });
    }
  }
  return issues;
}

export function buildParameterPatch(
  rows: RowState[],
  version: number,
  approve: boolean,
): CheckpointPatch {
  const bounds: Record<string, [number, number]> = {};
  const remove: string[] = [];
  for (const row of rows) {
    if (!row.included) {
      remove.push(row.spec.name);
      continue;
    }
    const lower = Number(row.lower);
    const upper = Number(row.upper);
    if (lower !== row.spec.lower || upper !== row.spec.upper) {
      bounds[row.spec.name] = [lower, upper];
    }
  }
  const patch: CheckpointPatch = { version };
  if (approve) patch.approve = true;
  if (Object.keys(bounds).length > 0) patch.bounds = bounds;
  if (remove.length > 0) patch.remove = remove;
  return patch;
}

interface RowWidgets {
  tr: HTMLTableRowElement;
  errorLine: HTMLTableRowElement;
  errorText: HTMLElement;
}

export class ParameterEditor {
  readonly element: HTMLElement;
  private rows: RowState[] = [];
  private version = 0;
  private busy = false;
  private fieldErrors = new Map<string, string>();
  private widgets = new Map<string, RowWidgets>();
  private bannerEl: HTMLElement | null = null;
  private formErrorEl: HTMLElement | null = null;
  private invalidNoteEl: HTMLElement | null = null;
  private applyBtn: HTMLButtonElement | null = null;
  private approveBtn: HTMLButtonElement | null = null;

  constructor(private readonly io: EditorIO) {
    this.element = el("div", { class: "editor parameter-editor" });
  }

  load(view: CheckpointView, banner = ""): void {
    this.version = view.version;
    this.rows = (view.parameters ?? []).map((spec) => ({
      spec,
      lower: String(spec.lower),
      upper: String(spec.upper),
      included: true,
    }));
    this.fieldErrors.clear();
    this.build(banner);
  }

  /** Fresh server payload with local unsaved edits laid back on top. */
  private merge(view: CheckpointView): void {
    const previous = new Map(this.rows.map((r) => [r.spec.name, r]));
    this.version = view.version;
    this.rows = (view.parameters ?? []).map((spec) => {
      const old = previous.get(spec.name);
      if (old === undefined) {
        return {
          spec,
          lower: String(spec.lower),
          upper: String(spec.upper),
          included: true,
        };
      }
      const lowerEdited = old.lower !== String(old.spec.lower);
      const upperEdited = old.upper !== String(old.spec.upper);
      return {
        spec,
        lower: lowerEdited ? old.lower : String(spec.lower),
        upper: upperEdited ? old.upper : String(spec.upper),
        included: old.included,
      };
    });
    this.fieldErrors.clear();
    this.build(
      "The checkpoint changed while you were editing; " +
      "your unsaved edits were reapplied to the latest version.",
    );
  }

  setRow(name: string, field: "lower" | "upper", value: string): void {
    const row = this.rows.find((r) => r.spec.name === name);
    if (row === undefined) return;
    row[field] = value;
    this.fieldErrors.delete(name);
    this.refresh();
  }

  toggleRow(name: string, included: boolean): void {
    const row = this.rows.find((r) => r.spec.name === name);
    if (row === undefined) return;
    row.included = included;
    const widget = this.widgets.get(name);
    widget?.tr.classList.toggle("row-excluded", !included);
    this.refresh();
  }

  async submit(approve: boolean): Promise<void> {
    if (validateRows(this.rows).length > 0 || this.busy) return;
    const body = buildParameterPatch(this.rows, this.version, approve);
    this.setBusy(true);
    try {
      await this.io.patch(body);
      this.setBusy(false);
      this.io.onApplied?.();
    } catch (error) {
      this.setBusy(false);
      if (error instanceof ApiError && error.status === 409) {
        const fresh = await this.io.reload();
        this.merge(fresh);
        return;
      }
      if (error instanceof ApiError && error.status === 422) {
        const named = this.rows.find((r) => error.detail.includes(r.spec.name));
        if (named !== undefined) {
          this.fieldErrors.set(named.spec.name, error.detail);
        } else {
          this.setFormError(error.detail);
        }
      } else {
        this.setFormError(error instanceof Error ? error.message : String(error));
      }
      this.refresh();
    }
  }

  private setBusy(busy: boolean): void {
    this.busy = busy;
    const text = busy ? "applying..." : null;
    if (this.applyBtn) this.applyBtn.textContent = text ?? "Apply edits";
    if (this.approveBtn) this.approveBtn.textContent = text ?? "Apply & approve";
    if (!busy) this.setFormError("");
    this.refresh();
  }

  private setFormError(message: string): void {
    if (this.formErrorEl === null) return;
    this.formErrorEl.textContent = message;
    this.formErrorEl.classList.toggle("hidden", message === "");
  }

  private build(banner: string): void {
    clear(this.element);
    this.widgets.clear();

    this.bannerEl = el("p", { class: "editor-banner" }, banner);
    this.bannerEl.classList.toggle("hidden", banner === "");
    this.element.appendChild(this.bannerEl);

    const table = el("table", { class: "param-table" });
    table.appendChild(el("thead", {},
      el("tr", {},
        el("th", {}, "parameter"), el("th", {}, "lower"), el("th", {}, "upper"),
        el("th", {}, "scale"), el("th", {}, "initial"), el("th", {}, "include"),
      ),
    ));
    const tbody = el("tbody");
    for (const row of this.rows) {
      const name = row.spec.name;
      const lowerInput = el("input", {
        class: "lower", type: "text", "data-name": name,
      }) as HTMLInputElement;
      lowerInput.value = row.lower;
      lowerInput.addEventListener("input", () =>
        this.setRow(name, "lower", lowerInput.value));
      const upperInput = el("input", {
        class: "upper", type: "text", "data-name": name,
      }) as HTMLInputElement;
      upperInput.value = row.upper;
      upperInput.addEventListener("input", () =>
        this.setRow(name, "upper", upperInput.value));
      const include = el("input", {
        class: "include", type: "checkbox", "data-name": name,
      }) as HTMLInputElement;
      include.checked = row.included;
      include.addEventListener("change", () =>
        this.toggleRow(name, include.checked));

      const tr = el("tr", { class: "param-row", "data-name": name },
        el("td", { class: "param-name" }, name),
        el("td", {}, lowerInput),
        el("td", {}, upperInput),
        el("td", {}, row.spec.scale),
        el("td", {}, fmt(row.spec.initial)),
        el("td", {}, include),
      ) as HTMLTableRowElement;
      const errorText = el("span", { class: "row-error" });
      const errorLine = el("tr", {
        class: "row-error-line hidden", "data-name": name,
      }, el("td", { colspan: "6" }, errorText)) as HTMLTableRowElement;
      tbody.appendChild(tr);
      tbody.appendChild(errorLine);
      this.widgets.set(name, { tr, errorLine, errorText });
    }
    table.appendChild(tbody);
    this.element.appendChild(table);

    this.formErrorEl = el("p", { class: "form-error hidden" });
    this.element.appendChild(this.formErrorEl);

    this.applyBtn = el("button", { class: "apply", type: "button" },
      "Apply edits") as HTMLButtonElement;
    this.approveBtn = el("button", { class: "approve", type: "button" },
      "Apply & approve") as HTMLButtonElement;
    this.applyBtn.addEventListener("click", () => void this.submit(false));
    this.approveBtn.addEventListener("click", () => void this.submit(true));
    this.element.appendChild(
      el("div", { class: "editor-actions" }, this.applyBtn, this.approveBtn));
    this.invalidNoteEl = el("p", { class: "editor-invalid-note hidden" },
      "Fix the highlighted bounds before submitting.");
    this.element.appendChild(this.invalidNoteEl);

    this.refresh();
  }

  private refresh(): void {
    const issues = validateRows(this.rows);
    const issueFor = new Map(issues.map((i) => [i.name, i.message]));
    for (const [name, widget] of this.widgets) {
      const row = this.rows.find((r) => r.spec.name === name);
      const message = row?.included
        ? issueFor.get(name) ?? this.fieldErrors.get(name)
        : undefined;
      widget.errorText.textContent = message ?? "";
      widget.errorLine.classList.toggle("hidden", message === undefined);
      widget.tr.classList.toggle("row-invalid", issueFor.has(name));
    }
    const blocked = issues.length > 0 || this.busy;
    if (this.applyBtn) this.applyBtn.disabled = blocked;
    if (this.approveBtn) this.approveBtn.disabled = blocked;
    this.invalidNoteEl?.classList.toggle("hidden", issues.length === 0);
  }
}

const EDITABLE_FIELDS = ["n_initial", "n_total", "seed"] as const;

export class OptimizerEditor {
  readonly element: HTMLElement;
  private settings: OptimizerSettings | null = null;
  private version = 0;
  private inputs = new Map<string, HTMLInputElement>();
  private acquisition: HTMLSelectElement | null = null;
  private kernel: HTMLSelectElement | null = null;
  private busy = false;
  private approveBtn: HTMLButtonElement | null = null;
  private issuesEl: HTMLElement | null = null;
  private formErrorEl: HTMLElement | null = null;

  constructor(private readonly io: EditorIO) {
    this.element = el("div", { class: "editor optimizer-editor" });
  }

  load(view: CheckpointView, banner = ""): void {
    this.version = view.version;
    this.settings = view.optimizer ?? null;
    this.build(banner);
  }

  issues(): string[] {
    const problems: string[] = [];
    const parsed: Record<string, number> = {};
    for (const field of EDITABLE_FIELDS) {
      const raw = this.inputs.get(field)?.value ?? "";
      const value = Number(raw);
      if (raw.trim() === "" || !Number.isInteger(value)) {
        problems.push(`${field} must be an integer`);
      } else {
        parsed[field] = value;
      }
    }
    if (parsed.n_initial !== undefined && parsed.n_initial < 1) {
      problems.push("n_initial must be at least 1");
    }
    if (
      parsed.n_initial !== undefined &&
      parsed.n_total !== undefined &&
      parsed.n_initial > parsed.n_total
    ) {
      problems.push("n_initial cannot exceed n_total");
    }
    return problems;
  }

  buildPatch(approve: boolean): CheckpointPatch {
    const patch: CheckpointPatch = { version: this.version };
    if (approve) patch.approve = true;
    if (this.settings === null) return patch;
    const changes: Partial<OptimizerSettings> = {};
    for (const field of EDITABLE_FIELDS) {
      const value = Number(this.inputs.get(field)?.value);
      if (value !== this.settings[field]) {
        (changes as Record<string, number>)[field] = value;
      }
    }
    if (this.acquisition !== null &&
        this.acquisition.value !== this.settings.acquisition) {
      changes.acquisition = this.acquisition.value;
    }
    if (this.kernel !== null && this.kernel.value !== this.settings.kernel) {
      changes.kernel = this.kernel.value;
    }
    if (Object.keys(changes).length > 0) patch.optimizer = changes;
    return patch;
  }

  async submit(approve: boolean): Promise<void> {
    if (this.issues().length > 0 || this.busy) return;
    this.busy = true;
    this.refresh();
    try {
      await this.io.patch(this.buildPatch(approve));
      this.busy = false;
      this.io.onApplied?.();
    } catch (error) {
      this.busy = false;
      if (error instanceof ApiError && error.status === 409) {
        const fresh = await this.io.reload();
        const edited = new Map(
          [...this.inputs.entries()].map(([k, input]) => [k, input.value]));
        this.load(fresh,
          "The checkpoint changed while you were editing; " +
          "your unsaved edits were reapplied to the latest version.");
        for (const [field, value] of edited) {
          const input = this.inputs.get(field);
          if (input) input.value = value;
        }
        this.refresh();
        return;
      }
      if (this.formErrorEl !== null) {
        this.formErrorEl.textContent =
          error instanceof ApiError ? error.detail
          : error instanceof Error ? error.message : String(error);
        this.formErrorEl.classList.remove("hidden");
      }
      this.refresh();
    }
  }

  private build(banner: string): void {
    clear(this.element);
    this.inputs.clear();
    if (this.settings === null) return;

    if (banner !== "") {
      this.element.appendChild(el("p", { class: "editor-banner" }, banner));
    }

    const grid = el("div", { class: "optimizer-grid" });
    for (const field of EDITABLE_FIELDS) {
      const input = el("input", {
        class: `opt-${field}`, type: "text",
      }) as HTMLInputElement;
      input.value = String(this.settings[field]);
      input.addEventListener("input", () => this.refresh());
      this.inputs.set(field, input);
      grid.appendChild(el("label", { class: "opt-field" }, field, input));
    }

    this.acquisition = el("select", { class: "opt-acquisition" }) as HTMLSelectElement;
    for (const option of ["GP_HEDGE", "EI", "LCB"]) {
      const node = el("option", { value: option }, option) as HTMLOptionElement;
      node.selected = option === this.settings.acquisition;
      this.acquisition.appendChild(node);
    }
    grid.appendChild(el("label", { class: "opt-field" }, "acquisition",
      this.acquisition));

    this.kernel = el("select", { class: "opt-kernel" }) as HTMLSelectElement;
    for (const option of ["matern52", "rbf"]) {
      const node = el("option", { value: option }, option) as HTMLOptionElement;
      node.selected = option === this.settings.kernel;
      this.kernel.appendChild(node);
    }
    grid.appendChild(el("label", { class: "opt-field" }, "kernel", this.kernel));

    this.element.appendChild(grid);
    this.element.appendChild(el("p", { class: "opt-fixed" },
      `dimension ${this.settings.dimension}, set by the parameter space`));

    this.issuesEl = el("div", { class: "opt-issues" });
    this.element.appendChild(this.issuesEl);
    this.formErrorEl = el("p", { class: "form-error hidden" });
    this.element.appendChild(this.formErrorEl);

    this.approveBtn = el("button", { class: "approve", type: "button" },
      "Apply & approve") as HTMLButtonElement;
    this.approveBtn.addEventListener("click", () => void this.submit(true));
    this.element.appendChild(
      el("div", { class: "editor-actions" }, this.approveBtn));
    this.refresh();
  }

  private refresh(): void {
    const problems = this.issues();
    if (this.issuesEl !== null) {
      clear(this.issuesEl);
      for (const problem of problems) {
        this.issuesEl.appendChild(el("p", { class: "row-error" }, problem));
      }
    }
    if (this.approveBtn !== null) {
      this.approveBtn.disabled = problems.length > 0 || this.busy;
      this.approveBtn.textContent =
        this.busy ? "applying..." : "Apply & approve";
    }
  }
}

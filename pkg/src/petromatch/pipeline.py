"""Staged history-matching workflow over a shared state.

A run moves through a fixed sequence of phases. Each stage is owned by an
agent: the reviewer summarizes the deck, the planner sizes the search, the
parameterizer builds the parameter space, the optimizer agent configures the
search, the matching loop runs ask/evaluate/tell, and the summarizer writes
the report. Two checkpoints (after parameterization and after optimizer
setup) hold the run for human edits; auto-approve skips them.

Every agent works through a small tool registry and records each call in the
transcript, so a finished run can be audited and its parameter space rebuilt
by replaying the calls. The agents ship with deterministic rule-based
decision logic; a chat-model client can drive the same tools instead, and a
client that emits the same calls produces the same state.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from . import deck as deckmod
from . import paramspace as P
from .deck import Deck
from .errors import (
    DeckError,
    DeckUnreadable,
    IllegalPhase,
    InvalidEdit,
    NoParametersFound,
    ParameterError,
    PetromatchError,
    PipelineError,
)
from .kb import DocStore, default_doc_store, lookup_keyword_doc
from .misfit import HistorySet, MisfitReport, improvement_percent
from .optimizer import ACQUISITIONS, OptimizerConfig, OptimizerSession
from .simulator import evaluate, evaluate_text

PHASE_ORDER = (
    "created", "reviewed", "planned", "parameterized", "checkpoint_params",
    "optimizer_ready", "checkpoint_optimizer", "matching", "summarizing",
    "done",
)
TERMINAL_PHASES = ("done", "failed")
_EDGES = set(zip(PHASE_ORDER, PHASE_ORDER[1:])) | {
    (p, "failed") for p in PHASE_ORDER[:-1]
}

_MAX_AGENT_STEPS = 200
_MAX_REPAIR_ROUNDS = 5


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    role: str  # "agent" | "user" | "tool_call" | "tool_result" | "system"
    agent: str
    text: str


@dataclass(frozen=True)
class EvaluationRecord:
    assignment: dict[str, float]
    report: MisfitReport

    @property
    def metric(self) -> float:
        return self.report.total


@dataclass(frozen=True)
class ReservoirDescription:
    model_type: str  # "blackoil" | "other"
    dims: tuple[int, int, int]
    active_cells: int
    n_producers: int
    n_injectors: int
    phases: tuple[str, ...]
    has_faults: bool
    has_multipliers: bool
    summary: str

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise PipelineError(f"dims must be three positive ints, got {self.dims}")
        if self.active_cells < 0 or self.n_producers < 0 or self.n_injectors < 0:
            raise PipelineError("cell and well counts must be non-negative")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "phases", tuple(self.phases))


@dataclass(frozen=True)
class DoePlan:
    budget_tier: str  # "generous" | "moderate" | "conservative"
    max_parameters: int
    n_initial: int
    n_total: int
    parameter_families: tuple[str, ...]
    rationale: str
    target_improvement_pct: float = 50.0

    def __post_init__(self):
        if self.max_parameters < 1:
            raise PipelineError("max_parameters must be at least 1")
        if not (1 <= self.n_initial <= self.n_total):
            raise PipelineError(
                f"need 1 <= n_initial <= n_total, got {self.n_initial}/{self.n_total}"
            )
        object.__setattr__(
            self, "parameter_families", tuple(self.parameter_families)
        )


@dataclass(frozen=True)
class QuantityRow:
    key: str
    weight: float
    nrmse_before: float
    nrmse_after: float


@dataclass(frozen=True)
class ParameterRow:
    name: str
    lower: float
    upper: float
    initial: float
    best: float


@dataclass(frozen=True)
class SeriesBundle:
    key: str
    times: np.ndarray
    observed: np.ndarray
    sim_initial: np.ndarray | None
    sim_best: np.ndarray | None


@dataclass(frozen=True)
class SummaryReport:
    initial_metric: float
    best_metric: float
    improvement_pct: int
    quantities: tuple[QuantityRow, ...]
    parameters: tuple[ParameterRow, ...]
    recommendations: tuple[str, ...]
    metric_evolution: tuple[tuple[int, float, float], ...]  # (iter, value, best)
    series: tuple[SeriesBundle, ...]
    text: str = ""


@dataclass
class PipelineState:
    deck: Deck
    observations: HistorySet
    seed: int = 0
    phase: str = "created"
    messages: list[Message] = field(default_factory=list)
    description: ReservoirDescription | None = None
    plan: DoePlan | None = None
    space: P.ParameterSpace | None = None
    optimizer_config: OptimizerConfig | None = None
    evaluations: list[EvaluationRecord] = field(default_factory=list)
    initial_metric: float | None = None
    baseline_report: MisfitReport | None = None
    best: tuple[dict[str, float], float] | None = None
    best_report: MisfitReport | None = None
    summary: SummaryReport | None = None
    failure: str | None = None
    doc_store: DocStore | None = None
    initial_series: dict[str, np.ndarray] | None = None
    best_series: dict[str, np.ndarray] | None = None


def new_state(deck_or_text, observations: HistorySet, *, seed: int = 0,
              doc_store: DocStore | None = None) -> PipelineState:
    deck = deck_or_text
    if isinstance(deck, str):
        deck = deckmod.parse_deck(deck)
    return PipelineState(
        deck=deck, observations=observations, seed=seed,
        doc_store=doc_store if doc_store is not None else default_doc_store(),
    )


def _require_phase(state: PipelineState, phase: str) -> None:
    if state.phase != phase:
        raise IllegalPhase(f"expected phase {phase!r}, state is {state.phase!r}")


def _advance(state: PipelineState, to: str) -> None:
    if (state.phase, to) not in _EDGES:
        raise IllegalPhase(f"no transition {state.phase!r} -> {to!r}")
    state.phase = to


def _fail(state: PipelineState, cause: Exception | str) -> None:
    text = cause if isinstance(cause, str) else f"{type(cause).__name__}: {cause}"
    state.failure = text
    state.messages.append(Message("system", "pipeline", f"run failed: {text}"))
    if state.phase not in TERMINAL_PHASES:
        state.phase = "failed"


def _say(state: PipelineState, agent: str, text: str) -> None:
    state.messages.append(Message("agent", agent, text))


# ---------------------------------------------------------------------------
# Chat-model client plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    schema: Mapping[str, object]


@dataclass(frozen=True)
class ChatRequest:
    system: str
    messages: tuple[tuple[str, str], ...]
    tools: tuple[ToolSpec, ...]


@dataclass(frozen=True)
class ChatResponse:
    text: str | None = None
    tool: str | None = None
    arguments: Mapping[str, object] | None = None


class ChatModelClient(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


class ScriptedClient:
    """Replays a fixed response sequence; the request content is ignored."""

    def __init__(self, script: Sequence[ChatResponse]):
        self.script = list(script)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if not self.script:
            raise PipelineError("scripted client ran out of responses")
        return self.script.pop(0)


class HttpChatModelClient:
    """Chat-completion transport over plain JSON POST, temperature pinned to 0."""

    def __init__(self, url: str, key: str = "", timeout_s: float = 120.0):
        self.url = url
        self.key = key
        self.timeout_s = timeout_s

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "temperature": 0,
            "messages": [{"role": "system", "content": request.system}]
            + [{"role": r, "content": t} for r, t in request.messages],
            "tools": [
                {"name": t.name, "description": t.description,
                 "parameters": dict(t.schema)}
                for t in request.tools
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        req = urllib.request.Request(
            self.url, data=json.dumps(payload).encode(), headers=headers
        )
        with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
            body = json.load(resp)
        if body.get("tool"):
            return ChatResponse(tool=body["tool"],
                                arguments=body.get("arguments") or {})
        return ChatResponse(text=body.get("text", ""))


def client_from_env() -> ChatModelClient | None:
    url = os.environ.get("PETROMATCH_LLM_URL", "").strip()
    if not url:
        return None
    return HttpChatModelClient(url, os.environ.get("PETROMATCH_LLM_KEY", ""))


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------


def _args_from_spec(spec: P.ParameterSpec) -> dict:
    section, keyword, occurrence, path = spec.target
    return {
        "name": spec.name, "lower": spec.lower, "upper": spec.upper,
        "initial": spec.initial, "section": section, "keyword": keyword,
        "occurrence": occurrence, "token": [path[0], path[1]],
        "scale": spec.scale, "unit": spec.unit,
    }


def _spec_from_args(a: Mapping) -> P.ParameterSpec:
    return P.ParameterSpec(
        name=str(a["name"]), lower=float(a["lower"]), upper=float(a["upper"]),
        initial=float(a["initial"]),
        target=(str(a["section"]), str(a["keyword"]), int(a["occurrence"]),
                (int(a["token"][0]), int(a["token"][1]))),
        scale=str(a.get("scale", "linear")), unit=str(a.get("unit", "")),
    )


def _default_validators():
    return (P.relperm_validator, P.arithmetic_validator)


def _tool_set_description(state: PipelineState, a: Mapping) -> str:
    state.description = ReservoirDescription(
        model_type=str(a["model_type"]),
        dims=tuple(int(d) for d in a["dims"]),
        active_cells=int(a["active_cells"]),
        n_producers=int(a["n_producers"]),
        n_injectors=int(a["n_injectors"]),
        phases=tuple(str(p) for p in a.get("phases", ())),
        has_faults=bool(a.get("has_faults", False)),
        has_multipliers=bool(a.get("has_multipliers", False)),
        summary=str(a.get("summary", "")),
    )
    return "description recorded"


def _tool_set_plan(state: PipelineState, a: Mapping) -> str:
    state.plan = DoePlan(
        budget_tier=str(a["budget_tier"]),
        max_parameters=int(a["max_parameters"]),
        n_initial=int(a["n_initial"]),
        n_total=int(a["n_total"]),
        parameter_families=tuple(str(f) for f in a["parameter_families"]),
        rationale=str(a.get("rationale", "")),
        target_improvement_pct=float(a.get("target_improvement_pct", 50.0)),
    )
    return "plan recorded"


def _tool_lookup_docs(state: PipelineState, a: Mapping) -> str:
    store = state.doc_store or DocStore({})
    hits = lookup_keyword_doc(store, str(a.get("query", "")))
    if not hits:
        return "no documentation found"
    head = hits[0]
    return f"{head.keyword}: {head.text[:200]}"


def _tool_add_parameter(state: PipelineState, a: Mapping) -> str:
    spec = _spec_from_args(a)
    space = state.space if state.space is not None else P.empty_space(state.deck)
    state.space = P.add_parameter(space, spec)
    return (f"added {spec.name} [{spec.lower:g}, {spec.upper:g}] "
            f"{spec.scale} at {spec.target[0]}/{spec.target[1]}")


def _tool_set_bounds(state: PipelineState, a: Mapping) -> str:
    if state.space is None:
        raise ParameterError("no parameter space yet")
    state.space = P.with_bounds(
        state.space, str(a["name"]), float(a["lower"]), float(a["upper"])
    )
    return f"bounds of {a['name']} now [{float(a['lower']):g}, {float(a['upper']):g}]"


def _tool_remove_parameter(state: PipelineState, a: Mapping) -> str:
    if state.space is None:
        raise ParameterError("no parameter space yet")
    state.space = P.remove_parameter(state.space, str(a["name"]))
    return f"removed {a['name']}"


def _tool_dry_run(state: PipelineState, a: Mapping) -> str:
    if state.space is None or not state.space.specs:
        return "nothing to validate"
    report = P.dry_run_validate(state.space, _default_validators())
    if report.ok:
        return "ok"
    parts = [f"{e.corner}: {e.outcome.message}" for e in report.failures()]
    return f"{len(parts)} failure(s): " + "; ".join(parts)


def _tool_set_optimizer(state: PipelineState, a: Mapping) -> str:
    cfg = OptimizerConfig(
        dimension=int(a["dimension"]),
        n_initial=int(a["n_initial"]),
        n_total=int(a["n_total"]),
        acquisition=str(a["acquisition"]),
        seed=int(a["seed"]),
        kernel=str(a.get("kernel", "matern52")),
    )
    state.optimizer_config = cfg
    return (f"optimizer: dim {cfg.dimension}, {cfg.n_initial} initial / "
            f"{cfg.n_total} total, {cfg.acquisition}, seed {cfg.seed}")


def _tool_write_summary(state: PipelineState, a: Mapping) -> str:
    state.summary = _numeric_summary(
        state,
        tuple(str(r) for r in a.get("recommendations", ())),
        str(a.get("text", "")),
    )
    return "summary recorded"


_TOOL_FNS: dict[str, Callable[[PipelineState, Mapping], str]] = {
    "set_description": _tool_set_description,
    "set_plan": _tool_set_plan,
    "lookup_keyword_doc": _tool_lookup_docs,
    "add_parameter": _tool_add_parameter,
    "set_bounds": _tool_set_bounds,
    "remove_parameter": _tool_remove_parameter,
    "dry_run_validate": _tool_dry_run,
    "set_optimizer": _tool_set_optimizer,
    "write_summary": _tool_write_summary,
}

_NUM = {"type": "number"}
TOOL_SPECS: dict[str, ToolSpec] = {
    "set_description": ToolSpec(
        "set_description",
        "Record the reservoir description extracted from the deck.",
        {"type": "object", "properties": {
            "model_type": {"type": "string"},
            "dims": {"type": "array", "items": {"type": "integer"}},
            "active_cells": {"type": "integer"},
            "n_producers": {"type": "integer"},
            "n_injectors": {"type": "integer"},
            "phases": {"type": "array", "items": {"type": "string"}},
            "has_faults": {"type": "boolean"},
            "has_multipliers": {"type": "boolean"},
            "summary": {"type": "string"},
        }},
    ),
    "set_plan": ToolSpec(
        "set_plan",
        "Record the search plan: budget tier, parameter cap, evaluation "
        "budget and prioritized parameter families.",
        {"type": "object", "properties": {
            "budget_tier": {"type": "string"},
            "max_parameters": {"type": "integer"},
            "n_initial": {"type": "integer"},
            "n_total": {"type": "integer"},
            "parameter_families": {"type": "array", "items": {"type": "string"}},
            "rationale": {"type": "string"},
            "target_improvement_pct": _NUM,
        }},
    ),
    "lookup_keyword_doc": ToolSpec(
        "lookup_keyword_doc",
        "Look up reference documentation for a deck keyword.",
        {"type": "object", "properties": {"query": {"type": "string"}}},
    ),
    "add_parameter": ToolSpec(
        "add_parameter",
        "Bind one deck token as a tunable parameter with bounds.",
        {"type": "object", "properties": {
            "name": {"type": "string"}, "lower": _NUM, "upper": _NUM,
            "initial": _NUM, "section": {"type": "string"},
            "keyword": {"type": "string"}, "occurrence": {"type": "integer"},
            "token": {"type": "array", "items": {"type": "integer"}},
            "scale": {"type": "string"}, "unit": {"type": "string"},
        }},
    ),
    "set_bounds": ToolSpec(
        "set_bounds",
        "Replace the bounds of an existing parameter.",
        {"type": "object", "properties": {
            "name": {"type": "string"}, "lower": _NUM, "upper": _NUM,
        }},
    ),
    "remove_parameter": ToolSpec(
        "remove_parameter",
        "Drop a parameter; its deck token reverts to the initial value.",
        {"type": "object", "properties": {"name": {"type": "string"}}},
    ),
    "dry_run_validate": ToolSpec(
        "dry_run_validate",
        "Substitute the all-lower and all-upper corners and validate both decks.",
        {"type": "object", "properties": {}},
    ),
    "set_optimizer": ToolSpec(
        "set_optimizer",
        "Record the optimizer configuration for the matching loop.",
        {"type": "object", "properties": {
            "dimension": {"type": "integer"}, "n_initial": {"type": "integer"},
            "n_total": {"type": "integer"}, "acquisition": {"type": "string"},
            "seed": {"type": "integer"}, "kernel": {"type": "string"},
        }},
    ),
    "write_summary": ToolSpec(
        "write_summary",
        "Finalize the run summary with recommendations and a closing note.",
        {"type": "object", "properties": {
            "recommendations": {"type": "array", "items": {"type": "string"}},
            "text": {"type": "string"},
        }},
    ),
}


def _execute_tool(state: PipelineState, agent: str, name: str,
                  args: Mapping) -> str:
    fn = _TOOL_FNS.get(name)
    if fn is None:
        return f"error: unknown tool {name!r}"
    try:
        result = fn(state, args)
    except (ParameterError, DeckError, PipelineError) as exc:
        # relayed back to the caller; nothing was mutated, nothing is recorded
        return f"error: {exc}"
    state.messages.append(Message(
        "tool_call", agent,
        json.dumps({"tool": name, "arguments": _jsonable(args)}, sort_keys=True),
    ))
    state.messages.append(Message("tool_result", agent, result))
    return result


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def replay_space(deck: Deck, messages: Sequence[Message]) -> P.ParameterSpace:
    """Rebuild the parameter space by replaying recorded tool calls."""
    space = P.empty_space(deck)
    for m in messages:
        if m.role != "tool_call":
            continue
        call = json.loads(m.text)
        a = call.get("arguments", {})
        tool = call.get("tool")
        if tool == "add_parameter":
            space = P.add_parameter(space, _spec_from_args(a))
        elif tool == "remove_parameter":
            space = P.remove_parameter(space, str(a["name"]))
        elif tool == "set_bounds":
            space = P.with_bounds(space, str(a["name"]),
                                  float(a["lower"]), float(a["upper"]))
    return space


def _drive(state: PipelineState, agent: str, system: str,
           steps: Sequence[tuple[str, Mapping]], final: str,
           client: ChatModelClient | None, tool_names: tuple[str, ...]) -> None:
    """Run one agent's turn: either execute the rule-based step list, or let
    a chat-model client drive the same tools until it answers with text."""
    if client is None:
        for name, args in steps:
            result = _execute_tool(state, agent, name, args)
            if result.startswith("error: "):
                raise PipelineError(f"{agent}.{name}: {result[7:]}")
        _say(state, agent, final)
        return

    tools = tuple(TOOL_SPECS[n] for n in tool_names)
    messages: list[tuple[str, str]] = [("user", _state_brief(state))]
    for _ in range(_MAX_AGENT_STEPS):
        resp = client.complete(ChatRequest(system, tuple(messages), tools))
        if resp.tool is None:
            _say(state, agent, (resp.text or "").strip())
            return
        if resp.tool not in tool_names:
            result = f"error: tool {resp.tool!r} is not available to {agent}"
        else:
            result = _execute_tool(state, agent, resp.tool,
                                   dict(resp.arguments or {}))
        messages.append(("tool", f"{resp.tool}: {result}"))
    raise PipelineError(f"{agent} exceeded {_MAX_AGENT_STEPS} tool calls")


def _state_brief(state: PipelineState) -> str:
    bits = [f"phase: {state.phase}"]
    if state.description is not None:
        bits.append(state.description.summary)
    if state.plan is not None:
        bits.append(
            f"plan: {state.plan.budget_tier}, up to {state.plan.max_parameters} "
            f"parameters, {state.plan.n_initial}/{state.plan.n_total} evaluations"
        )
    if state.initial_metric is not None:
        bits.append(f"baseline metric: {state.initial_metric:.6g}")
    if state.space is not None:
        bits.append(f"parameters: {', '.join(s.name for s in state.space.specs)}")
    return "\n".join(bits)


# ---------------------------------------------------------------------------
# Reviewer
# ---------------------------------------------------------------------------

_REVIEWER_SYSTEM = (
    "You review a reservoir simulation deck and record a concise factual "
    "description with set_description: model type, grid dims, active cells, "
    "well counts by role, phases, fault/multiplier flags."
)


def _well_token_name(tok) -> str | None:
    if tok.kind in ("string", "word"):
        return str(tok.value).strip("'\"").upper()
    return None


def _names_in_keyword(deck: Deck, name: str) -> list[str]:
    out = []
    for kw in deck.keywords_named(name):
        for rec in kw.records:
            if rec.items:
                wn = _well_token_name(rec.items[0])
                if wn:
                    out.append(wn)
    return out


def _reviewer_decision(deck: Deck) -> tuple[dict, list[str]]:
    try:
        kw = deckmod.get_keyword(deck, "RUNSPEC", "DIMENS", 0)
        vals = [t for t in deckmod.expand_record(kw.records[0])
                if t.kind == "number"]
        if len(vals) < 3:
            raise DeckUnreadable("DIMENS does not hold three dimensions")
        dims = tuple(int(v.value) for v in vals[:3])
    except DeckError as exc:
        raise DeckUnreadable(f"cannot establish grid dimensions: {exc}") from exc

    active = dims[0] * dims[1] * dims[2]
    if deck.has_keyword("ACTNUM"):
        n = 0
        for kw in deck.keywords_named("ACTNUM"):
            for rec in kw.records:
                for tok in deckmod.expand_record(rec):
                    if tok.kind == "number" and float(tok.value) != 0.0:
                        n += 1
        active = n

    phases = tuple(p for p in ("OIL", "WATER", "GAS", "DISGAS", "VAPOIL")
                   if deck.has_keyword(p))
    model_type = ("blackoil"
                  if "OIL" in phases and ({"WATER", "GAS"} & set(phases))
                  else "other")

    warnings = []
    declared = set(_names_in_keyword(deck, "WELSPECS"))
    if not declared:
        warnings.append("warning: no WELSPECS found, well counts are unknown.")
        n_prod = n_inj = 0
    else:
        prod = set(_names_in_keyword(deck, "WCONPROD")) \
            | set(_names_in_keyword(deck, "WCONHIST"))
        inj = set(_names_in_keyword(deck, "WCONINJE")) \
            | set(_names_in_keyword(deck, "WCONINJH"))
        n_prod = len(declared & prod)
        n_inj = len(declared & inj)

    has_faults = deck.has_keyword("FAULTS") or deck.has_keyword("MULTFLT")
    has_multipliers = any(
        deck.has_keyword(k) for k in ("MULTX", "MULTY", "MULTZ", "MULTPV",
                                      "MULTFLT")
    )
    summary = (
        f"{model_type} model, {dims[0]}x{dims[1]}x{dims[2]} grid with "
        f"{active} active cells, {n_prod} producer(s) and {n_inj} injector(s); "
        f"phases: {', '.join(phases) if phases else 'not declared'}."
    )
    args = {
        "model_type": model_type, "dims": list(dims), "active_cells": active,
        "n_producers": n_prod, "n_injectors": n_inj, "phases": list(phases),
        "has_faults": has_faults, "has_multipliers": has_multipliers,
        "summary": summary,
    }
    return args, warnings


def describe_deck(deck: Deck) -> tuple[ReservoirDescription, tuple[str, ...]]:
    """One-shot deck review outside a pipeline run (CLI inspect)."""
    args, warnings = _reviewer_decision(deck)
    return ReservoirDescription(**args), tuple(warnings)


def reviewer_agent(state: PipelineState,
                   client: ChatModelClient | None = None) -> PipelineState:
    _require_phase(state, "created")
    try:
        args, warnings = _reviewer_decision(state.deck)
    except DeckUnreadable as exc:
        _fail(state, exc)
        return state
    final = " ".join([args["summary"], *warnings])
    _drive(state, "reviewer", _REVIEWER_SYSTEM,
           [("set_description", args)], final, client, ("set_description",))
    _advance(state, "reviewed")
    return state


# ---------------------------------------------------------------------------
# Baseline evaluation (the non-LLM simulator agent's first job)
# ---------------------------------------------------------------------------


def compute_baseline(state: PipelineState, backend) -> PipelineState:
    """Evaluate the unmodified deck so the planner sees the starting misfit."""
    _require_phase(state, "reviewed")
    report, series = evaluate_text(
        state.deck.serialize(), backend, state.observations
    )
    state.initial_metric = report.total
    state.baseline_report = report
    state.initial_series = series
    worst = report.summary_rows()[0][0] if report.per_series else "n/a"
    _say(state, "simulator",
         f"baseline wNRMSE {report.total:.6g}; largest contribution from {worst}.")
    return state


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------

_PLANNER_SYSTEM = (
    "You size the history-matching search from the reservoir description and "
    "the baseline misfit breakdown, and record it with set_plan: budget tier, "
    "parameter cap, evaluation budget, prioritized parameter families."
)


@dataclass(frozen=True)
class TierSpec:
    name: str
    max_parameters: int
    n_initial: int
    n_total: int
    families: tuple[str, ...]
    target_improvement_pct: float


@dataclass(frozen=True)
class PlannerRules:
    """Budget tiers keyed by active-cell count; tune per deployment."""

    generous_cells: int = 1_000
    moderate_cells: int = 50_000
    generous: TierSpec = TierSpec(
        "generous", 10, 32, 80,
        ("layer_permeability", "relperm_endpoints"), 50.0)
    moderate: TierSpec = TierSpec(
        "moderate", 10, 32, 64,
        ("layer_permeability", "porosity_groups", "relperm_endpoints"), 30.0)
    conservative: TierSpec = TierSpec(
        "conservative", 80, 32, 100,
        ("fault_multipliers", "layer_permeability"), 10.0)

    def pick(self, active_cells: int) -> TierSpec:
        if active_cells <= self.generous_cells:
            return self.generous
        if active_cells <= self.moderate_cells:
            return self.moderate
        return self.conservative


def planner_agent(state: PipelineState, client: ChatModelClient | None = None,
                  rules: PlannerRules = PlannerRules()) -> PipelineState:
    _require_phase(state, "reviewed")
    if state.description is None:
        raise PipelineError("planner needs the reviewer's description")
    if state.initial_metric is None:
        raise PipelineError("planner needs the baseline metric; "
                            "run compute_baseline first")
    tier = rules.pick(state.description.active_cells)
    rationale = (
        f"{state.description.active_cells} active cells put the model in the "
        f"{tier.name} tier: up to {tier.max_parameters} parameters, "
        f"{tier.n_initial} space-filling points and {tier.n_total} evaluations "
        f"in total. Baseline wNRMSE is {state.initial_metric:.6g}."
    )
    args = {
        "budget_tier": tier.name,
        "max_parameters": tier.max_parameters,
        "n_initial": tier.n_initial,
        "n_total": tier.n_total,
        "parameter_families": list(tier.families),
        "rationale": rationale,
        "target_improvement_pct": tier.target_improvement_pct,
    }
    _drive(state, "planner", _PLANNER_SYSTEM,
           [("set_plan", args)], rationale, client, ("set_plan",))
    _advance(state, "planned")
    return state


# ---------------------------------------------------------------------------
# Parameterizer
# ---------------------------------------------------------------------------

_PARAMETERIZER_SYSTEM = (
    "You turn deck tokens into tunable parameters per the plan's family "
    "priorities. Consult lookup_keyword_doc before touching a keyword, add "
    "parameters with physically sensible bounds, then dry_run_validate and "
    "repair (shrink bounds or remove) until the corners pass."
)

_FAMILY_KEYWORD = {
    "layer_permeability": "PERMX",
    "porosity_groups": "PORO",
    "relperm_endpoints": "SWOF",
    "fault_multipliers": "MULTFLT",
}


def _record_runs(rec) -> list[tuple[int, float, int]] | None:
    """(token_index, value, cell_count) per item, None if not plain numbers."""
    runs = []
    for ti, tok in enumerate(rec.items):
        if tok.kind == "repeat" and tok.value.kind == "number":
            runs.append((ti, float(tok.value.value), tok.count))
        elif tok.kind == "number":
            runs.append((ti, float(tok.value), 1))
        else:
            return None
    return runs or None


def _grid_array_specs(deck, dims, keyword, layer_prefix, run_prefix,
                      bounds_fn, unit) -> list[P.ParameterSpec]:
    try:
        kw = deckmod.get_keyword(deck, "GRID", keyword, 0)
    except DeckError:
        return []
    if not kw.records:
        return []
    runs = _record_runs(kw.records[0])
    if runs is None:
        return []
    nx, ny, nz = dims
    per_layer = len(runs) == nz and all(c == nx * ny for _, _, c in runs)
    if not per_layer and len(runs) > 8:
        return []
    prefix = layer_prefix if per_layer else run_prefix
    specs = []
    for k, (ti, value, _) in enumerate(runs):
        if value <= 0:
            continue
        lower, upper, scale = bounds_fn(value)
        specs.append(P.ParameterSpec(
            f"{prefix}{k + 1}", lower, upper, value,
            ("GRID", keyword, 0, (0, ti)), scale, unit,
        ))
    return specs


def _scan_layer_permeability(deck, dims):
    return _grid_array_specs(deck, dims, "PERMX", "PERM_L", "PERM_R",
                             P.perm_value_bounds, "mD")


def _scan_porosity_groups(deck, dims):
    return _grid_array_specs(deck, dims, "PORO", "PORO_L", "PORO_G",
                             P.poro_value_bounds, "")


def _table_cells(rec) -> list[list[tuple[float, int]]] | None:
    """Table rows as (value, token_index) cells; None unless a clean numeric
    table with uniform width ≥ 3 and ≥ 2 rows."""
    rows: list[list[tuple[float, int]]] = []
    row: list[tuple[float, int]] = []
    line = None
    for ti, tok in enumerate(rec.items):
        if tok.kind != "number":
            return None
        if line is None or tok.line != line:
            if row:
                rows.append(row)
            row = []
            line = tok.line
        row.append((float(tok.value), ti))
    if row:
        rows.append(row)
    widths = {len(r) for r in rows}
    if len(rows) < 2 or len(widths) != 1 or widths.pop() < 3:
        return None
    return rows


def _scan_relperm_endpoints(deck, dims):
    specs = []
    plans = (
        ("SWOF", (("KRW_END", "last", 1, "kr"), ("KROW_END", "first", 2, "kr"),
                  ("SWL", "first", 0, "sat"))),
        ("SGOF", (("KRG_END", "last", 1, "kr"), ("KROG_END", "first", 2, "kr"))),
    )
    for kw_name, endpoints in plans:
        try:
            kw = deckmod.get_keyword(deck, "PROPS", kw_name, 0)
        except DeckError:
            continue
        if not kw.records:
            continue
        rows = _table_cells(kw.records[0])
        if rows is None:
            continue
        for name, which, col, kind in endpoints:
            row = rows[-1] if which == "last" else rows[0]
            value, ti = row[col]
            if kind == "kr":
                lower, upper, scale = P.kr_endpoint_bounds(value)
            else:
                neighbor = rows[1][col][0]
                if neighbor == value:
                    continue
                lower, upper, scale = P.saturation_endpoint_bounds(value, neighbor)
            if not (lower < upper):
                continue
            specs.append(P.ParameterSpec(
                name, lower, upper, value,
                ("PROPS", kw_name, 0, (0, ti)), scale, "",
            ))
    return specs


def _scan_fault_multipliers(deck, dims):
    specs = []
    seen = set()
    occ_by_section: dict[str, int] = {}
    for sec in deck.sections:
        for kw in sec.keywords:
            if kw.name != "MULTFLT":
                continue
            occ = occ_by_section.get(sec.name, 0)
            occ_by_section[sec.name] = occ + 1
            for ri, rec in enumerate(kw.records):
                if len(rec.items) < 2:
                    continue
                fault = _well_token_name(rec.items[0])
                tok = rec.items[1]
                if fault is None or tok.kind != "number":
                    continue
                name = "MULT_" + "".join(
                    c if c.isalnum() else "_" for c in fault)
                if name in seen:
                    continue
                value = float(tok.value)
                lower, upper, scale = P.fault_multiplier_bounds()
                if not (lower <= value <= upper):
                    continue
                seen.add(name)
                specs.append(P.ParameterSpec(
                    name, lower, upper, value,
                    (sec.name, "MULTFLT", occ, (ri, 1)), scale, "",
                ))
    return specs


_FAMILY_SCANNERS = {
    "layer_permeability": _scan_layer_permeability,
    "porosity_groups": _scan_porosity_groups,
    "relperm_endpoints": _scan_relperm_endpoints,
    "fault_multipliers": _scan_fault_multipliers,
}


def _blame(space: P.ParameterSpace, corners: set[str]) -> list[str]:
    """Names of specs that individually reproduce a corner failure."""
    validators = _default_validators()
    bad = []
    for spec in space.specs:
        for corner in sorted(corners):
            a = P.initial_assignment(space)
            a[spec.name] = spec.lower if corner == "lower" else spec.upper
            deck = P.substitute(space, a)
            if any(not v(deck).ok for v in validators):
                bad.append(spec.name)
                break
    return bad


def _shrunk(spec: P.ParameterSpec, corners: set[str]) -> tuple[float, float] | None:
    """Bounds halved toward the initial on each failing side; None when the
    box cannot shrink any further."""
    lower, upper = spec.lower, spec.upper
    if "lower" in corners:
        lower = (spec.lower + spec.initial) / 2.0
    if "upper" in corners:
        upper = (spec.upper + spec.initial) / 2.0
    if not (lower < upper):
        return None
    if lower == spec.lower and upper == spec.upper:
        return None
    if (upper - lower) < 1e-9 * max(1.0, abs(spec.initial)):
        return None
    return lower, upper


def _parameterizer_steps(state: PipelineState) -> tuple[list, str]:
    plan = state.plan
    dims = state.description.dims
    steps: list[tuple[str, Mapping]] = []

    candidates: list[P.ParameterSpec] = []
    for family in plan.parameter_families:
        if len(candidates) >= plan.max_parameters:
            break
        scanner = _FAMILY_SCANNERS.get(family)
        found = scanner(state.deck, dims) if scanner else []
        if found:
            steps.append(("lookup_keyword_doc",
                          {"query": _FAMILY_KEYWORD.get(family, family)}))
        for spec in found:
            if len(candidates) < plan.max_parameters:
                candidates.append(spec)
    if not candidates:
        raise NoParametersFound(
            f"no parameterizable targets for families {plan.parameter_families}"
        )

    space = P.empty_space(state.deck)
    for spec in candidates:
        steps.append(("add_parameter", _args_from_spec(spec)))
        space = P.add_parameter(space, spec)
    steps.append(("dry_run_validate", {}))

    for _ in range(_MAX_REPAIR_ROUNDS):
        report = P.dry_run_validate(space, _default_validators())
        if report.ok:
            break
        corners = {e.corner for e in report.failures()}
        offenders = _blame(space, corners) or [space.specs[-1].name]
        for name in offenders:
            spec = space.spec(name)
            shrunk = _shrunk(spec, corners)
            if shrunk is None:
                steps.append(("remove_parameter", {"name": name}))
                space = P.remove_parameter(space, name)
            else:
                steps.append(("set_bounds",
                              {"name": name, "lower": shrunk[0],
                               "upper": shrunk[1]}))
                space = P.with_bounds(space, name, *shrunk)
        if not space.specs:
            raise NoParametersFound("validation repairs removed every parameter")
        steps.append(("dry_run_validate", {}))

    report = P.dry_run_validate(space, _default_validators())
    if not report.ok:
        # out of repair rounds: drop the stubborn specs outright
        corners = {e.corner for e in report.failures()}
        for name in _blame(space, corners) or [space.specs[-1].name]:
            steps.append(("remove_parameter", {"name": name}))
            space = P.remove_parameter(space, name)
        if not space.specs:
            raise NoParametersFound("validation repairs removed every parameter")
        steps.append(("dry_run_validate", {}))
        if not P.dry_run_validate(space, _default_validators()).ok:
            raise NoParametersFound(
                "could not reach a corner-valid parameterization")

    names = ", ".join(s.name for s in space.specs)
    final = (f"parameterization complete: {len(space.specs)} parameter(s) "
             f"({names}); corner validation passes.")
    return steps, final


def parameterizer_agent(state: PipelineState,
                        client: ChatModelClient | None = None) -> PipelineState:
    _require_phase(state, "planned")
    if state.plan is None or state.description is None:
        raise PipelineError("parameterizer needs a plan and a description")
    try:
        steps, final = _parameterizer_steps(state)
    except NoParametersFound as exc:
        _fail(state, exc)
        return state
    _drive(state, "parameterizer", _PARAMETERIZER_SYSTEM, steps, final, client,
           ("lookup_keyword_doc", "add_parameter", "set_bounds",
            "remove_parameter", "dry_run_validate"))
    if state.space is None or not state.space.specs:
        _fail(state, NoParametersFound("agent finished without any parameters"))
        return state
    _advance(state, "parameterized")
    _advance(state, "checkpoint_params")
    return state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundChange:
    name: str
    lower: float
    upper: float


@dataclass(frozen=True)
class CheckpointEdits:
    approve: bool = True
    bounds: tuple[BoundChange, ...] = ()
    add: tuple[P.ParameterSpec, ...] = ()
    remove: tuple[str, ...] = ()
    optimizer: Mapping[str, object] = field(default_factory=dict)


_EDITABLE_OPTIMIZER_FIELDS = frozenset({
    "n_initial", "n_total", "acquisition", "seed", "kernel", "ei_xi",
    "lcb_kappa", "hedge_eta", "candidate_pool", "refine_steps",
    "duplicate_tol", "nan_penalty",
})


def _apply_parameter_edits(state: PipelineState, edits: CheckpointEdits) -> None:
    if edits.optimizer:
        raise InvalidEdit(
            "optimizer settings are not editable at the parameter checkpoint")
    space = state.space
    applied: list[tuple[str, dict]] = []
    try:
        for name in edits.remove:
            space = P.remove_parameter(space, name)
            applied.append(("remove_parameter", {"name": name}))
        for spec in edits.add:
            space = P.add_parameter(space, spec)
            applied.append(("add_parameter", _args_from_spec(spec)))
        for b in edits.bounds:
            space = P.with_bounds(space, b.name, b.lower, b.upper)
            applied.append(("set_bounds", {"name": b.name, "lower": b.lower,
                                           "upper": b.upper}))
    except (ParameterError, DeckError) as exc:
        raise InvalidEdit(str(exc)) from exc
    if space.specs:
        report = P.dry_run_validate(space, _default_validators())
        if not report.ok:
            first = report.failures()[0]
            raise InvalidEdit(
                f"edited space fails validation at the {first.corner} corner: "
                f"{first.outcome.message}")
    state.space = space
    for name, args in applied:
        state.messages.append(Message(
            "tool_call", "user",
            json.dumps({"tool": name, "arguments": _jsonable(args)},
                       sort_keys=True),
        ))


def _apply_optimizer_edits(state: PipelineState, edits: CheckpointEdits) -> None:
    if edits.bounds or edits.add or edits.remove:
        raise InvalidEdit(
            "parameter edits are not available at the optimizer checkpoint")
    if not edits.optimizer:
        return
    unknown = set(edits.optimizer) - _EDITABLE_OPTIMIZER_FIELDS
    if unknown:
        raise InvalidEdit(f"not editable optimizer fields: {sorted(unknown)}")
    try:
        cfg = dataclasses.replace(state.optimizer_config, **dict(edits.optimizer))
    except (TypeError, ValueError) as exc:
        raise InvalidEdit(str(exc)) from exc
    if cfg.acquisition not in (*ACQUISITIONS, "GP_HEDGE"):
        raise InvalidEdit(f"unknown acquisition {cfg.acquisition!r}")
    if not (1 <= cfg.n_initial <= cfg.n_total):
        raise InvalidEdit(
            f"need 1 <= n_initial <= n_total, got {cfg.n_initial}/{cfg.n_total}")
    state.optimizer_config = cfg
    state.messages.append(Message(
        "tool_call", "user",
        json.dumps({"tool": "set_optimizer",
                    "arguments": _jsonable(dict(edits.optimizer))},
                   sort_keys=True),
    ))


def checkpoint_apply(state: PipelineState,
                     edits: CheckpointEdits) -> PipelineState:
    """Apply human edits at a checkpoint; invalid edits change nothing."""
    if state.phase == "checkpoint_params":
        _apply_parameter_edits(state, edits)
        if edits.approve:
            if not state.space.specs:
                _say(state, "user", "approved")
                _fail(state, NoParametersFound(
                    "no parameters remain after checkpoint edits"))
                return state
            _say(state, "user", "approved parameter set")
            _advance(state, "optimizer_ready")
    elif state.phase == "checkpoint_optimizer":
        _apply_optimizer_edits(state, edits)
        if edits.approve:
            _say(state, "user", "approved optimizer configuration")
            _advance(state, "matching")
    else:
        raise IllegalPhase(f"no checkpoint is open in phase {state.phase!r}")
    return state


# ---------------------------------------------------------------------------
# Optimizer agent
# ---------------------------------------------------------------------------

_OPTIMIZER_SYSTEM = (
    "You configure the matching-loop optimizer from the plan and the "
    "parameter space dimension, recording it with set_optimizer."
)


def optimizer_agent(state: PipelineState,
                    client: ChatModelClient | None = None) -> PipelineState:
    _require_phase(state, "optimizer_ready")
    dim = len(state.space.specs)
    acquisition = "GP_HEDGE" if dim <= 10 else "EI"
    args = {
        "dimension": dim,
        "n_initial": state.plan.n_initial,
        "n_total": state.plan.n_total,
        "acquisition": acquisition,
        "seed": state.seed,
        "kernel": "matern52",
    }
    final = (
        f"Gaussian-process search over {dim} parameter(s): "
        f"{args['n_initial']} space-filling points, {args['n_total']} "
        f"evaluations in total, {acquisition} acquisition."
    )
    _drive(state, "optimizer", _OPTIMIZER_SYSTEM,
           [("set_optimizer", args)], final, client, ("set_optimizer",))
    _advance(state, "checkpoint_optimizer")
    return state


# ---------------------------------------------------------------------------
# Matching loop
# ---------------------------------------------------------------------------


def matching_loop(state: PipelineState, backend,
                  stop: Callable[[], bool] | None = None,
                  progress: Callable[[PipelineState, EvaluationRecord], None]
                  | None = None) -> PipelineState:
    """Ask/evaluate/tell until the budget is spent or a stop is requested.

    A partially filled evaluation log resumes where it left off: telling the
    recorded values back reproduces the optimizer's internal state because
    the whole session is deterministic in (seed, told values).
    """
    _require_phase(state, "matching")
    cfg = state.optimizer_config
    space = state.space
    obs = state.observations
    session = OptimizerSession(cfg)

    for i, ev in enumerate(state.evaluations):
        x = P.to_unit_cube(space, ev.assignment)
        if i == 0:
            session.tell_external(x, ev.metric, label="initial")
        else:
            session.tell(session.ask(), ev.metric)

    if state.best is None and state.evaluations:
        rec = min(state.evaluations, key=lambda e: e.metric)
        state.best = (dict(rec.assignment), rec.metric)

    while len(state.evaluations) < cfg.n_total:
        if stop is not None and stop():
            break
        if not state.evaluations:
            assignment = P.initial_assignment(space)
            report, series = evaluate(space, assignment, backend, obs)
            session.tell_external(P.to_unit_cube(space, assignment),
                                  report.total, label="initial")
            state.initial_metric = report.total
            state.initial_series = series
        else:
            x = session.ask()
            assignment = P.from_unit_cube(space, x)
            report, series = evaluate(space, assignment, backend, obs)
            session.tell(x, report.total)
        record = EvaluationRecord(dict(assignment), report)
        state.evaluations.append(record)
        if state.best is None or report.total < state.best[1]:
            state.best = (dict(assignment), report.total)
            state.best_report = report
            state.best_series = series
        if progress is not None:
            progress(state, record)

    # a resumed run may have lost the cached series; recompute for the report
    if state.evaluations and state.initial_series is None:
        first, state.initial_series = evaluate(
            space, state.evaluations[0].assignment, backend, obs)
        if not state.evaluations[0].report.per_series:
            state.evaluations[0] = EvaluationRecord(
                dict(state.evaluations[0].assignment), first)
    if state.best is not None and state.best_report is None:
        state.best_report, state.best_series = evaluate(
            space, state.best[0], backend, obs)

    n = len(state.evaluations)
    best_txt = f"{state.best[1]:.6g}" if state.best else "n/a"
    _say(state, "simulator", f"{n} evaluation(s) recorded; best wNRMSE {best_txt}.")
    _advance(state, "summarizing")
    return state


# ---------------------------------------------------------------------------
# Summarizer
# ---------------------------------------------------------------------------

_SUMMARIZER_SYSTEM = (
    "You close out the run: call write_summary with recommendations (cite "
    "the iteration budget or missing parameter families when the target was "
    "missed) and a short closing note."
)

_FAMILY_NAME_PREFIXES = {
    "layer_permeability": ("PERM",),
    "porosity_groups": ("PORO",),
    "relperm_endpoints": ("KR", "SW", "SG"),
    "fault_multipliers": ("MULT_",),
}


def _running_best(values: Sequence[float]) -> list[float]:
    out = []
    best = math.inf
    for v in values:
        best = min(best, v)
        out.append(best)
    return out


def _numeric_summary(state: PipelineState, recommendations: tuple[str, ...],
                     text: str) -> SummaryReport:
    if not state.evaluations or state.best is None:
        raise PipelineError("nothing to summarize: no evaluations recorded")
    before = state.evaluations[0].report
    after = state.best_report if state.best_report is not None else before
    initial = state.evaluations[0].metric
    best_metric = state.best[1]
    pct = improvement_percent(initial, best_metric) if initial > 0 else 0

    quantities = []
    for key in sorted(state.observations.series):
        b = before.per_series.get(key)
        a = after.per_series.get(key)
        weight = b.weight if b is not None else (a.weight if a is not None else 0.0)
        quantities.append(QuantityRow(
            key, weight,
            b.nrmse if b is not None else math.nan,
            a.nrmse if a is not None else math.nan,
        ))

    parameters = tuple(
        ParameterRow(s.name, s.lower, s.upper, s.initial,
                     float(state.best[0][s.name]))
        for s in state.space.specs
    )
    values = [e.metric for e in state.evaluations]
    evolution = tuple(
        (i + 1, v, b) for i, (v, b) in enumerate(zip(values, _running_best(values)))
    )
    init_series = state.initial_series or {}
    best_series = state.best_series or {}
    bundles = tuple(
        SeriesBundle(
            key,
            np.asarray(state.observations.times, dtype=float),
            np.asarray(state.observations.series[key], dtype=float),
            init_series.get(key),
            best_series.get(key),
        )
        for key in sorted(state.observations.series)
    )
    return SummaryReport(
        initial_metric=initial, best_metric=best_metric, improvement_pct=pct,
        quantities=tuple(quantities), parameters=parameters,
        recommendations=recommendations, metric_evolution=evolution,
        series=bundles, text=text,
    )


def _summarizer_decision(state: PipelineState) -> tuple[list[str], str]:
    initial = state.evaluations[0].metric
    best_metric = state.best[1]
    pct = improvement_percent(initial, best_metric) if initial > 0 else 0
    plan = state.plan
    target = plan.target_improvement_pct if plan is not None else 50.0

    recs: list[str] = []
    failed_sim = any(
        key == "*" and reason.startswith("simulation failed")
        for key, reason in (state.best_report.skipped
                            if state.best_report else ())
    )
    if failed_sim:
        recs.append("Simulations failed throughout the run; fix the simulator "
                    "backend before spending a larger budget.")
    if pct < target:
        n_total = plan.n_total if plan is not None else len(state.evaluations)
        recs.append(
            f"Improvement {pct}% fell short of the {target:g}% target; the "
            f"{n_total}-evaluation budget is a likely limit, consider raising it."
        )
        present = {s.name for s in state.space.specs}
        missing = []
        for family in (plan.parameter_families if plan is not None else ()):
            prefixes = _FAMILY_NAME_PREFIXES.get(family, ())
            if not any(n.startswith(p) for n in present for p in prefixes):
                missing.append(family)
        if missing:
            recs.append(
                "No parameters were drawn from: " + ", ".join(missing)
                + "; widening the parameterization may unlock further gains."
            )
    if best_metric >= initial:
        recs.append("The search never improved on the starting point; widen "
                    "the parameter bounds or revisit the parameter selection.")
    text = (
        f"History match finished: wNRMSE {initial:.6g} -> {best_metric:.6g} "
        f"({pct}% improvement over {len(state.evaluations)} evaluations)."
    )
    return recs, text


def summarizer_agent(state: PipelineState,
                     client: ChatModelClient | None = None) -> PipelineState:
    _require_phase(state, "summarizing")
    if not state.evaluations or state.best is None:
        raise PipelineError("nothing to summarize: no evaluations recorded")
    recs, text = _summarizer_decision(state)
    _drive(state, "summarizer", _SUMMARIZER_SYSTEM,
           [("write_summary", {"recommendations": recs, "text": text})],
           text, client, ("write_summary",))
    _advance(state, "done")
    return state


# ---------------------------------------------------------------------------
# End-to-end driver
# ---------------------------------------------------------------------------


def _run_checkpoint(state: PipelineState, handler) -> None:
    checkpoint_phase = state.phase
    if handler is None:
        checkpoint_apply(state, CheckpointEdits(approve=True))
        return
    for _ in range(32):
        edits = handler(state)
        checkpoint_apply(state, edits)
        if state.phase != checkpoint_phase:
            return
    raise PipelineError("checkpoint handler never approved")


def run_pipeline(deck, observations: HistorySet, backend,
                 interaction="auto", *, seed: int = 0,
                 client: ChatModelClient | None = None,
                 doc_store: DocStore | None = None,
                 planner_rules: PlannerRules = PlannerRules(),
                 stop: Callable[[], bool] | None = None,
                 progress=None) -> PipelineState:
    """Drive a run end to end.

    `interaction` is "auto" (both checkpoints approved untouched) or a
    callable `handler(state) -> CheckpointEdits` invoked while a checkpoint
    is open. The returned state is terminal: phase done or failed.
    """
    handler = None if interaction == "auto" else interaction
    state = new_state(deck, observations, seed=seed, doc_store=doc_store)
    try:
        reviewer_agent(state, client=client)
        if state.phase == "failed":
            return state
        compute_baseline(state, backend)
        planner_agent(state, client=client, rules=planner_rules)
        parameterizer_agent(state, client=client)
        if state.phase == "failed":
            return state
        _run_checkpoint(state, handler)
        if state.phase == "failed":
            return state
        optimizer_agent(state, client=client)
        _run_checkpoint(state, handler)
        if state.phase == "failed":
            return state
        matching_loop(state, backend, stop=stop, progress=progress)
        summarizer_agent(state, client=client)
    except PetromatchError as exc:
        _fail(state, exc)
    return state


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------


def _csv_cell(value) -> str:
    if value is None:
        return ""
    v = float(value)
    if math.isnan(v):
        return ""
    return f"{v:.17g}"


def _metric_svg(evolution, width=640, height=320) -> str:
    pad = 42.0
    values = [v for _, v, _ in evolution]
    bests = [b for _, _, b in evolution]
    lo = min(bests)
    hi = max(values)
    span = (hi - lo) or 1.0
    n = len(values)

    def pt(i, v):
        x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
        y = height - pad - (height - 2 * pad) * ((v - lo) / span)
        return f"{x:.1f},{y:.1f}"

    val_pts = " ".join(pt(i, v) for i, v in enumerate(values))
    best_pts = " ".join(pt(i, b) for i, b in enumerate(bests))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="#444"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="#444"/>'
        f'<polyline points="{val_pts}" fill="none" stroke="#888" '
        f'stroke-width="1"/>'
        f'<polyline points="{best_pts}" fill="none" stroke="#c0392b" '
        f'stroke-width="2"/>'
        f'<text x="{pad}" y="{pad - 10}" font-size="12" fill="#444">'
        f'wNRMSE per evaluation (red: best so far), '
        f'{lo:.4g} to {hi:.4g}</text>'
        f'</svg>'
    )


def write_report_bundle(state: PipelineState, outdir) -> Path:
    """Write report.md, metric_evolution.csv and per-series CSVs."""
    if state.summary is None:
        raise PipelineError("no summary to report; run the summarizer first")
    s = state.summary
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    rows = ["iter,metric,best_so_far"]
    rows += [f"{i},{_csv_cell(v)},{_csv_cell(b)}" for i, v, b in s.metric_evolution]
    (out / "metric_evolution.csv").write_text("\n".join(rows) + "\n")
    (out / "metric_evolution.svg").write_text(_metric_svg(s.metric_evolution))

    series_dir = out / "series"
    series_dir.mkdir(exist_ok=True)
    for bundle in s.series:
        quantity, _, well = bundle.key.partition(":")
        lines = ["time_days,observed,initial,best"]
        for i, t in enumerate(bundle.times):
            obs_v = _csv_cell(bundle.observed[i])
            ini = _csv_cell(bundle.sim_initial[i]) \
                if bundle.sim_initial is not None else ""
            best = _csv_cell(bundle.sim_best[i]) \
                if bundle.sim_best is not None else ""
            lines.append(f"{_csv_cell(t)},{obs_v},{ini},{best}")
        (series_dir / f"{well}_{quantity}.csv").write_text("\n".join(lines) + "\n")

    md = ["# History match report", ""]
    if state.description is not None:
        md += [state.description.summary, ""]
    if state.plan is not None:
        md += [state.plan.rationale, ""]
    md += [
        "## Outcome", "",
        "| | wNRMSE |", "|---|---|",
        f"| initial | {s.initial_metric:.6g} |",
        f"| best | {s.best_metric:.6g} |",
        f"| improvement | {s.improvement_pct}% |",
        "",
        "![metric evolution](metric_evolution.svg)", "",
        "## Parameters", "",
        "| name | lower | upper | initial | best |",
        "|---|---|---|---|---|",
    ]
    md += [
        f"| {p.name} | {p.lower:.6g} | {p.upper:.6g} | {p.initial:.6g} "
        f"| {p.best:.6g} |"
        for p in s.parameters
    ]
    md += [
        "", "## Series", "",
        "| series | weight | NRMSE before | NRMSE after |",
        "|---|---|---|---|",
    ]
    for q in s.quantities:
        before = "-" if math.isnan(q.nrmse_before) else f"{q.nrmse_before:.6g}"
        after = "-" if math.isnan(q.nrmse_after) else f"{q.nrmse_after:.6g}"
        md.append(f"| {q.key} | {q.weight:.6g} | {before} | {after} |")
    if s.recommendations:
        md += ["", "## Recommendations", ""]
        md += [f"- {r}" for r in s.recommendations]
    if s.text:
        md += ["", s.text]
    (out / "report.md").write_text("\n".join(md) + "\n")
    return out

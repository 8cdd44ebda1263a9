"""One directory per session: state.json, the deck and observation files,
an append-only evaluation log, and report artifacts.

Everything in the directory is plain text so sessions diff and inspect
cleanly. state.json snapshots the pipeline at phase boundaries; the
evaluation log is the authority for completed evaluations, which is what
makes resuming an interrupted matching run possible: replaying the logged
(assignment, metric) pairs restores the optimizer exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import io
import json
import os
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from . import deck as deckmod
from . import paramspace as P
from . import pipeline as PL
from .errors import (
    IllegalPhase,
    InvalidEdit,
    NoCheckpoint,
    NotFinished,
    PetromatchError,
    VersionConflict,
)
from .misfit import MisfitReport, dump_history_csv, load_history_csv
from .optimizer import OptimizerConfig
from .simulator import RunnerConfig, external_backend, proxy_backend

SCHEMA_VERSION = 1
CHECKPOINT_PHASES = ("checkpoint_params", "checkpoint_optimizer")

_PHASE_INDEX = {p: i for i, p in enumerate(PL.PHASE_ORDER)}


def new_session_id() -> str:
    return uuid.uuid4().hex[:12]


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass(frozen=True)
class SessionPaths:
    root: Path

    @property
    def state(self) -> Path:
        return self.root / "state.json"

    @property
    def deck(self) -> Path:
        return self.root / "deck.data"

    @property
    def observations(self) -> Path:
        return self.root / "observations.csv"

    @property
    def evaluations(self) -> Path:
        return self.root / "evaluations.csv"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"


# ---------------------------------------------------------------------------
# Evaluation log
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def append_evaluation(path: Path, names, index: int, assignment: Mapping,
                      metric: float, best_so_far: float) -> None:
    header = None
    if not path.exists():
        header = "iter," + ",".join(names) + ",metric,best_so_far\n"
    with open(path, "a") as fh:
        if header:
            fh.write(header)
        cells = [str(index)] + [_fmt(assignment[n]) for n in names]
        cells += [_fmt(metric), _fmt(best_so_far)]
        fh.write(",".join(cells) + "\n")


def _repair_log(path: Path) -> None:
    """Drop a torn final line so later appends continue a clean file."""
    if not path.exists():
        return
    text = path.read_text()
    if not text or text.endswith("\n"):
        return
    kept = text[: text.rfind("\n") + 1]
    if kept:
        path.write_text(kept)
    else:
        path.unlink()


def read_evaluations(path: Path) -> list[dict]:
    """Rows as {iter, values, metric, best_so_far}, ordered by iter."""
    if not path.exists():
        return []
    text = path.read_text()
    if not text.endswith("\n"):
        # a crashed writer can leave a torn final line; every complete
        # append ends with a newline, so drop the fragment
        text = text[: text.rfind("\n") + 1]
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0] != "iter":
        return []
    names = header[1:-2]
    rows = []
    for line in reader:
        if len(line) != len(header):
            continue
        rows.append({
            "iter": int(line[0]),
            "values": {n: float(v) for n, v in zip(names, line[1:-2])},
            "metric": float(line[-2]),
            "best_so_far": float(line[-1]),
        })
    return rows


# ---------------------------------------------------------------------------
# State snapshots
# ---------------------------------------------------------------------------


def _summary_to_json(s: PL.SummaryReport) -> dict:
    # series arrays live in the report artifacts, not the snapshot
    return {
        "initial_metric": s.initial_metric,
        "best_metric": s.best_metric,
        "improvement_pct": s.improvement_pct,
        "quantities": [dataclasses.asdict(q) for q in s.quantities],
        "parameters": [dataclasses.asdict(p) for p in s.parameters],
        "recommendations": list(s.recommendations),
        "metric_evolution": [list(t) for t in s.metric_evolution],
        "text": s.text,
    }


def _summary_from_json(d: Mapping) -> PL.SummaryReport:
    return PL.SummaryReport(
        initial_metric=float(d["initial_metric"]),
        best_metric=float(d["best_metric"]),
        improvement_pct=int(d["improvement_pct"]),
        quantities=tuple(PL.QuantityRow(**q) for q in d["quantities"]),
        parameters=tuple(PL.ParameterRow(**p) for p in d["parameters"]),
        recommendations=tuple(d["recommendations"]),
        metric_evolution=tuple((int(i), float(v), float(b))
                               for i, v, b in d["metric_evolution"]),
        series=(),
        text=str(d.get("text", "")),
    )


def state_to_json(state: PL.PipelineState) -> dict:
    return {
        "phase": state.phase,
        "seed": state.seed,
        "failure": state.failure,
        "initial_metric": state.initial_metric,
        "description": (dataclasses.asdict(state.description)
                        if state.description else None),
        "plan": dataclasses.asdict(state.plan) if state.plan else None,
        "space": (json.loads(P.manifest_json(state.space))
                  if state.space is not None else None),
        "optimizer": (dataclasses.asdict(state.optimizer_config)
                      if state.optimizer_config else None),
        "best": ({"assignment": dict(state.best[0]), "metric": state.best[1]}
                 if state.best else None),
        "summary": _summary_to_json(state.summary) if state.summary else None,
        "messages": [[m.role, m.agent, m.text] for m in state.messages],
    }


def state_from_json(data: Mapping, deck_text: str, observations_text: str,
                    evaluation_rows: list[dict]) -> PL.PipelineState:
    deck = deckmod.parse_deck(deck_text)
    obs = load_history_csv(observations_text)
    state = PL.PipelineState(deck=deck, observations=obs,
                             seed=int(data["seed"]))
    state.phase = str(data["phase"])
    state.failure = data.get("failure")
    im = data.get("initial_metric")
    state.initial_metric = float(im) if im is not None else None
    if data.get("description"):
        state.description = PL.ReservoirDescription(**data["description"])
    if data.get("plan"):
        state.plan = PL.DoePlan(**data["plan"])
    if data.get("space") is not None:
        state.space = P.space_from_manifest(deck, json.dumps(data["space"]))
    if data.get("optimizer"):
        state.optimizer_config = OptimizerConfig(**data["optimizer"])
    state.evaluations = [
        PL.EvaluationRecord(dict(r["values"]),
                            MisfitReport(r["metric"], {}, ()))
        for r in evaluation_rows
    ]
    if data.get("best"):
        state.best = (dict(data["best"]["assignment"]),
                      float(data["best"]["metric"]))
    if data.get("summary"):
        state.summary = _summary_from_json(data["summary"])
    state.messages = [PL.Message(role, agent, text)
                      for role, agent, text in data.get("messages", ())]
    return state


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def backend_from_config(config: Mapping, runs_dir: Path):
    kind = str(config.get("backend", "proxy"))
    if kind == "proxy":
        return proxy_backend()
    if kind == "external":
        if not config.get("command"):
            raise ValueError("external backend needs a command template")
        runner = RunnerConfig(
            command=tuple(str(c) for c in config["command"]),
            timeout_s=float(config.get("timeout_s", 3600.0)),
            results_name=str(config.get("results_name", "results.csv")),
            deck_name=str(config.get("deck_name", "case.data")),
        )
        return external_backend(runner, runs_dir)
    raise ValueError(f"unknown backend {kind!r}; use proxy or external")


def rules_from_config(config: Mapping) -> PL.PlannerRules:
    """Tier table with the budget/initial-point overrides applied."""
    rules = PL.PlannerRules()
    budget = config.get("budget")
    n_initial = config.get("n_initial")
    if budget is None and n_initial is None:
        return rules

    def adjust(tier: PL.TierSpec) -> PL.TierSpec:
        nt = int(budget) if budget is not None else tier.n_total
        ni = int(n_initial) if n_initial is not None else min(tier.n_initial, nt)
        if not (1 <= ni <= nt):
            raise ValueError(f"need 1 <= n_initial <= budget, got {ni}/{nt}")
        return dataclasses.replace(tier, n_initial=ni, n_total=nt)

    return dataclasses.replace(
        rules,
        generous=adjust(rules.generous),
        moderate=adjust(rules.moderate),
        conservative=adjust(rules.conservative),
    )


def _spec_from_json(a: Mapping) -> P.ParameterSpec:
    t = a["target"]
    return P.ParameterSpec(
        name=str(a["name"]), lower=float(a["lower"]), upper=float(a["upper"]),
        initial=float(a["initial"]),
        target=(str(t["section"]), str(t["keyword"]), int(t["occurrence"]),
                (int(t["token"][0]), int(t["token"][1]))),
        scale=str(a.get("scale", "linear")), unit=str(a.get("unit", "")),
    )


def edits_from_payload(payload: Mapping) -> PL.CheckpointEdits:
    """HTTP PATCH body to checkpoint edits; malformed input is InvalidEdit."""
    try:
        bounds = tuple(
            PL.BoundChange(str(name), float(pair[0]), float(pair[1]))
            for name, pair in (payload.get("bounds") or {}).items()
        )
        add = tuple(_spec_from_json(a) for a in payload.get("add") or ())
        remove = tuple(str(n) for n in payload.get("remove") or ())
        optimizer = dict(payload.get("optimizer") or {})
        approve = bool(payload.get("approve", False))
    except (AttributeError, KeyError, TypeError, ValueError, IndexError) as exc:
        raise InvalidEdit(f"malformed edit payload: {exc}") from exc
    return PL.CheckpointEdits(approve=approve, bounds=bounds, add=add,
                              remove=remove, optimizer=optimizer)


# ---------------------------------------------------------------------------
# Persisted session
# ---------------------------------------------------------------------------


class PersistedSession:
    """A pipeline run bound to a session directory.

    `advance` steps agents one phase at a time, snapshotting state.json
    after each; matching evaluations append to the log as they complete,
    so a killed process loses at most the evaluation it was inside.
    """

    def __init__(self, paths: SessionPaths, state: PL.PipelineState, *,
                 session_id: str, created_at: str, config: Mapping,
                 checkpoint_version: int = 0, run_target: str | None = None):
        self.paths = paths
        self.state = state
        self.id = session_id
        self.created_at = created_at
        self.config = dict(config)
        self.checkpoint_version = checkpoint_version
        self.run_target = run_target
        self.backend = backend_from_config(self.config, paths.runs_dir)
        self.planner_rules = rules_from_config(self.config)
        self.client = PL.client_from_env() if self.config.get("use_llm") else None

    @property
    def auto_approve(self) -> bool:
        return bool(self.config.get("auto_approve", False))

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, session_dir: Path, deck_text: str,
               observations_text: str, config: Mapping | None = None, *,
               session_id: str | None = None,
               created_at: str | None = None) -> "PersistedSession":
        config = dict(config or {})
        deck = deckmod.parse_deck(deck_text)  # surfaces diagnostics pre-write
        obs = load_history_csv(observations_text)
        state = PL.PipelineState(deck=deck, observations=obs,
                                 seed=int(config.get("seed", 0)))
        state.doc_store = PL.default_doc_store()
        session_dir = Path(session_dir)
        session_dir.mkdir(parents=True, exist_ok=False)
        atomic_write_text(SessionPaths(session_dir).deck, deck_text)
        atomic_write_text(SessionPaths(session_dir).observations,
                          dump_history_csv(obs))
        session = cls(
            SessionPaths(session_dir), state,
            session_id=session_id or session_dir.name,
            created_at=created_at or _utcnow(),
            config=config,
        )
        session.save()
        return session

    @classmethod
    def load(cls, session_dir: Path) -> "PersistedSession":
        paths = SessionPaths(Path(session_dir))
        doc = json.loads(paths.state.read_text())
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(
                f"state schema {doc.get('schema')!r} is not {SCHEMA_VERSION}")
        _repair_log(paths.evaluations)
        rows = read_evaluations(paths.evaluations)
        state = state_from_json(doc, paths.deck.read_text(),
                                paths.observations.read_text(), rows)
        state.doc_store = PL.default_doc_store()
        return cls(
            paths, state,
            session_id=str(doc["id"]),
            created_at=str(doc["created_at"]),
            config=doc.get("config", {}),
            checkpoint_version=int(doc.get("checkpoint_version", 0)),
            run_target=doc.get("run_target"),
        )

    def save(self) -> None:
        doc = {
            "schema": SCHEMA_VERSION,
            "id": self.id,
            "created_at": self.created_at,
            "config": self.config,
            "checkpoint_version": self.checkpoint_version,
            "run_target": self.run_target,
            **state_to_json(self.state),
        }
        atomic_write_text(self.paths.state,
                          json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # -- run control -------------------------------------------------------

    def check_advance(self, until: str | None) -> str:
        target = until or "done"
        if target not in _PHASE_INDEX or target == "created":
            raise IllegalPhase(f"cannot advance until {target!r}")
        if self.state.phase in PL.TERMINAL_PHASES:
            raise IllegalPhase(f"session already {self.state.phase}")
        return target

    def advance(self, until: str | None = None,
                stop: Callable[[], bool] | None = None) -> str:
        target = self.check_advance(until)
        self.run_target = target
        self.save()
        state = self.state
        try:
            while (state.phase not in PL.TERMINAL_PHASES
                   and _PHASE_INDEX[state.phase] < _PHASE_INDEX[target]):
                if state.phase in CHECKPOINT_PHASES and not self.auto_approve:
                    break
                self._step(stop=stop)
                self.save()
        except PetromatchError as exc:
            PL._fail(state, exc)
        finally:
            self.run_target = None
            self.save()
        return self.status()

    def _step(self, stop=None) -> None:
        state = self.state
        if state.phase == "created":
            PL.reviewer_agent(state, client=self.client)
        elif state.phase == "reviewed":
            if state.initial_metric is None:
                PL.compute_baseline(state, self.backend)
            PL.planner_agent(state, client=self.client,
                             rules=self.planner_rules)
        elif state.phase == "planned":
            PL.parameterizer_agent(state, client=self.client)
        elif state.phase in CHECKPOINT_PHASES:
            PL.checkpoint_apply(state, PL.CheckpointEdits(approve=True))
        elif state.phase == "optimizer_ready":
            PL.optimizer_agent(state, client=self.client)
        elif state.phase == "matching":
            PL.matching_loop(state, self.backend, stop=stop,
                             progress=self._log_evaluation)
        elif state.phase == "summarizing":
            PL.summarizer_agent(state, client=self.client)
            PL.write_report_bundle(state, self.paths.report_dir)
        else:  # pragma: no cover - the while condition excludes terminals
            raise IllegalPhase(f"cannot step from phase {state.phase!r}")

    def _log_evaluation(self, state: PL.PipelineState,
                        record: PL.EvaluationRecord) -> None:
        names = [s.name for s in state.space.specs]
        append_evaluation(self.paths.evaluations, names,
                          len(state.evaluations), record.assignment,
                          record.metric, state.best[1])

    def status(self, running: bool = False) -> str:
        if running:
            return "running"
        phase = self.state.phase
        if phase in PL.TERMINAL_PHASES:
            return phase
        if phase in CHECKPOINT_PHASES:
            return "waiting_checkpoint"
        return "idle"

    # -- checkpoint views ---------------------------------------------------

    def checkpoint_view(self) -> dict:
        phase = self.state.phase
        if phase == "checkpoint_params":
            manifest = json.loads(P.manifest_json(self.state.space))
            return {"kind": "parameters",
                    "version": self.checkpoint_version,
                    "parameters": manifest["parameters"]}
        if phase == "checkpoint_optimizer":
            return {"kind": "optimizer",
                    "version": self.checkpoint_version,
                    "optimizer": dataclasses.asdict(self.state.optimizer_config)}
        raise NoCheckpoint(f"no checkpoint is open in phase {phase!r}")

    def apply_checkpoint(self, payload: Mapping) -> dict:
        if self.state.phase not in CHECKPOINT_PHASES:
            raise NoCheckpoint(
                f"no checkpoint is open in phase {self.state.phase!r}")
        version = payload.get("version")
        if version != self.checkpoint_version:
            raise VersionConflict(
                f"checkpoint version is {self.checkpoint_version}, "
                f"edit cites {version!r}")
        edits = edits_from_payload(payload)
        PL.checkpoint_apply(self.state, edits)
        self.checkpoint_version += 1
        self.save()
        return {"phase": self.state.phase, "status": self.status(),
                "version": self.checkpoint_version}

    # -- read models ---------------------------------------------------------

    def metric_rows(self, since: int = 0) -> list[dict]:
        rows = []
        best = float("inf")
        evaluations = list(self.state.evaluations)
        for i, record in enumerate(evaluations, start=1):
            best = min(best, record.metric)
            if i > since:
                rows.append({"iter": i, "values": dict(record.assignment),
                             "metric": record.metric, "best_so_far": best})
        return rows

    def report_json(self) -> dict:
        state = self.state
        if state.phase == "failed":
            return {
                "status": "failed",
                "failure": state.failure,
                "initial": state.initial_metric,
                "best": state.best[1] if state.best else None,
            }
        if state.phase != "done" or state.summary is None:
            raise NotFinished(f"session is in phase {state.phase!r}")
        s = state.summary
        md_path = self.paths.report_dir / "report.md"
        return {
            "status": "done",
            "initial": s.initial_metric,
            "best": s.best_metric,
            "improvement_pct": s.improvement_pct,
            "parameters": [dataclasses.asdict(p) for p in s.parameters],
            "quantities": [dataclasses.asdict(q) for q in s.quantities],
            "series": [_series_entry(q.key) for q in s.quantities],
            "recommendations": list(s.recommendations),
            "text": s.text,
            "report_md": md_path.read_text() if md_path.exists() else "",
        }


def _series_entry(key: str) -> dict:
    """Series descriptor pointing at its bundle CSV, e.g. WOPR:PROD ->
    series/PROD_WOPR.csv (the bundle writer uses well_quantity names)."""
    quantity, _, well = key.partition(":")
    return {"key": key, "quantity": quantity, "well": well,
            "file": f"series/{well}_{quantity}.csv"}


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc) \
        .strftime("%Y-%m-%dT%H:%M:%SZ")

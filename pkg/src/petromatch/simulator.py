"""Single-phase proxy flow simulator plus an external-simulator runner.

The proxy solves slightly compressible pressure diffusion on a regular
cell-centered grid: two-point flux transmissibilities with harmonic
averaging, Peaceman well indices, backward Euler in time, one sparse CG
solve per step. It reads the same deck subset the parser produces and
reports well rates and bottom-hole pressures on the schedule's report
steps, which is all the matching loop needs.

Deliberate simplifications, documented once here: single phase (relative
permeability tables do not enter), no gravity or capillarity, metric units
only, porosity and compressibility constant at reference conditions.

Internally SI throughout: mD -> m^2, bar -> Pa, day -> s, cP -> Pa s.
"""

from __future__ import annotations

import datetime as _dt
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from . import deck as deckmod
from .errors import (
    InvalidCase,
    SimulationError,
    LaunchFailure,
    MalformedResults,
    NonConvergedLinearSolve,
    NonZeroExit,
    RunTimeout,
    UnknownKeyword,
    UnknownSection,
)
from .misfit import DEFAULT_PENALTY_NRMSE, HistorySet, MisfitReport, load_history_csv, score

MD_TO_M2 = 9.869233e-16
BAR = 1e5
DAY = 86400.0
CP = 1e-3

DEFAULT_ROCK_COMPRESSIBILITY = 5.0e-5  # 1/bar
DEFAULT_FLUID_COMPRESSIBILITY = 4.0e-5  # 1/bar
DEFAULT_VISCOSITY = 1.0  # cP
DEFAULT_WELL_DIAMETER = 0.15  # m
DEFAULT_BHP_FLOOR = 1.01325  # bar
DEFAULT_BHP_CEILING = 700.0  # bar
KV_KH_DEFAULT = 0.1

_MONTHS = {
    "JAN": 1, "FEB": 2, "MAR": 3, "APR": 4, "MAY": 5, "JUN": 6,
    "JLY": 7, "JUL": 7, "AUG": 8, "SEP": 9, "OCT": 10, "NOV": 11, "DEC": 12,
}

_INERT_SCHEDULE = frozenset(
    {"RPTSCHED", "RPTRST", "SKIPREST", "TUNING", "NOECHO", "ECHO", "WELTARG"}
)


@dataclass(frozen=True)
class SimConfig:
    max_dt_days: float | None = None  # None: one solve per report step
    cg_rtol: float = 1e-10
    max_control_iters: int = 8
    keep_pressures: bool = False  # retain the per-report-step pressure field


@dataclass(frozen=True)
class WellControl:
    mode: str  # "rate" | "bhp"
    rate: float = 0.0  # m3/day, positive magnitude
    bhp: float = DEFAULT_BHP_FLOOR  # bar: floor for producers, ceiling/target for injectors
    open: bool = True


@dataclass(frozen=True)
class Connection:
    i: int
    j: int
    k: int
    rw: float  # wellbore radius, m


@dataclass(frozen=True)
class Well:
    name: str
    is_injector: bool
    connections: tuple[Connection, ...]


@dataclass(frozen=True)
class ScheduleStep:
    days: float
    controls: dict[str, WellControl]  # full snapshot at this step


@dataclass
class SimCase:
    nx: int
    ny: int
    nz: int
    dx: np.ndarray  # flattened natural order: i fastest, then j, then k
    dy: np.ndarray
    dz: np.ndarray
    poro: np.ndarray
    kx: np.ndarray  # mD
    ky: np.ndarray
    kz: np.ndarray
    p_init: np.ndarray  # bar
    ct: float  # 1/bar
    viscosity: float  # cP
    wells: tuple[Well, ...]
    schedule: tuple[ScheduleStep, ...]

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    def cell_index(self, i: int, j: int, k: int) -> int:
        return i + self.nx * (j + self.ny * k)


@dataclass(frozen=True)
class SimResult:
    times: np.ndarray  # days at report step ends
    series: dict[str, np.ndarray]
    mass_balance_error: float  # relative
    final_pressure: np.ndarray  # bar
    pressures: np.ndarray | None = None  # (n_steps, n_cells) bar, when kept


# ---------------------------------------------------------------------------
# Deck -> SimCase
# ---------------------------------------------------------------------------


def _item(items, idx, default=None):
    """Value of expanded record item idx, honoring default markers."""
    if idx >= len(items):
        return default
    tok = items[idx]
    if tok.kind == "default":
        return default
    return tok.value


def _array_from_keyword(deck, section, name, n, what) -> np.ndarray | None:
    try:
        kw = deckmod.get_keyword(deck, section, name)
    except (UnknownKeyword, UnknownSection):
        return None
    if not kw.records:
        raise InvalidCase(f"{name} has no data record")
    toks = deckmod.expand_record(kw.records[0])
    vals = []
    for tok in toks:
        if tok.kind == "default":
            raise InvalidCase(f"{name} contains defaulted entries; arrays must be explicit")
        if tok.kind != "number":
            raise InvalidCase(f"{name} contains non-numeric entry {tok.render()!r}")
        vals.append(float(tok.value))
    if len(vals) != n:
        raise InvalidCase(f"{name} has {len(vals)} values, grid needs {n}")
    return np.asarray(vals, dtype=float)


def _scalar_record(deck, section, name):
    try:
        kw = deckmod.get_keyword(deck, section, name)
    except (UnknownKeyword, UnknownSection):
        return None
    if not kw.records:
        return None
    return deckmod.expand_record(kw.records[0])


def case_from_deck(deck: deckmod.Deck) -> SimCase:
    sections = deckmod.list_sections(deck)
    for required in ("RUNSPEC", "GRID"):
        if required not in sections:
            raise InvalidCase(f"deck lacks a {required} section")

    if any(kw == "FIELD" for kw in deckmod.list_keywords(deck, "RUNSPEC")):
        raise InvalidCase("FIELD units are not supported by the proxy; use METRIC")

    dim_rec = _scalar_record(deck, "RUNSPEC", "DIMENS")
    if dim_rec is None or len(dim_rec) != 3:
        raise InvalidCase("RUNSPEC must specify DIMENS with nx ny nz")
    nx, ny, nz = (int(t.value) for t in dim_rec)
    if min(nx, ny, nz) < 1:
        raise InvalidCase(f"non-positive grid dimensions {nx}x{ny}x{nz}")
    n = nx * ny * nz

    arrays = {}
    for name in ("DX", "DY", "DZ", "PORO", "PERMX"):
        arr = _array_from_keyword(deck, "GRID", name, n, name)
        if arr is None:
            raise InvalidCase(f"GRID section lacks {name}")
        arrays[name] = arr
    ky = _array_from_keyword(deck, "GRID", "PERMY", n, "PERMY")
    kz = _array_from_keyword(deck, "GRID", "PERMZ", n, "PERMZ")
    kx = arrays["PERMX"]
    if ky is None:
        ky = kx.copy()
    if kz is None:
        kz = KV_KH_DEFAULT * kx

    for name in ("DX", "DY", "DZ"):
        if np.any(arrays[name] <= 0):
            raise InvalidCase(f"{name} must be positive everywhere")
    if np.any(arrays["PORO"] <= 0) or np.any(arrays["PORO"] >= 1):
        raise InvalidCase("PORO must lie in (0, 1)")
    if np.any(kx <= 0) or np.any(ky <= 0) or np.any(kz <= 0):
        raise InvalidCase("permeabilities must be positive")

    rock = _scalar_record(deck, "PROPS", "ROCK") if "PROPS" in sections else None
    rock_c = DEFAULT_ROCK_COMPRESSIBILITY
    if rock is not None:
        rock_c = float(_item(rock, 1, DEFAULT_ROCK_COMPRESSIBILITY))
    pvtw = _scalar_record(deck, "PROPS", "PVTW") if "PROPS" in sections else None
    fluid_c = DEFAULT_FLUID_COMPRESSIBILITY
    mu = DEFAULT_VISCOSITY
    if pvtw is not None:
        fluid_c = float(_item(pvtw, 2, DEFAULT_FLUID_COMPRESSIBILITY))
        mu = float(_item(pvtw, 3, DEFAULT_VISCOSITY))
    ct = rock_c + fluid_c
    if ct <= 0 or mu <= 0:
        raise InvalidCase(f"total compressibility {ct:g} and viscosity {mu:g} must be positive")

    p_init = None
    if "SOLUTION" in sections:
        p_init = _array_from_keyword(deck, "SOLUTION", "PRESSURE", n, "PRESSURE")
        if p_init is None:
            eq = _scalar_record(deck, "SOLUTION", "EQUIL")
            if eq is not None:
                datum_p = _item(eq, 1)
                if datum_p is None:
                    raise InvalidCase("EQUIL lacks a datum pressure")
                p_init = np.full(n, float(datum_p))
    if p_init is None:
        raise InvalidCase("deck must set initial pressure via SOLUTION PRESSURE or EQUIL")

    wells, schedule = _read_schedule(deck, nx, ny, nz)

    case = SimCase(
        nx=nx, ny=ny, nz=nz,
        dx=arrays["DX"], dy=arrays["DY"], dz=arrays["DZ"],
        poro=arrays["PORO"], kx=kx, ky=ky, kz=kz,
        p_init=p_init, ct=ct, viscosity=mu,
        wells=tuple(wells), schedule=tuple(schedule),
    )
    _check_controls(case)
    return case


def _check_controls(case: SimCase) -> None:
    by_name = {w.name: w for w in case.wells}
    for step in case.schedule:
        for name, ctl in step.controls.items():
            well = by_name.get(name)
            if well is None or not ctl.open:
                continue
            if ctl.mode == "rate" and ctl.rate < 0:
                raise InvalidCase(f"negative rate target {ctl.rate:g} for {name!r}")
            if not well.is_injector and well.connections:
                cells = [case.cell_index(c.i, c.j, c.k) for c in well.connections]
                p_ref = float(np.mean(case.p_init[cells]))
                if ctl.bhp >= p_ref:
                    raise InvalidCase(
                        f"producer {name!r} BHP {ctl.bhp:g} bar is not below "
                        f"its initial block pressure {p_ref:g} bar"
                    )


def _parse_date(items, what):
    day = _item(items, 0)
    mon = _item(items, 1)
    year = _item(items, 2)
    if day is None or mon is None or year is None:
        raise InvalidCase(f"{what} needs day, month and year")
    mon = str(mon).upper().strip("'")
    if mon not in _MONTHS:
        raise InvalidCase(f"unknown month {mon!r} in {what}")
    return _dt.date(int(year), _MONTHS[mon], int(day))


def _read_schedule(deck, nx, ny, nz):
    heads: dict[str, tuple[int, int]] = {}
    conns: dict[str, list[Connection]] = {}
    injector: dict[str, bool] = {}
    controls: dict[str, WellControl] = {}
    steps: list[ScheduleStep] = []

    start_date = None
    rec = _scalar_record(deck, "RUNSPEC", "START")
    if rec is not None:
        start_date = _parse_date(rec, "START")
    current_date = start_date

    if "SCHEDULE" not in deckmod.list_sections(deck):
        return [], []

    def emit(days):
        if days <= 0:
            raise InvalidCase(f"non-positive schedule step of {days:g} days")
        steps.append(ScheduleStep(days, dict(controls)))

    sched = [sec for sec in deck.sections if sec.name == "SCHEDULE"]
    for sec in sched:
        for kw in sec.keywords:
            if kw.name == "WELSPECS":
                for r in kw.records:
                    items = deckmod.expand_record(r)
                    if not items:
                        continue
                    name = str(_item(items, 0))
                    heads[name] = (int(_item(items, 2)), int(_item(items, 3)))
                    # roles come from the control keywords, not the phase here
            elif kw.name == "COMPDAT":
                for r in kw.records:
                    items = deckmod.expand_record(r)
                    if not items:
                        continue
                    name = str(_item(items, 0))
                    if name not in heads:
                        raise InvalidCase(f"COMPDAT for unknown well {name!r}")
                    hi, hj = heads[name]
                    i = int(_item(items, 1, hi))
                    j = int(_item(items, 2, hj))
                    k1 = int(_item(items, 3, 1))
                    k2 = int(_item(items, 4, k1))
                    diam = float(_item(items, 8, DEFAULT_WELL_DIAMETER))
                    if not (1 <= i <= nx and 1 <= j <= ny and 1 <= k1 <= k2 <= nz):
                        raise InvalidCase(
                            f"COMPDAT for {name!r} outside grid: "
                            f"({i},{j},{k1}..{k2}) in {nx}x{ny}x{nz}"
                        )
                    for k in range(k1, k2 + 1):
                        conns.setdefault(name, []).append(
                            Connection(i - 1, j - 1, k - 1, diam / 2.0)
                        )
            elif kw.name in ("WCONPROD", "WCONHIST"):
                for r in kw.records:
                    items = deckmod.expand_record(r)
                    if not items:
                        continue
                    name = str(_item(items, 0))
                    status = str(_item(items, 1, "OPEN")).upper()
                    mode = str(_item(items, 2, "BHP")).upper()
                    injector[name] = False
                    if kw.name == "WCONPROD":
                        rate_idx = {"ORAT": 3, "WRAT": 4, "LRAT": 6}.get(mode)
                        bhp = float(_item(items, 8, DEFAULT_BHP_FLOOR))
                    else:
                        rate_idx = {"ORAT": 3, "WRAT": 4, "LRAT": 3}.get(mode)
                        bhp = DEFAULT_BHP_FLOOR
                    if mode == "BHP":
                        controls[name] = WellControl("bhp", 0.0, bhp, status == "OPEN")
                    elif rate_idx is not None:
                        rate = float(_item(items, rate_idx, 0.0))
                        controls[name] = WellControl("rate", rate, bhp, status == "OPEN")
                    else:
                        raise InvalidCase(
                            f"unsupported producer control {mode!r} for {name!r}"
                        )
            elif kw.name == "WCONINJE":
                for r in kw.records:
                    items = deckmod.expand_record(r)
                    if not items:
                        continue
                    name = str(_item(items, 0))
                    status = str(_item(items, 2, "OPEN")).upper()
                    mode = str(_item(items, 3, "BHP")).upper()
                    injector[name] = True
                    bhp = float(_item(items, 6, DEFAULT_BHP_CEILING))
                    if mode == "RATE":
                        rate = float(_item(items, 4, 0.0))
                        controls[name] = WellControl("rate", rate, bhp, status == "OPEN")
                    elif mode == "BHP":
                        controls[name] = WellControl("bhp", 0.0, bhp, status == "OPEN")
                    else:
                        raise InvalidCase(
                            f"unsupported injector control {mode!r} for {name!r}"
                        )
            elif kw.name == "TSTEP":
                for r in kw.records:
                    for tok in deckmod.expand_record(r):
                        emit(float(tok.value))
            elif kw.name == "DATES":
                for r in kw.records:
                    items = deckmod.expand_record(r)
                    if not items:
                        continue
                    date = _parse_date(items, "DATES")
                    if current_date is None:
                        raise InvalidCase("DATES needs a START date in RUNSPEC")
                    days = (date - current_date).days
                    emit(float(days))
                    current_date = date
            elif kw.name in _INERT_SCHEDULE:
                continue
            else:
                raise InvalidCase(f"unsupported SCHEDULE keyword {kw.name}")

    wells = []
    for name, cc in conns.items():
        wells.append(Well(name, injector.get(name, False), tuple(cc)))
    # keep deck order for wells without connections dropped silently
    return wells, steps


# ---------------------------------------------------------------------------
# Physics
# ---------------------------------------------------------------------------


def _transmissibilities(case: SimCase):
    """Face transmissibilities (SI, without mobility) along each axis as
    (row, col, value) triplets of the connectivity graph."""
    nx, ny, nz = case.nx, case.ny, case.nz
    shape = (nz, ny, nx)
    dx = case.dx.reshape(shape)
    dy = case.dy.reshape(shape)
    dz = case.dz.reshape(shape)
    kx = case.kx.reshape(shape) * MD_TO_M2
    ky = case.ky.reshape(shape) * MD_TO_M2
    kz = case.kz.reshape(shape) * MD_TO_M2
    idx = np.arange(case.n_cells).reshape(shape)

    rows, cols, vals = [], [], []

    def add(axis, k_arr, d_arr, area):
        # half transmissibility: k A / (d/2); harmonic of the two halves
        a = 2.0 * k_arr * area / d_arr
        if axis == 2:  # x neighbors
            left, right = a[:, :, :-1], a[:, :, 1:]
            ia, ib = idx[:, :, :-1], idx[:, :, 1:]
        elif axis == 1:  # y
            left, right = a[:, :-1, :], a[:, 1:, :]
            ia, ib = idx[:, :-1, :], idx[:, 1:, :]
        else:  # z
            left, right = a[:-1, :, :], a[1:, :, :]
            ia, ib = idx[:-1, :, :], idx[1:, :, :]
        t = left * right / (left + right)
        rows.append(ia.ravel())
        cols.append(ib.ravel())
        vals.append(t.ravel())

    if nx > 1:
        add(2, kx, dx, dy * dz)
    if ny > 1:
        add(1, ky, dy, dx * dz)
    if nz > 1:
        add(0, kz, dz, dx * dy)

    if not rows:
        return np.array([], int), np.array([], int), np.array([])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def peaceman_wi(case: SimCase, conn: Connection) -> float:
    """Peaceman well index (SI volume units) for a vertical connection."""
    c = case.cell_index(conn.i, conn.j, conn.k)
    dx, dy, dz = case.dx[c], case.dy[c], case.dz[c]
    kx = case.kx[c] * MD_TO_M2
    ky = case.ky[c] * MD_TO_M2
    k = math.sqrt(kx * ky)
    r_eq = 0.14 * math.sqrt(dx * dx + dy * dy)
    if conn.rw <= 0 or r_eq <= conn.rw:
        raise InvalidCase(
            f"well radius {conn.rw:g} m incompatible with block size "
            f"(r_eq {r_eq:g} m)"
        )
    return 2.0 * math.pi * k * dz / math.log(r_eq / conn.rw)


def simulate(case: SimCase, config: SimConfig = SimConfig()) -> SimResult:
    n = case.n_cells
    lam = 1.0 / (case.viscosity * CP)
    vp_ct = case.dx * case.dy * case.dz * case.poro * (case.ct / BAR)  # m3/Pa

    rows, cols, tvals = _transmissibilities(case)
    tvals = tvals * lam
    if rows.size:
        lap = sparse.coo_matrix(
            (
                np.concatenate([tvals, tvals, -tvals, -tvals]),
                (
                    np.concatenate([rows, cols, rows, cols]),
                    np.concatenate([rows, cols, cols, rows]),
                ),
            ),
            shape=(n, n),
        ).tocsr()
    else:
        lap = sparse.csr_matrix((n, n))

    wi = {
        w.name: np.array([peaceman_wi(case, c) * lam for c in w.connections])
        for w in case.wells
    }
    cells = {
        w.name: np.array([case.cell_index(c.i, c.j, c.k) for c in w.connections])
        for w in case.wells
    }

    p = case.p_init * BAR
    t_days = 0.0
    times: list[float] = []
    pressure_log: list[np.ndarray] | None = [] if config.keep_pressures else None
    rate_series: dict[str, list[float]] = {w.name: [] for w in case.wells}
    bhp_series: dict[str, list[float]] = {w.name: [] for w in case.wells}

    net_in_total = 0.0  # m3 injected minus produced
    storage_ref = float(np.sum(vp_ct * p))

    for step in case.schedule:
        dt_total = step.days * DAY
        if config.max_dt_days is not None:
            n_sub = max(1, int(math.ceil(step.days / config.max_dt_days)))
        else:
            n_sub = 1
        dt = dt_total / n_sub

        step_q = {w.name: 0.0 for w in case.wells}  # m3 produced (+) over step
        step_bhp = {w.name: math.nan for w in case.wells}

        for _ in range(n_sub):
            p_new, q_well, bhp_well = _solve_substep(
                case, config, lap, vp_ct, wi, cells, step.controls, p, dt
            )
            for name, q in q_well.items():
                step_q[name] += q * dt  # m3
                step_bhp[name] = bhp_well[name]
                net_in_total -= q * dt
            p = p_new

        t_days += step.days
        times.append(t_days)
        if pressure_log is not None:
            pressure_log.append(p / BAR)
        for w in case.wells:
            rate = step_q[w.name] / dt_total * DAY  # m3/day, production positive
            if w.is_injector:
                rate_series[w.name].append(max(0.0, -rate))
            else:
                rate_series[w.name].append(max(0.0, rate))
            bhp_series[w.name].append(step_bhp[w.name] / BAR)

    storage_change = float(np.sum(vp_ct * p)) - storage_ref
    denom = max(abs(net_in_total), abs(storage_change), 1e-30)
    mb_err = abs(storage_change - net_in_total) / denom if case.schedule else 0.0

    series: dict[str, np.ndarray] = {}
    for w in case.wells:
        qty = "WWIR" if w.is_injector else "WOPR"
        series[f"{qty}:{w.name}"] = np.asarray(rate_series[w.name])
        series[f"WBHP:{w.name}"] = np.asarray(bhp_series[w.name])

    return SimResult(
        times=np.asarray(times),
        series=series,
        mass_balance_error=mb_err,
        final_pressure=p / BAR,
        pressures=np.asarray(pressure_log) if pressure_log is not None else None,
    )


def _solve_substep(case, config, lap, vp_ct, wi, cells, controls, p_old, dt):
    """One backward Euler step with rate/bhp control switching.

    Returns (pressure, production m3/s per well, bhp Pa per well).
    """
    n = p_old.size
    acc = vp_ct / dt

    modes: dict[str, WellControl] = {}
    for w in case.wells:
        ctl = controls.get(w.name)
        if ctl is None or not ctl.open:
            modes[w.name] = WellControl("off", 0.0, 0.0, False)
        else:
            modes[w.name] = ctl

    for _ in range(config.max_control_iters):
        diag_extra = np.zeros(n)
        rhs = acc * p_old
        for w in case.wells:
            ctl = modes[w.name]
            if not ctl.open:
                continue
            wiv, cc = wi[w.name], cells[w.name]
            if ctl.mode == "bhp":
                diag_extra[cc] += wiv
                rhs[cc] += wiv * ctl.bhp * BAR
            else:  # rate
                q = ctl.rate / DAY  # m3/s magnitude
                alloc = wiv / np.sum(wiv)
                sign = 1.0 if w.is_injector else -1.0
                rhs[cc] += sign * q * alloc

        A = lap + sparse.diags(acc + diag_extra)
        M = sparse.diags(1.0 / A.diagonal())
        p_new, info = cg(A, rhs, x0=p_old, rtol=config.cg_rtol, atol=0.0, M=M)
        if info != 0:
            raise NonConvergedLinearSolve(f"CG failed with status {info}")

        switched = False
        for w in case.wells:
            ctl = modes[w.name]
            if not ctl.open or ctl.mode != "rate":
                continue
            wiv, cc = wi[w.name], cells[w.name]
            wip = float(np.sum(wiv * p_new[cc]))
            wsum = float(np.sum(wiv))
            q = ctl.rate / DAY
            if w.is_injector:
                bhp_implied = (wip + q) / wsum
                if bhp_implied > ctl.bhp * BAR:
                    modes[w.name] = WellControl("bhp", ctl.rate, ctl.bhp, True)
                    switched = True
            else:
                bhp_implied = (wip - q) / wsum
                if bhp_implied < ctl.bhp * BAR:
                    modes[w.name] = WellControl("bhp", ctl.rate, ctl.bhp, True)
                    switched = True
        if not switched:
            break

    q_well: dict[str, float] = {}
    bhp_well: dict[str, float] = {}
    for w in case.wells:
        ctl = modes[w.name]
        if not ctl.open:
            q_well[w.name] = 0.0
            bhp_well[w.name] = float(np.mean(p_new[cells[w.name]]))
            continue
        wiv, cc = wi[w.name], cells[w.name]
        if ctl.mode == "bhp":
            q = float(np.sum(wiv * (p_new[cc] - ctl.bhp * BAR)))  # production +
            q_well[w.name] = q
            bhp_well[w.name] = ctl.bhp * BAR
        else:
            q = ctl.rate / DAY
            sign = 1.0 if w.is_injector else -1.0
            q_well[w.name] = -sign * q
            wip = float(np.sum(wiv * p_new[cc]))
            wsum = float(np.sum(wiv))
            bhp_well[w.name] = (wip + q) / wsum if w.is_injector else (wip - q) / wsum

    return p_new, q_well, bhp_well


# ---------------------------------------------------------------------------
# Convenience entry points
# ---------------------------------------------------------------------------


def run_proxy(deck_or_text, config: SimConfig = SimConfig()) -> SimResult:
    d = deck_or_text
    if isinstance(d, str):
        d = deckmod.parse_deck(d)
    return simulate(case_from_deck(d), config)


def make_pseudo_history(
    deck_or_text, noise_rel: float = 0.0, seed: int = 0,
    config: SimConfig = SimConfig(),
) -> HistorySet:
    """Simulate a truth deck and package the well responses as observations,
    optionally with multiplicative Gaussian noise."""
    result = run_proxy(deck_or_text, config)
    series = {}
    rng = np.random.default_rng(seed)
    for key, vals in result.series.items():
        out = np.asarray(vals, dtype=float).copy()
        if noise_rel > 0.0:
            out = out * (1.0 + noise_rel * rng.standard_normal(out.size))
        series[key] = out
    return HistorySet(result.times.copy(), series)


# ---------------------------------------------------------------------------
# External simulator runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunnerConfig:
    """How to invoke an external simulator.

    `command` is an argv template; every argument may reference `{deck}`
    (path of the written deck file) and `{outdir}`. The results CSV is
    expected at `<outdir>/<results_name>` afterwards.
    """

    command: tuple[str, ...]
    timeout_s: float = 3600.0
    results_name: str = "results.csv"
    deck_name: str = "case.data"

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))
        joined = " ".join(self.command)
        if "{deck}" not in joined or "{outdir}" not in joined:
            raise ValueError(
                "runner command template must reference both {deck} and {outdir}"
            )


def run_external(runner: RunnerConfig, deck_text: str, outdir=None) -> SimResult:
    """Run an external simulator per the runner template and read back the
    results CSV (time_days column plus one column per series)."""
    owned = None
    if outdir is None:
        owned = tempfile.TemporaryDirectory(prefix="petromatch-run-")
        outdir = owned.name
    try:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        deck_path = outdir / runner.deck_name
        deck_path.write_text(deck_text)
        argv = [
            arg.format(deck=str(deck_path), outdir=str(outdir))
            for arg in runner.command
        ]

        try:
            proc = subprocess.run(
                argv,
                cwd=outdir,
                capture_output=True,
                text=True,
                timeout=runner.timeout_s,
            )
        except FileNotFoundError as exc:
            raise LaunchFailure(f"cannot launch simulator: {exc}") from None
        except subprocess.TimeoutExpired:
            raise RunTimeout(f"simulator exceeded {runner.timeout_s:g}s") from None

        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-20:]
            raise NonZeroExit(
                f"simulator exited with status {proc.returncode}",
                output_tail="\n".join(tail),
            )

        results_path = outdir / runner.results_name
        if not results_path.is_file():
            raise MalformedResults(f"simulator produced no {runner.results_name}")
        try:
            hist = load_history_csv(results_path.read_text())
        except Exception as exc:
            raise MalformedResults(
                f"cannot parse {runner.results_name}: {exc}"
            ) from None
    finally:
        if owned is not None:
            owned.cleanup()

    return SimResult(
        times=hist.times,
        series=hist.series,
        mass_balance_error=math.nan,
        final_pressure=np.array([]),
    )


# ---------------------------------------------------------------------------
# Objective evaluation
# ---------------------------------------------------------------------------


def proxy_backend(config: SimConfig = SimConfig()):
    """Backend closure over the built-in flow solver."""

    def run(deck_text: str) -> SimResult:
        return run_proxy(deck_text, config)

    return run


def external_backend(runner: RunnerConfig, outdir_root=None):
    """Backend closure over an external simulator; each call gets its own
    run directory (fresh temporary one unless a root is given)."""
    counter = [0]

    def run(deck_text: str) -> SimResult:
        outdir = None
        if outdir_root is not None:
            counter[0] += 1
            outdir = Path(outdir_root) / f"run{counter[0]:04d}"
        return run_external(runner, deck_text, outdir)

    return run


def evaluate_text(
    deck_text: str,
    backend,
    obs: HistorySet,
    penalty_nrmse: float = DEFAULT_PENALTY_NRMSE,
):
    """Simulate one concrete deck and score it against observations.

    Simulation failures never escape: they yield the penalty-valued report
    (every weighted series charged penalty_nrmse) with the cause noted in
    the skipped list, so the matching loop can keep going.
    """
    try:
        result = backend(deck_text)
    except SimulationError as exc:
        report = score(obs, obs.times, {}, penalty_nrmse=penalty_nrmse)
        noted = ((("*", f"simulation failed: {exc}"),) + report.skipped)
        return MisfitReport(report.total, report.per_series, noted), {}
    report = score(obs, result.times, result.series, penalty_nrmse=penalty_nrmse)
    return report, dict(result.series)


def evaluate(
    space,
    assignment,
    backend,
    obs: HistorySet,
    penalty_nrmse: float = DEFAULT_PENALTY_NRMSE,
):
    """Substitute an assignment, simulate, and score against observations."""
    from . import paramspace

    deck_text = paramspace.substitute(space, assignment).serialize()
    return evaluate_text(deck_text, backend, obs, penalty_nrmse=penalty_nrmse)

"""Weighted NRMSE mismatch between observed and simulated well series.

Series are keyed "QUANTITY:WELL" (summary-vector style, e.g. "WOPR:PROD";
field quantities may omit the well part). Each scored series contributes

    wNRMSE = weight * RMSE(sim, hist) / |mean(hist)|

and the objective is the sum over series with nonzero history. Rate series
are weighted by their fractional share of the cumulative volume of their
quantity family; bottom-hole pressures share a total weight of one, split
evenly across wells with nonzero pressure history.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import EmptySeries, LengthMismatch, MisfitError, ZeroMeanHistory

PRESSURE_QUANTITIES = frozenset({"WBHP"})

#: |mean(hist)| below this is degenerate for normalization purposes
MEAN_FLOOR = 1e-9

#: NRMSE charged to a history series the simulation failed to produce
DEFAULT_PENALTY_NRMSE = 10.0


def quantity_of(key: str) -> str:
    return key.split(":", 1)[0]


def well_of(key: str) -> str | None:
    if ":" in key:
        return key.split(":", 1)[1]
    return None


@dataclass(frozen=True)
class HistorySet:
    """Observed series on a shared, strictly increasing time grid (days)."""

    times: np.ndarray
    series: dict[str, np.ndarray]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0:
            raise EmptySeries("history has no time points")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise MisfitError("history times must be strictly increasing")
        object.__setattr__(self, "times", t)
        fixed = {}
        for key, vals in self.series.items():
            v = np.asarray(vals, dtype=float)
            if v.shape != t.shape:
                raise LengthMismatch(
                    f"series {key} has {v.size} points, expected {t.size}"
                )
            fixed[key] = v
        object.__setattr__(self, "series", fixed)


@dataclass(frozen=True)
class SeriesScore:
    nrmse: float
    weight: float
    wnrmse: float
    n_points: int


@dataclass(frozen=True)
class MisfitReport:
    total: float
    per_series: dict[str, SeriesScore]
    skipped: tuple[tuple[str, str], ...]

    def summary_rows(self) -> list[tuple[str, float, float, float]]:
        rows = [(k, s.weight, s.nrmse, s.wnrmse) for k, s in self.per_series.items()]
        rows.sort(key=lambda r: -r[3])
        return rows


def cumulative(times, values) -> float:
    """Cumulative volume of a rate series by trapezoidal integration.

    Missing values (NaN) are dropped before integrating; fewer than two
    observed points integrate to zero.
    """
    t = np.asarray(times, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if t.size == 0:
        raise EmptySeries("cannot integrate an empty series")
    ok = ~np.isnan(v)
    t, v = t[ok], v[ok]
    if t.size < 2:
        return 0.0
    return float(np.trapezoid(v, t))


def nrmse(hist, sim) -> float:
    h = np.asarray(hist, dtype=float)
    s = np.asarray(sim, dtype=float)
    if h.size == 0:
        raise EmptySeries("history series is empty")
    if h.shape != s.shape:
        raise LengthMismatch(f"history has {h.size} points, simulation has {s.size}")
    ok = ~np.isnan(h)
    if not ok.any():
        raise EmptySeries("history series has no observed values")
    h, s = h[ok], s[ok]
    mean = abs(float(np.mean(h)))
    if mean < MEAN_FLOOR:
        raise ZeroMeanHistory(f"history mean {mean:g} is below {MEAN_FLOOR:g}")
    rmse = float(np.sqrt(np.mean((s - h) ** 2)))
    return rmse / mean


def compute_weights(history: HistorySet) -> dict[str, float]:
    """Per-series weights from the history alone.

    Rate series: fractional share of the quantity family's total cumulative
    volume. Pressure series: 1/N over wells with nonzero pressure history.
    Series with identically zero history get weight 0.
    """
    weights: dict[str, float] = {}
    families: dict[str, list[tuple[str, float]]] = {}
    pressure_keys: list[str] = []

    for key, vals in history.series.items():
        qty = quantity_of(key)
        if qty in PRESSURE_QUANTITIES:
            observed = vals[~np.isnan(vals)]
            if np.any(observed != 0.0):
                pressure_keys.append(key)
            else:
                weights[key] = 0.0
        else:
            families.setdefault(qty, []).append((key, cumulative(history.times, vals)))

    for qty, members in families.items():
        total = sum(c for _, c in members)
        for key, cum in members:
            if cum == 0.0 or total == 0.0:
                weights[key] = 0.0
            else:
                weights[key] = cum / total

    for key in pressure_keys:
        weights[key] = 1.0 / len(pressure_keys)

    return weights


def score(
    history: HistorySet,
    sim_times,
    sim_series: dict,
    weights: dict[str, float] | None = None,
    penalty_nrmse: float = DEFAULT_PENALTY_NRMSE,
) -> MisfitReport:
    """Score a simulation against history.

    Simulated series on a different time grid are linearly interpolated onto
    the history grid. Series the simulation did not produce are charged
    `penalty_nrmse`. The report total is the sum of wnrmse over per_series.
    """
    if weights is None:
        weights = compute_weights(history)

    st = np.asarray(sim_times, dtype=float)
    per_series: dict[str, SeriesScore] = {}
    skipped: list[tuple[str, str]] = []

    for key in history.series:
        hist = history.series[key]
        w = weights.get(key, 0.0)

        if w == 0.0:
            skipped.append((key, "zero history"))
            continue

        observed = hist[~np.isnan(hist)]
        mean = abs(float(np.mean(observed))) if observed.size else 0.0
        if mean < MEAN_FLOOR:
            skipped.append((key, "degenerate history mean"))
            continue

        if key not in sim_series:
            per_series[key] = SeriesScore(penalty_nrmse, w, w * penalty_nrmse, hist.size)
            skipped.append((key, "missing simulation output"))
            continue

        sim = np.asarray(sim_series[key], dtype=float)
        if st.shape != history.times.shape or not np.allclose(st, history.times):
            if sim.shape != st.shape:
                raise LengthMismatch(
                    f"simulated series {key} has {sim.size} points on a grid of {st.size}"
                )
            sim = np.interp(history.times, st, sim)
        elif sim.shape != hist.shape:
            raise LengthMismatch(
                f"simulated series {key} has {sim.size} points, expected {hist.size}"
            )

        e = nrmse(hist, sim)
        per_series[key] = SeriesScore(e, w, w * e, hist.size)

    total = float(sum(s.wnrmse for s in per_series.values()))
    return MisfitReport(total, per_series, tuple(skipped))


def improvement_percent(initial: float, best: float) -> int:
    """Relative reduction in percent, rounded half-up to an integer."""
    from decimal import ROUND_HALF_UP, Decimal

    if initial <= 0:
        raise MisfitError(f"initial misfit must be positive, got {initial:g}")
    frac = (initial - best) / initial
    return int(Decimal(frac * 100).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


# --- history CSV I/O -------------------------------------------------------


def load_history_csv(text: str) -> HistorySet:
    """Read history from CSV text: a time_days column plus one column per
    series key ("WOPR:PROD", ...). Empty cells are missing values (NaN)."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise EmptySeries("history CSV needs a header and at least one row")
    header = [c.strip() for c in rows[0]]
    if header[0].upper() not in ("TIME", "DAYS", "TIME_DAYS"):
        raise MisfitError(
            f"first history column must be time_days, got {header[0]!r}"
        )

    def cell(c: str) -> float:
        c = c.strip()
        return float(c) if c else float("nan")

    data = np.array([[cell(c) for c in row] for row in rows[1:]], dtype=float)
    times = data[:, 0]
    if np.any(np.isnan(times)):
        raise MisfitError("time_days column must not have empty cells")
    series = {header[j]: data[:, j] for j in range(1, len(header))}
    return HistorySet(times, series)


def dump_history_csv(history: HistorySet) -> str:
    keys = list(history.series)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["time_days"] + keys)

    def cell(x: float) -> str:
        return "" if np.isnan(x) else f"{x:.10g}"

    for i, t in enumerate(history.times):
        writer.writerow([f"{t:.10g}"] + [cell(history.series[k][i]) for k in keys])
    return out.getvalue()

"""Independent reference implementations used to check the package.

Pure Python arithmetic only (math module, no numpy), written directly from
the objective's definition so the production code is checked against a
second, separately derived computation.
"""

import math


def ref_rmse(hist, sim):
    n = len(hist)
    return math.sqrt(sum((s - h) ** 2 for h, s in zip(hist, sim)) / n)


def ref_wnrmse(hist, sim, weight):
    mean = abs(sum(hist) / len(hist))
    return weight * ref_rmse(hist, sim) / mean


def ref_cumulative(times, values):
    total = 0.0
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        total += dt * (abs(values[i]) + abs(values[i + 1])) / 2.0
    return total


def ref_weights(times, series):
    """series: dict key -> list of values. Mirrors the published weighting
    rules: rate families share by cumulative volume, pressures split 1/N."""
    weights = {}
    families = {}
    pressure = []
    for key, vals in series.items():
        qty = key.split(":", 1)[0]
        if qty == "WBHP":
            if any(v != 0.0 for v in vals):
                pressure.append(key)
            else:
                weights[key] = 0.0
        else:
            families.setdefault(qty, []).append((key, ref_cumulative(times, vals)))
    for qty, members in families.items():
        total = sum(c for _, c in members)
        for key, cum in members:
            weights[key] = cum / total if (cum > 0.0 and total > 0.0) else 0.0
    for key in pressure:
        weights[key] = 1.0 / len(pressure)
    return weights


def ref_total(times, hist_series, sim_series, penalty=10.0):
    weights = ref_weights(times, hist_series)
    total = 0.0
    for key, hist in hist_series.items():
        w = weights[key]
        if w == 0.0:
            continue
        mean = abs(sum(hist) / len(hist))
        if mean < 1e-9:
            continue
        if key not in sim_series:
            total += w * penalty
            continue
        total += w * ref_rmse(hist, sim_series[key]) / mean
    return total

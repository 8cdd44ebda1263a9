import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petromatch import misfit as M
from petromatch.errors import EmptySeries, LengthMismatch, MisfitError, ZeroMeanHistory

from oracles import ref_total, ref_weights, ref_wnrmse


def hset(times, **series):
    return M.HistorySet(np.asarray(times, float), {k: np.asarray(v, float) for k, v in series.items()})


class TestNrmse:
    def test_known_value(self):
        # errors (2, -2, 3) around a mean of 20
        e = M.nrmse([10.0, 20.0, 30.0], [12.0, 18.0, 33.0])
        assert e == pytest.approx(math.sqrt(17.0 / 3.0) / 20.0, rel=1e-15)
        assert e == pytest.approx(0.11902, abs=5e-6)

    def test_simple_half_weight(self):
        h = hset([0.0, 1.0, 2.0], **{"WOPR:A": [1.0, 2.0, 3.0]})
        rep = M.score(h, h.times, {"WOPR:A": np.array([2.0, 3.0, 4.0])}, weights={"WOPR:A": 0.5})
        assert rep.total == pytest.approx(0.25, rel=1e-12)

    def test_perfect_match_is_zero(self):
        assert M.nrmse([5.0, 6.0], [5.0, 6.0]) == 0.0

    def test_zero_mean_raises(self):
        with pytest.raises(ZeroMeanHistory):
            M.nrmse([1.0, -1.0], [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            M.nrmse([1.0, 2.0], [1.0])

    def test_empty(self):
        with pytest.raises(EmptySeries):
            M.nrmse([], [])


class TestWeights:
    def test_rate_weights_are_cumulative_shares(self):
        # trapezoids: A -> 300, B -> 100
        h = hset([0.0, 10.0], **{"WOPR:A": [20.0, 40.0], "WOPR:B": [10.0, 10.0]})
        w = M.compute_weights(h)
        assert w["WOPR:A"] == pytest.approx(0.75, rel=1e-12)
        assert w["WOPR:B"] == pytest.approx(0.25, rel=1e-12)

    def test_families_weighted_independently(self):
        h = hset(
            [0.0, 10.0],
            **{
                "WOPR:A": [20.0, 40.0],
                "WOPR:B": [10.0, 10.0],
                "WWIR:I": [50.0, 50.0],
            },
        )
        w = M.compute_weights(h)
        assert w["WWIR:I"] == pytest.approx(1.0)
        assert w["WOPR:A"] + w["WOPR:B"] == pytest.approx(1.0)

    def test_bhp_split_evenly_over_nonzero_wells(self):
        h = hset(
            [0.0, 1.0],
            **{
                "WBHP:A": [200.0, 190.0],
                "WBHP:B": [180.0, 170.0],
                "WBHP:C": [0.0, 0.0],
            },
        )
        w = M.compute_weights(h)
        assert w["WBHP:A"] == pytest.approx(0.5)
        assert w["WBHP:B"] == pytest.approx(0.5)
        assert w["WBHP:C"] == 0.0

    def test_zero_history_rate_gets_zero_weight(self):
        h = hset([0.0, 1.0], **{"WOPR:A": [10.0, 10.0], "WOPR:B": [0.0, 0.0]})
        w = M.compute_weights(h)
        assert w["WOPR:B"] == 0.0
        assert w["WOPR:A"] == pytest.approx(1.0)

    def test_field_series_stand_alone(self):
        h = hset([0.0, 1.0], FOPR=[100.0, 90.0])
        assert M.compute_weights(h)["FOPR"] == pytest.approx(1.0)

    def test_matches_reference(self):
        times = [0.0, 5.0, 12.0, 30.0]
        series = {
            "WOPR:P1": [120.0, 110.0, 90.0, 60.0],
            "WOPR:P2": [80.0, 70.0, 65.0, 40.0],
            "WWIR:I1": [200.0, 200.0, 180.0, 150.0],
            "WBHP:P1": [250.0, 240.0, 230.0, 215.0],
            "WBHP:P2": [255.0, 245.0, 238.0, 228.0],
        }
        got = M.compute_weights(hset(times, **series))
        want = ref_weights(times, series)
        for key in series:
            assert got[key] == pytest.approx(want[key], rel=1e-12), key


class TestScore:
    def test_total_is_sum_of_series(self):
        h = hset(
            [0.0, 10.0, 20.0],
            **{"WOPR:A": [100.0, 90.0, 70.0], "WBHP:A": [250.0, 240.0, 235.0]},
        )
        sim = {"WOPR:A": np.array([95.0, 88.0, 75.0]), "WBHP:A": np.array([248.0, 243.0, 230.0])}
        rep = M.score(h, h.times, sim)
        assert rep.total == pytest.approx(sum(s.wnrmse for s in rep.per_series.values()), rel=1e-15)
        assert set(rep.per_series) == {"WOPR:A", "WBHP:A"}

    def test_missing_series_charged_penalty(self):
        h = hset([0.0, 10.0], **{"WOPR:A": [10.0, 20.0], "WOPR:B": [10.0, 20.0]})
        rep = M.score(h, h.times, {"WOPR:A": np.array([10.0, 20.0])})
        assert rep.per_series["WOPR:B"].nrmse == M.DEFAULT_PENALTY_NRMSE
        assert rep.per_series["WOPR:B"].wnrmse == pytest.approx(0.5 * 10.0)
        assert ("WOPR:B", "missing simulation output") in rep.skipped

    def test_zero_history_series_skipped(self):
        h = hset([0.0, 10.0], **{"WOPR:A": [10.0, 20.0], "WOPR:Z": [0.0, 0.0]})
        rep = M.score(h, h.times, {"WOPR:A": np.array([10.0, 20.0]), "WOPR:Z": np.array([1.0, 1.0])})
        assert "WOPR:Z" not in rep.per_series
        assert ("WOPR:Z", "zero history") in rep.skipped

    def test_interpolates_finer_sim_grid(self):
        h = hset([0.0, 10.0, 20.0], **{"WOPR:A": [0.0, 10.0, 20.0]})
        sim_t = np.linspace(0.0, 20.0, 41)
        rep = M.score(h, sim_t, {"WOPR:A": sim_t.copy()})
        assert rep.total == pytest.approx(0.0, abs=1e-14)

    def test_extra_sim_series_ignored(self):
        h = hset([0.0, 1.0], **{"WOPR:A": [10.0, 10.0]})
        rep = M.score(h, h.times, {"WOPR:A": np.array([10.0, 10.0]), "WOPR:X": np.array([1.0, 1.0])})
        assert set(rep.per_series) == {"WOPR:A"}

    def test_matches_reference_total(self):
        times = [0.0, 3.0, 9.0, 21.0, 30.0]
        hist = {
            "WOPR:P1": [150.0, 140.0, 120.0, 100.0, 95.0],
            "WOPR:P2": [90.0, 85.0, 80.0, 60.0, 55.0],
            "WBHP:P1": [260.0, 250.0, 245.0, 240.0, 236.0],
        }
        sim = {
            "WOPR:P1": [145.0, 142.0, 115.0, 104.0, 90.0],
            "WBHP:P1": [258.0, 252.0, 240.0, 244.0, 232.0],
        }
        rep = M.score(hset(times, **hist), np.asarray(times), {k: np.asarray(v) for k, v in sim.items()})
        assert rep.total == pytest.approx(ref_total(times, hist, sim), rel=1e-12)


class TestImprovement:
    @pytest.mark.parametrize(
        "initial,best,expected",
        [(0.7823, 0.0366, 95), (0.9510, 0.2901, 69), (2.3121, 2.0128, 13)],
    )
    def test_reported_examples(self, initial, best, expected):
        assert M.improvement_percent(initial, best) == expected

    def test_no_improvement(self):
        assert M.improvement_percent(1.0, 1.0) == 0

    def test_half_rounds_up(self):
        assert M.improvement_percent(1.0, 0.875) == 13  # 12.5 -> 13

    def test_requires_positive_initial(self):
        with pytest.raises(MisfitError):
            M.improvement_percent(0.0, 0.0)


class TestCsv:
    def test_round_trip(self):
        h = hset([0.0, 30.0, 60.0], **{"WOPR:PROD": [100.0, 92.5, 81.0], "WBHP:PROD": [250.0, 241.0, 239.0]})
        again = M.load_history_csv(M.dump_history_csv(h))
        assert np.allclose(again.times, h.times)
        assert set(again.series) == set(h.series)
        for k in h.series:
            assert np.allclose(again.series[k], h.series[k])

    def test_header_is_time_days(self):
        h = hset([0.0, 30.0], **{"WOPR:PROD": [100.0, 92.5]})
        assert M.dump_history_csv(h).splitlines()[0] == "time_days,WOPR:PROD"

    def test_empty_cells_are_missing_values(self):
        text = "time_days,WOPR:A,WBHP:A\n0,100,250\n30,,240\n60,81,\n"
        h = M.load_history_csv(text)
        assert np.isnan(h.series["WOPR:A"][1])
        assert np.isnan(h.series["WBHP:A"][2])
        # round-trips back to empty cells
        assert M.dump_history_csv(h).splitlines()[2] == "30,,240"
        # scoring uses only the observed points: WBHP differs at t=60 where
        # history is missing, so the series still scores clean
        rep = M.score(h, h.times, {"WOPR:A": [100.0, 55.0, 81.0], "WBHP:A": [250.0, 240.0, 9e9]})
        assert rep.per_series["WOPR:A"].nrmse == 0.0
        assert rep.per_series["WBHP:A"].nrmse == 0.0

    def test_rejects_empty_time_cell(self):
        with pytest.raises(MisfitError):
            M.load_history_csv("time_days,WOPR:A\n0,100\n,90\n")

    def test_rejects_missing_time_column(self):
        with pytest.raises(MisfitError):
            M.load_history_csv("WOPR:A,WOPR:B\n1,2\n")

    def test_rejects_empty(self):
        with pytest.raises(EmptySeries):
            M.load_history_csv("TIME,WOPR:A\n")


# --- randomized equivalence against the reference implementation ----------

_vals = st.lists(st.floats(1.0, 1e4), min_size=2, max_size=12)


@given(st.data())
@settings(max_examples=120, deadline=None)
def test_random_sets_match_reference(data):
    n = data.draw(st.integers(2, 10), label="n_points")
    times = np.cumsum(np.array(data.draw(
        st.lists(st.floats(0.5, 50.0), min_size=n, max_size=n), label="dts")))
    n_series = data.draw(st.integers(1, 5), label="n_series")
    hist, sim = {}, {}
    for i in range(n_series):
        qty = data.draw(st.sampled_from(["WOPR", "WWIR", "WBHP"]), label=f"qty{i}")
        key = f"{qty}:W{i}"
        hist[key] = np.array(data.draw(
            st.lists(st.floats(1.0, 1e4), min_size=n, max_size=n), label=f"hist{i}"))
        if data.draw(st.booleans(), label=f"present{i}"):
            sim[key] = np.array(data.draw(
                st.lists(st.floats(0.0, 1e4), min_size=n, max_size=n), label=f"sim{i}"))
    h = M.HistorySet(times, hist)
    rep = M.score(h, times, sim)
    want = ref_total(
        times.tolist(),
        {k: v.tolist() for k, v in hist.items()},
        {k: v.tolist() for k, v in sim.items()},
    )
    assert rep.total == pytest.approx(want, rel=1e-12, abs=1e-12)


@given(
    st.lists(st.floats(1.0, 1e4), min_size=2, max_size=16),
    st.lists(st.floats(0.0, 1e4), min_size=2, max_size=16),
    st.floats(0.01, 1.0),
)
@settings(max_examples=100, deadline=None)
def test_single_series_matches_reference(hist, sim, weight):
    n = min(len(hist), len(sim))
    hist, sim = hist[:n], sim[:n]
    got = weight * M.nrmse(hist, sim)
    assert got == pytest.approx(ref_wnrmse(hist, sim, weight), rel=1e-12)

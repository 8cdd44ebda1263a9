import math

import numpy as np
import pytest

from petromatch.errors import BudgetExhausted, UnknownPoint
from petromatch.optimizer import (
    OptimizerConfig,
    OptimizerSession,
    expected_improvement,
    hedge_probabilities,
    lhs_sample,
    lower_confidence_bound,
    minimize,
    norm_cdf,
    norm_pdf,
    probability_of_improvement,
    random_search,
)


def branin_unit(u):
    """Branin on [0,1]^2 (native domain [-5,10] x [0,15]); minimum 0.397887."""
    x1 = 15.0 * u[0] - 5.0
    x2 = 15.0 * u[1]
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    t = 1.0 / (8.0 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * math.cos(x1) + 10.0


def sphere(u):
    return float(np.sum((np.asarray(u) - np.array([0.6, 0.4])) ** 2))


class TestLhs:
    @pytest.mark.parametrize("n", [4, 16, 32])
    @pytest.mark.parametrize("dim", [2, 8])
    def test_one_point_per_stratum(self, n, dim):
        pts = lhs_sample(n, dim, np.random.default_rng(123))
        assert pts.shape == (n, dim)
        assert np.all(pts >= 0.0) and np.all(pts < 1.0)
        for j in range(dim):
            strata = np.floor(pts[:, j] * n).astype(int)
            assert sorted(strata) == list(range(n)), f"dim {j}"

    def test_seeded_repeatable(self):
        a = lhs_sample(16, 3, np.random.default_rng(7))
        b = lhs_sample(16, 3, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_rejects_degenerate_args(self):
        with pytest.raises(ValueError):
            lhs_sample(0, 2, np.random.default_rng(0))


class TestAcquisitions:
    def test_normal_helpers_reference_point(self):
        assert norm_cdf(1.0) + norm_pdf(1.0) == pytest.approx(1.08332, abs=1e-5)

    def test_ei_nonnegative_on_random_moments(self):
        rng = np.random.default_rng(5)
        mu = rng.normal(size=10_000)
        sigma = np.abs(rng.normal(size=10_000))
        sigma[::17] = 0.0
        ei = expected_improvement(mu, sigma, best=0.3, xi=0.01)
        assert np.all(ei >= 0.0)

    def test_ei_zero_without_hope(self):
        assert expected_improvement([5.0], [0.0], best=1.0)[0] == 0.0

    def test_ei_positive_with_certain_gain(self):
        assert expected_improvement([0.0], [0.0], best=1.0)[0] == pytest.approx(0.99)

    def test_pi_bounded(self):
        rng = np.random.default_rng(6)
        pi = probability_of_improvement(rng.normal(size=1000), np.abs(rng.normal(size=1000)), 0.0)
        assert np.all((pi >= 0.0) & (pi <= 1.0))

    def test_lcb_prefers_uncertainty(self):
        # same mean, larger sigma scores higher
        lo, hi = lower_confidence_bound([1.0, 1.0], [0.1, 1.0])
        assert hi > lo

    def test_hedge_probabilities(self):
        p = hedge_probabilities([0.0, 0.0, 0.0])
        assert np.allclose(p, 1.0 / 3.0)
        p = hedge_probabilities([5.0, 0.0, 0.0], eta=1.0)
        assert p[0] > p[1] == p[2]
        assert np.sum(p) == pytest.approx(1.0)


class TestSession:
    def test_initial_phase_is_the_seeded_hypercube(self):
        cfg = OptimizerConfig(dimension=2, n_initial=6, n_total=10, seed=42)
        session = OptimizerSession(cfg)
        expected = lhs_sample(6, 2, np.random.default_rng(42))
        got = [session.ask() for _ in range(6)]
        assert np.allclose(np.array(got), expected)

    def test_points_stay_in_cube(self):
        cfg = OptimizerConfig(dimension=3, n_initial=4, n_total=12, seed=1)
        session = OptimizerSession(cfg)
        for _ in range(12):
            x = session.ask()
            assert np.all(x >= 0.0) and np.all(x <= 1.0)
            session.tell(x, sphere(x[:2]))

    def test_budget_exhausted(self):
        cfg = OptimizerConfig(dimension=2, n_initial=2, n_total=3, seed=0)
        session = OptimizerSession(cfg)
        for _ in range(3):
            x = session.ask()
            session.tell(x, 1.0)
        with pytest.raises(BudgetExhausted):
            session.ask()

    def test_tell_unknown_point(self):
        session = OptimizerSession(OptimizerConfig(dimension=2, n_initial=2, n_total=4))
        session.ask()
        with pytest.raises(UnknownPoint):
            session.tell([0.123, 0.456], 1.0)

    def test_tell_twice_rejected(self):
        session = OptimizerSession(OptimizerConfig(dimension=2, n_initial=2, n_total=4))
        x = session.ask()
        session.tell(x, 1.0)
        with pytest.raises(UnknownPoint):
            session.tell(x, 1.0)

    def test_nan_becomes_penalty(self):
        cfg = OptimizerConfig(dimension=2, n_initial=2, n_total=4, nan_penalty=1e6)
        session = OptimizerSession(cfg)
        x = session.ask()
        session.tell(x, float("nan"))
        ev = session.evaluations[0]
        assert ev.value == 1e6
        assert math.isnan(ev.raw_value)

    def test_dedupe_replaces_known_point(self):
        session = OptimizerSession(OptimizerConfig(dimension=2, n_initial=2, n_total=4, seed=3))
        X = np.array([[0.5, 0.5]])
        moved = session._dedupe(np.array([0.5, 0.5]), X)
        assert np.max(np.abs(moved - [0.5, 0.5])) > 1e-9
        kept = session._dedupe(np.array([0.9, 0.1]), X)
        assert np.array_equal(kept, [0.9, 0.1])

    def test_acquisition_labels(self):
        cfg = OptimizerConfig(dimension=2, n_initial=3, n_total=8, seed=5)
        session = OptimizerSession(cfg)
        for _ in range(8):
            x = session.ask()
            session.tell(x, branin_unit(x))
        labels = [e.acquisition for e in session.evaluations]
        assert labels[:3] == ["lhs"] * 3
        assert all(l in ("EI", "PI", "LCB") for l in labels[3:])

    def test_fixed_acquisition_label(self):
        cfg = OptimizerConfig(dimension=2, n_initial=3, n_total=6, acquisition="EI", seed=5)
        session = OptimizerSession(cfg)
        for _ in range(6):
            x = session.ask()
            session.tell(x, sphere(x))
        assert [e.acquisition for e in session.evaluations[3:]] == ["EI"] * 3

    def test_hedge_gains_move(self):
        cfg = OptimizerConfig(dimension=2, n_initial=3, n_total=8, seed=9)
        session = OptimizerSession(cfg)
        for _ in range(8):
            x = session.ask()
            session.tell(x, sphere(x))
        assert any(g != 0.0 for g in session.gains.values())

    def test_deterministic_given_seed(self):
        def run():
            cfg = OptimizerConfig(dimension=2, n_initial=4, n_total=14, seed=21)
            s = OptimizerSession(cfg)
            for _ in range(14):
                x = s.ask()
                s.tell(x, branin_unit(x))
            return s.to_csv()

        assert run() == run()

    def test_replay_reproduces_asks(self):
        cfg = OptimizerConfig(dimension=2, n_initial=4, n_total=12, seed=33)
        first = OptimizerSession(cfg)
        trace = []
        for _ in range(12):
            x = first.ask()
            y = branin_unit(x)
            first.tell(x, y)
            trace.append((x, y))

        second = OptimizerSession(cfg)
        for x, y in trace:
            x2 = second.ask()
            assert np.allclose(x2, x, atol=1e-15)
            second.tell(x2, y)
        assert second.to_csv() == first.to_csv()

    def test_csv_shape(self):
        cfg = OptimizerConfig(dimension=3, n_initial=2, n_total=5, seed=2)
        session = OptimizerSession(cfg)
        for _ in range(5):
            x = session.ask()
            session.tell(x, sphere(x[:2]))
        lines = session.to_csv().strip().splitlines()
        assert lines[0] == "iter,x1,x2,x3,value,is_best_so_far,acquisition"
        assert len(lines) == 6
        assert lines[1].split(",")[-1] == "lhs"
        assert lines[1].split(",")[-2] == "1"  # first row is always a new best


class TestOptimization:
    def test_sphere_converges(self):
        x, val = minimize(sphere, OptimizerConfig(dimension=2, n_initial=6, n_total=25, seed=4))
        assert val < 0.02

    def test_bo_beats_random_on_branin(self):
        # acceptance runs 20 seeds; this is the quick smoke version
        seeds = range(5)
        bo = [minimize(branin_unit, OptimizerConfig(dimension=2, n_initial=8, n_total=40, seed=s))[1]
              for s in seeds]
        rs = [random_search(branin_unit, 2, 40, seed=s)[1] for s in seeds]
        assert np.median(bo) < np.median(rs)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(dimension=2, n_initial=10, n_total=5)
        with pytest.raises(ValueError):
            OptimizerConfig(dimension=2, acquisition="BOGUS")

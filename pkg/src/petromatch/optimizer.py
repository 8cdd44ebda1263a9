"""Sequential model-based minimization on the unit cube.

An OptimizerSession hands out points to evaluate (ask) and absorbs observed
objective values (tell). The first n_initial points come from a stratified
Latin hypercube; afterwards a GP surrogate drives one of three acquisition
functions, or a hedge portfolio of all three that shifts probability mass
toward whichever acquisition has been nominating the most promising points.

Everything downstream of the seed is deterministic: rebuilding a session
with the same seed and replaying the same tell values reproduces the same
asks, which is how crashed runs are resumed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted, DegenerateData, UnknownPoint
from .gp import GaussianProcess, GPConfig

ACQUISITIONS = ("EI", "PI", "LCB")

_SQRT2 = math.sqrt(2.0)


def norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def norm_cdf(z):
    return 0.5 * (1.0 + _erf(np.asarray(z, dtype=float) / _SQRT2))


_erf = np.vectorize(math.erf, otypes=[float])


def expected_improvement(mu, sigma, best, xi=0.01):
    """EI for minimization; nonnegative, zero where sigma is zero and the
    mean offers no improvement."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = best - mu - xi
    out = np.maximum(gap, 0.0)
    pos = sigma > 0.0
    if np.any(pos):
        z = gap[pos] / sigma[pos]
        out = np.array(out, dtype=float)
        out[pos] = gap[pos] * norm_cdf(z) + sigma[pos] * norm_pdf(z)
    return np.maximum(out, 0.0)


def probability_of_improvement(mu, sigma, best, xi=0.01):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gap = best - mu - xi
    out = (gap > 0.0).astype(float)
    pos = sigma > 0.0
    out[pos] = norm_cdf(gap[pos] / sigma[pos])
    return out


def lower_confidence_bound(mu, sigma, kappa=1.96):
    """Returns -(mu - kappa*sigma): a utility to maximize."""
    return -(np.asarray(mu, dtype=float) - kappa * np.asarray(sigma, dtype=float))


def acquisition_values(name, mu, sigma, best, xi=0.01, kappa=1.96):
    if name == "EI":
        return expected_improvement(mu, sigma, best, xi)
    if name == "PI":
        return probability_of_improvement(mu, sigma, best, xi)
    if name == "LCB":
        return lower_confidence_bound(mu, sigma, kappa)
    raise ValueError(f"unknown acquisition {name!r}")


def hedge_probabilities(gains, eta=1.0):
    g = np.asarray(gains, dtype=float)
    g = g - np.max(g)  # softmax shift
    p = np.exp(eta * g)
    return p / np.sum(p)


def lhs_sample(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified Latin hypercube on [0,1): per dimension, one point in each
    of the n equal strata, strata order shuffled independently."""
    if n < 1 or dim < 1:
        raise ValueError("lhs_sample needs n >= 1 and dim >= 1")
    out = np.empty((n, dim))
    for j in range(dim):
        perm = rng.permutation(n)
        out[:, j] = (perm + rng.uniform(size=n)) / n
    return out


@dataclass(frozen=True)
class OptimizerConfig:
    dimension: int = 1
    n_initial: int = 8
    n_total: int = 40
    acquisition: str = "GP_HEDGE"  # EI | PI | LCB | GP_HEDGE
    seed: int = 0
    kernel: str = "matern52"
    ei_xi: float = 0.01
    lcb_kappa: float = 1.96
    hedge_eta: float = 1.0
    candidate_pool: int = 1024
    refine_steps: int = 20
    duplicate_tol: float = 1e-9
    nan_penalty: float = 1e6

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.n_initial < 1 or self.n_total < self.n_initial:
            raise ValueError(
                f"need 1 <= n_initial <= n_total, got {self.n_initial}/{self.n_total}"
            )
        acq = self.acquisition.upper()
        if acq not in ACQUISITIONS and acq != "GP_HEDGE":
            raise ValueError(f"unknown acquisition {self.acquisition!r}")
        object.__setattr__(self, "acquisition", acq)


@dataclass
class Evaluation:
    index: int
    x: np.ndarray
    value: float
    acquisition: str  # "lhs", "EI", "PI", "LCB"
    raw_value: float  # pre-penalty value as told


class OptimizerSession:
    """Ask/tell minimization loop over [0,1]^dimension."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.dim = config.dimension
        self.rng = np.random.default_rng(config.seed)
        self._initial = lhs_sample(config.n_initial, self.dim, self.rng)
        self._asked = 0
        self._pending: list[tuple[np.ndarray, str, dict]] = []
        self.evaluations: list[Evaluation] = []
        self.gains = {name: 0.0 for name in ACQUISITIONS}
        self._gp = GaussianProcess(GPConfig(kernel=config.kernel))

    # -- public surface ------------------------------------------------------

    @property
    def n_told(self) -> int:
        return len(self.evaluations)

    def best(self) -> tuple[np.ndarray, float]:
        if not self.evaluations:
            raise DegenerateData("no evaluations told yet")
        ev = min(self.evaluations, key=lambda e: e.value)
        return ev.x.copy(), ev.value

    def ask(self) -> np.ndarray:
        if self._asked >= self.config.n_total:
            raise BudgetExhausted(
                f"budget of {self.config.n_total} points already asked"
            )
        if self._asked < self.config.n_initial:
            x = self._initial[self._asked].copy()
            label, meta = "lhs", {}
        else:
            x, label, meta = self._propose()
        self._asked += 1
        self._pending.append((x, label, meta))
        return x.copy()

    def tell_external(self, x, value, label: str = "external") -> None:
        """Record a point the session never asked for (e.g. the incumbent).

        The point enters the surrogate's training data but plays no part in
        acquisition bookkeeping.
        """
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise UnknownPoint(f"told point has dim {x.size}, expected {self.dim}")
        raw = float(value)
        val = raw if math.isfinite(raw) else self.config.nan_penalty
        self.evaluations.append(
            Evaluation(len(self.evaluations), x.copy(), val, label, raw)
        )

    def tell(self, x, value) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise UnknownPoint(f"told point has dim {x.size}, expected {self.dim}")
        idx = None
        for i, (pending, _, _) in enumerate(self._pending):
            if np.max(np.abs(pending - x)) <= 1e-12:
                idx = i
                break
        if idx is None:
            raise UnknownPoint("told point was never asked (or already told)")
        _, label, meta = self._pending.pop(idx)

        raw = float(value)
        val = raw
        if not math.isfinite(val):
            val = self.config.nan_penalty
        self.evaluations.append(
            Evaluation(len(self.evaluations), x.copy(), val, label, raw)
        )
        if meta.get("nominees"):
            self._update_gains(meta["nominees"])

    # -- proposal machinery ----------------------------------------------------

    def _data(self):
        X = np.array([e.x for e in self.evaluations])
        y = np.array([e.value for e in self.evaluations])
        return X, y

    def _fit_gp(self):
        X, y = self._data()
        self._gp.fit(X, y, self.rng)
        return X, y

    def _propose(self):
        X, y = self._fit_gp()
        best = float(np.min(y))
        cands = self.rng.uniform(size=(self.config.candidate_pool, self.dim))
        mu, sigma = self._gp.predict(cands)

        if self.config.acquisition == "GP_HEDGE":
            nominees = {}
            for name in ACQUISITIONS:
                vals = acquisition_values(
                    name, mu, sigma, best, self.config.ei_xi, self.config.lcb_kappa
                )
                x0 = cands[int(np.argmax(vals))]
                nominees[name] = self._refine(x0, name, best)
            probs = hedge_probabilities(
                [self.gains[a] for a in ACQUISITIONS], self.config.hedge_eta
            )
            choice = ACQUISITIONS[int(self.rng.choice(len(ACQUISITIONS), p=probs))]
            x = nominees[choice]
            x = self._dedupe(x, X)
            return x, choice, {"nominees": nominees}

        name = self.config.acquisition
        vals = acquisition_values(name, mu, sigma, best, self.config.ei_xi, self.config.lcb_kappa)
        x = self._refine(cands[int(np.argmax(vals))], name, best)
        x = self._dedupe(x, X)
        return x, name, {}

    def _refine(self, x0, name, best):
        """Coordinate descent polish of an acquisition maximizer."""
        x = x0.copy()
        step = 0.1
        current = self._acq_at(np.array([x]), name, best)[0]
        for _ in range(self.config.refine_steps):
            if step < 1e-3:
                break
            trial = np.repeat(x[None, :], 2 * self.dim, axis=0)
            for j in range(self.dim):
                trial[2 * j, j] = min(1.0, x[j] + step)
                trial[2 * j + 1, j] = max(0.0, x[j] - step)
            vals = self._acq_at(trial, name, best)
            k = int(np.argmax(vals))
            if vals[k] > current:
                x = trial[k]
                current = vals[k]
            else:
                step *= 0.5
        return x

    def _acq_at(self, X, name, best):
        mu, sigma = self._gp.predict(X)
        return acquisition_values(name, mu, sigma, best, self.config.ei_xi, self.config.lcb_kappa)

    def _dedupe(self, x, X):
        # an asked-not-told point counts as taken too
        taken = [X] if X.size else []
        taken += [p[None, :] for p, _, _ in self._pending]
        if not taken:
            return x
        taken = np.vstack(taken)
        tol = self.config.duplicate_tol
        for _ in range(16):
            if np.min(np.max(np.abs(taken - x), axis=1)) > tol:
                return x
            x = self.rng.uniform(size=self.dim)
        return x

    def _update_gains(self, nominees):
        """Hedge gains: reward each acquisition by -posterior mean at its
        nominee, under the posterior refreshed with the new observation."""
        X, y = self._data()
        try:
            self._gp.update_data(X, y)
        except DegenerateData:
            return
        for name, xn in nominees.items():
            mu, _ = self._gp.predict(np.array([xn]))
            self.gains[name] += -float(mu[0])

    # -- reporting ----------------------------------------------------------

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["iter"]
            + [f"x{j + 1}" for j in range(self.dim)]
            + ["value", "is_best_so_far", "acquisition"]
        )
        best = math.inf
        for ev in self.evaluations:
            is_best = ev.value < best
            best = min(best, ev.value)
            writer.writerow(
                [ev.index]
                + [f"{v:.17g}" for v in ev.x]
                + [f"{ev.value:.17g}", int(is_best), ev.acquisition]
            )
        return out.getvalue()


def random_search(fn, dim: int, budget: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Uniform random baseline with the same generator family."""
    rng = np.random.default_rng(seed)
    best_x, best_y = None, math.inf
    for _ in range(budget):
        x = rng.uniform(size=dim)
        y = float(fn(x))
        if y < best_y:
            best_x, best_y = x, y
    return best_x, best_y


def minimize(fn, config: OptimizerConfig) -> tuple[np.ndarray, float]:
    """Convenience loop: ask/evaluate/tell until the budget is spent."""
    session = OptimizerSession(config)
    for _ in range(config.n_total):
        x = session.ask()
        session.tell(x, fn(x))
    return session.best()

"""Gaussian process regression on the unit cube.

ARD Matern 5/2 (default) or squared-exponential kernel, targets standardized
internally, hyperparameters chosen by maximizing the log marginal likelihood
with multi-start L-BFGS-B on analytic gradients. A tiny jitter keeps the
Cholesky factorization alive while the posterior mean still interpolates the
training data to high accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import DegenerateData

SQRT5 = math.sqrt(5.0)

#: log-space hyperparameter bounds: ARD length scales, then signal variance
LENGTH_SCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-3, 1e3)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GPConfig:
    kernel: str = "matern52"  # matern52 | rbf (squared_exponential)
    n_restarts: int = 2
    jitter: float = JITTER_START


def _scaled_sq_dists(Xa, Xb, lengths):
    """Per-dimension squared distances divided by squared length scales,
    stacked (d, na, nb)."""
    diff = Xa[:, None, :] - Xb[None, :, :]
    return (diff / lengths) ** 2


def _kernel_parts(kind, S):
    """Correlation matrix and the shared radial factor used by gradients.

    S is the (d, na, nb) stack of scaled squared distances; r2 = sum(S).
    Returns (M, G) where dM/dlog(l_i) = G * S[i].
    """
    r2 = np.sum(S, axis=-1) if S.ndim == 3 else S
    r2 = np.maximum(r2, 0.0)
    if kind in ("rbf", "squared_exponential"):
        M = np.exp(-0.5 * r2)
        return M, M
    if kind == "matern52":
        r = np.sqrt(r2)
        e = np.exp(-SQRT5 * r)
        M = (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * e
        G = (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
        return M, G
    raise ValueError(f"unknown kernel {kind!r}")


class GaussianProcess:
    """Exact GP regressor; refit on every data change."""

    def __init__(self, config: GPConfig = GPConfig()):
        self.config = config
        self.theta_: np.ndarray | None = None  # log [l_1..l_d, sf2]
        self._X = None
        self._alpha = None
        self._L = None
        self._y_mean = 0.0
        self._y_std = 1.0
        self._jitter_used = config.jitter

    # -- likelihood ---------------------------------------------------------

    def _build_kernel(self, X, theta):
        d = X.shape[1]
        lengths = np.exp(theta[:d])
        sf2 = math.exp(theta[d])
        diff = X[:, None, :] - X[None, :, :]
        S = np.moveaxis((diff / lengths) ** 2, -1, 0)  # (d, n, n)
        M, G = _kernel_parts(self.config.kernel, np.moveaxis(S, 0, -1))
        return sf2 * M, sf2 * G, S

    def _chol(self, K):
        jitter = self.config.jitter
        n = K.shape[0]
        while True:
            try:
                L = linalg.cholesky(K + jitter * np.eye(n), lower=True)
                return L, jitter
            except linalg.LinAlgError:
                jitter *= 10.0
                if jitter > JITTER_MAX:
                    raise DegenerateData(
                        "kernel matrix not positive definite even with "
                        f"jitter {JITTER_MAX:g}"
                    ) from None

    def log_marginal_likelihood(self, X, y, theta, with_grad: bool = False):
        n, d = X.shape
        K, Gsf, S = self._build_kernel(X, theta)
        L, _ = self._chol(K)
        alpha = linalg.cho_solve((L, True), y)
        lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) \
            - 0.5 * n * math.log(2.0 * math.pi)
        if not with_grad:
            return lml
        Kinv = linalg.cho_solve((L, True), np.eye(n))
        W = np.outer(alpha, alpha) - Kinv  # dlml/dK = W/2
        grad = np.empty(d + 1)
        for i in range(d):
            grad[i] = 0.5 * float(np.sum(W * (Gsf * S[i])))
        # d(K - jitter I)/dlog(sf2) equals the noise-free kernel itself
        grad[d] = 0.5 * float(np.sum(W * K))
        return lml, grad

    # -- fitting ------------------------------------------------------------

    def fit(self, X, y, rng: np.random.Generator, theta0=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise DegenerateData(
                f"X {X.shape} and y {y.shape} sizes do not agree"
            )
        if X.shape[0] < 1:
            raise DegenerateData("cannot fit a GP to zero observations")
        n, d = X.shape

        self._y_mean = float(np.mean(y))
        self._y_std = float(np.std(y))
        if self._y_std < 1e-12:
            self._y_std = 1.0
        z = (y - self._y_mean) / self._y_std

        lo = np.log([LENGTH_SCALE_BOUNDS[0]] * d + [SIGNAL_VARIANCE_BOUNDS[0]])
        hi = np.log([LENGTH_SCALE_BOUNDS[1]] * d + [SIGNAL_VARIANCE_BOUNDS[1]])
        bounds = list(zip(lo, hi))

        starts = []
        if theta0 is not None:
            starts.append(np.clip(theta0, lo, hi))
        elif self.theta_ is not None and self.theta_.size == d + 1:
            starts.append(np.clip(self.theta_, lo, hi))
        else:
            starts.append(np.log(np.array([0.5] * d + [1.0])))
        while len(starts) < max(1, self.config.n_restarts):
            starts.append(rng.uniform(lo, hi))

        def objective(theta):
            try:
                lml, grad = self.log_marginal_likelihood(X, z, theta, with_grad=True)
            except DegenerateData:
                return 1e25, np.zeros_like(theta)
            return -lml, -grad

        best_theta, best_val = None, np.inf
        for t0 in starts:
            res = optimize.minimize(
                objective, t0, jac=True, method="L-BFGS-B", bounds=bounds
            )
            if res.fun < best_val:
                best_val, best_theta = res.fun, res.x
        if best_theta is None:
            raise DegenerateData("hyperparameter search failed to produce a fit")

        self.theta_ = best_theta
        self._refactor(X, z)
        return self

    def _refactor(self, X, z):
        K, _, _ = self._build_kernel(X, self.theta_)
        L, jitter = self._chol(K)
        self._X = X
        self._L = L
        self._alpha = linalg.cho_solve((L, True), z)
        self._jitter_used = jitter

    def update_data(self, X, y):
        """Refactor on new data keeping the current hyperparameters."""
        if self.theta_ is None:
            raise DegenerateData("update_data before any fit")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        z = (y - self._y_mean) / self._y_std
        self._refactor(X, z)
        return self

    # -- prediction ---------------------------------------------------------

    def predict(self, Xq):
        if self._X is None:
            raise DegenerateData("predict before fit")
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        d = self._X.shape[1]
        lengths = np.exp(self.theta_[:d])
        sf2 = math.exp(self.theta_[d])
        S = _scaled_sq_dists(Xq, self._X, lengths)
        M, _ = _kernel_parts(self.config.kernel, S)
        Ks = sf2 * M  # (nq, n)
        mu_z = Ks @ self._alpha
        v = linalg.solve_triangular(self._L, Ks.T, lower=True)
        var_z = (sf2 + self._jitter_used) - np.sum(v * v, axis=0)
        var_z = np.maximum(var_z, 0.0)
        mu = self._y_mean + self._y_std * mu_z
        sigma = self._y_std * np.sqrt(var_z)
        return mu, sigma

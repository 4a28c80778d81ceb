"""Gaussian-process regression with an ARD squared-exponential kernel.

Targets are standardized before fitting. Hyperparameters (signal variance,
one lengthscale per input, noise variance) are fitted in log space by
multi-start L-BFGS-B on the exact log marginal likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import ConfigurationError, FitError

GP_FORMAT = "hrc-gp/1"
JITTER = 1e-8
SIGNAL_BOUNDS = (1e-4, 1e2)


def rbf_ard(A, B, signal_var: float, lengthscales) -> np.ndarray:
    a = np.asarray(A, dtype=float) / lengthscales
    b = np.asarray(B, dtype=float) / lengthscales
    sq = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return signal_var * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass
class GPModel:
    X: np.ndarray
    y: np.ndarray
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float
    y_mean: float
    y_std: float
    log_marginal_likelihood: float = float("nan")

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.lengthscales = np.asarray(self.lengthscales, dtype=float).reshape(self.X.shape[1])
        if self.signal_var <= 0 or self.noise_var <= 0 or np.any(self.lengthscales <= 0):
            raise ConfigurationError("GP hyperparameters must be positive")
        self._refresh()

    def _refresh(self):
        ys = (self.y - self.y_mean) / self.y_std
        K = rbf_ard(self.X, self.X, self.signal_var, self.lengthscales)
        K[np.diag_indices_from(K)] += self.noise_var + JITTER
        self._chol = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._chol, ys)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict(self, x):
        """Posterior mean and standard deviation (noise included).

        A single point gives floats, a 2-D array gives arrays.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1
        Xs = x.reshape(1, -1) if single else x
        if Xs.shape[1] != self.dim or not np.all(np.isfinite(Xs)):
            raise ConfigurationError(f"expected finite inputs of dimension {self.dim}")
        Ks = rbf_ard(Xs, self.X, self.signal_var, self.lengthscales)
        mu = Ks @ self._alpha
        v = solve_triangular(self._chol[0], Ks.T, lower=True)
        var = self.signal_var + self.noise_var - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        mu = self.y_mean + self.y_std * mu
        sd = self.y_std * np.sqrt(var)
        if single:
            return float(mu[0]), float(sd[0])
        return mu, sd

    def to_dict(self) -> dict:
        return {"format": GP_FORMAT, "X": self.X.tolist(), "y": self.y.tolist(),
                "signal_var": self.signal_var, "lengthscales": self.lengthscales.tolist(),
                "noise_var": self.noise_var, "y_mean": self.y_mean, "y_std": self.y_std,
                "log_marginal_likelihood": self.log_marginal_likelihood}

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        if d.get("format") != GP_FORMAT:
            raise ConfigurationError(f"format: expected {GP_FORMAT!r}, got {d.get('format')!r}")
        return cls(d["X"], d["y"], d["signal_var"], d["lengthscales"], d["noise_var"],
                   d["y_mean"], d["y_std"], d.get("log_marginal_likelihood", float("nan")))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "GPModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def neg_log_marginal_likelihood(theta, X, y):
    """Negative log marginal likelihood and its gradient in log-parameters.

    ``theta = log([signal_var, l_1..l_d, noise_var])``; ``y`` is standardized.
    """
    n, d = X.shape
    sf2 = np.exp(theta[0])
    ell = np.exp(theta[1:1 + d])
    sn2 = np.exp(theta[-1])
    Kf = rbf_ard(X, X, sf2, ell)
    K = Kf.copy()
    K[np.diag_indices(n)] += sn2 + JITTER
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2.0 * np.pi)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(theta)
    grad[0] = -0.5 * np.sum(W * Kf)
    for k in range(d):
        diff = X[:, k, None] - X[None, :, k]
        grad[1 + k] = -0.5 * np.sum(W * Kf * diff * diff) / ell[k] ** 2
    grad[-1] = -0.5 * sn2 * np.trace(W)
    return nll, grad


def fit_gp(X, y, restarts: int = 8, seed: int = 0, noise_floor: float = 1e-6) -> GPModel:
    """Fit by maximizing the log marginal likelihood from ``restarts`` starts.

    Lengthscales are bounded to ``[0.01, 5]`` times each input's range and the
    (standardized) noise variance to ``[noise_floor, 1]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise FitError("X must be n x d with one target per row")
    n, d = X.shape
    if n < 2:
        raise FitError("need at least two training points")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("training data must be finite")
    if np.all(np.ptp(X, axis=0) == 0):
        raise FitError("all training inputs are identical")
    if restarts < 1:
        raise ConfigurationError("restarts must be >= 1")

    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    span = np.ptp(X, axis=0)
    span[span == 0] = 1.0
    lo = np.log(np.concatenate([[SIGNAL_BOUNDS[0]], 0.01 * span, [noise_floor]]))
    hi = np.log(np.concatenate([[SIGNAL_BOUNDS[1]], 5.0 * span, [max(1.0, noise_floor)]]))
    bounds = list(zip(lo, hi))

    rng = np.random.default_rng(seed)
    starts = [np.clip(np.log(np.concatenate([[1.0], 0.3 * span, [0.1]])), lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(restarts - 1)]
    best = None
    for theta0 in starts:
        res = minimize(neg_log_marginal_likelihood, theta0, args=(X, ys), jac=True,
                       method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    return GPModel(X, y, float(np.exp(theta[0])), np.exp(theta[1:1 + d]),
                   float(np.exp(theta[-1])), y_mean, y_std,
                   log_marginal_likelihood=float(-best.fun))


def risk_bound(model: GPModel, x, zeta: float):
    """Confidence-inflated risk: ``mu(x) + zeta * sigma(x)``."""
    if zeta < 0:
        raise ConfigurationError("zeta must be >= 0")
    mu, sd = model.predict(x)
    return mu + zeta * sd

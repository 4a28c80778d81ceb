"""Gaussian-mixture prior over dropped-object positions and an MCMC sampler.

The sampler is random-walk Metropolis with isotropic Gaussian proposals. A
single such chain practically never crosses between the two well-separated
modes of the default prior, so the chain runs with replica exchange: a
geometric ladder of tempered copies of the target, swapping neighbouring
states once per step. The first (untempered) replica is the one reported.
``n_temperatures=1`` gives the plain chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SamplerTuningError


@dataclass
class PriorDistribution:
    """Diagonal-covariance Gaussian mixture restricted to an axis-aligned box."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        c = self.weights.size
        self.means = np.asarray(self.means, dtype=float).reshape(c, 3)
        self.variances = np.asarray(self.variances, dtype=float).reshape(c, 3)
        self.lower = np.asarray(self.lower, dtype=float).reshape(3)
        self.upper = np.asarray(self.upper, dtype=float).reshape(3)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigurationError("mixture weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise ConfigurationError("mixture variances must be positive")
        if np.any(self.lower >= self.upper):
            raise ConfigurationError("workspace box is empty")
        self._log_norm = (np.log(self.weights)
                          - 0.5 * np.sum(np.log(2.0 * np.pi * self.variances), axis=1))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(),
                "bounds": {"lower": self.lower.tolist(), "upper": self.upper.tolist()}}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorDistribution":
        try:
            return cls(d["weights"], d["means"], d["variances"],
                       d["bounds"]["lower"], d["bounds"]["upper"])
        except KeyError as exc:
            raise ConfigurationError(f"prior: missing field {exc}") from exc


def gmm_logpdf(x, prior: PriorDistribution):
    """Mixture log-density (unbounded mixture, box ignored); vectorised over leading axes."""
    x = np.asarray(x, dtype=float)
    d = x[..., None, :] - prior.means
    comp = prior._log_norm - 0.5 * np.sum(d * d / prior.variances, axis=-1)
    top = comp.max(axis=-1)
    return top + np.log(np.exp(comp - top[..., None]).sum(axis=-1))


def sample_gmm_direct(prior: PriorDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the box-truncated mixture by rejection (validation oracle)."""
    out = np.empty((0, 3))
    while out.shape[0] < n:
        k = rng.choice(prior.weights.size, size=2 * n, p=prior.weights)
        draws = prior.means[k] + rng.normal(size=(2 * n, 3)) * np.sqrt(prior.variances[k])
        out = np.vstack([out, draws[prior.contains(draws)]])
    return out[:n]


@dataclass
class MHConfig:
    proposal_std: float = 0.05
    burn_in: int = 500
    thinning: int = 10
    seed: int = 0
    n_temperatures: int = 5
    max_temperature: float = 16.0

    def __post_init__(self):
        if self.proposal_std <= 0:
            raise ConfigurationError("proposal_std must be positive")
        if self.burn_in < 0 or self.thinning < 1:
            raise ConfigurationError("burn_in must be >= 0 and thinning >= 1")
        if self.n_temperatures < 1 or self.max_temperature < 1.0:
            raise ConfigurationError("temperature ladder must have >= 1 rung and max >= 1")

    def temperatures(self) -> np.ndarray:
        if self.n_temperatures == 1:
            return np.ones(1)
        return np.geomspace(1.0, self.max_temperature, self.n_temperatures)


class DropSampler:
    """Persistent MCMC chain emitting one thinned state per call to :meth:`next`."""

    def __init__(self, prior: PriorDistribution, cfg: MHConfig | None = None, seed=None):
        self.prior = prior
        self.cfg = cfg or MHConfig()
        self.rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        self.temps = self.cfg.temperatures()
        self.step_std = self.cfg.proposal_std * np.sqrt(self.temps)[:, None]
        k = prior.weights.size
        start = prior.means[np.argmax(prior.weights)] if k else 0.5 * (prior.lower + prior.upper)
        self.state = np.tile(np.clip(start, prior.lower, prior.upper), (self.temps.size, 1))
        self.logp = gmm_logpdf(self.state, prior)
        self.proposed = 0
        self.accepted = 0
        self._warm = False

    def _step(self):
        prop = self.state + self.rng.normal(size=self.state.shape) * self.step_std
        inside = self.prior.contains(prop)
        lp = np.where(inside, gmm_logpdf(prop, self.prior), -np.inf)
        u = np.log(self.rng.random(self.temps.size))
        acc = u < (lp - self.logp) / self.temps
        self.state[acc] = prop[acc]
        self.logp[acc] = lp[acc]
        self.proposed += 1
        self.accepted += int(acc[0])
        if self.temps.size > 1:
            k = self.rng.integers(self.temps.size - 1)
            log_r = (self.logp[k + 1] - self.logp[k]) * (1.0 / self.temps[k] - 1.0 / self.temps[k + 1])
            if np.log(self.rng.random()) < log_r:
                self.state[[k, k + 1]] = self.state[[k + 1, k]]
                self.logp[[k, k + 1]] = self.logp[[k + 1, k]]

    def warm_up(self):
        if not self._warm:
            for _ in range(self.cfg.burn_in):
                self._step()
            self._warm = True

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def next(self) -> np.ndarray:
        self.warm_up()
        for _ in range(self.cfg.thinning):
            self._step()
        return self.state[0].copy()


def mh_sample(prior: PriorDistribution, n: int, cfg: MHConfig | None = None) -> np.ndarray:
    """Draw ``n`` thinned states after burn-in; raises if acceptance is below 1%."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    sampler = DropSampler(prior, cfg)
    out = np.array([sampler.next() for _ in range(n)])
    if sampler.acceptance_rate < 0.01:
        raise SamplerTuningError(
            f"acceptance rate {sampler.acceptance_rate:.4f} < 1%; adjust proposal_std")
    return out


def sample_drop_position(sampler: DropSampler) -> np.ndarray:
    """Next drop position from a warmed chain, clamped into the workspace box."""
    x = sampler.next()
    return np.clip(x, sampler.prior.lower, sampler.prior.upper)

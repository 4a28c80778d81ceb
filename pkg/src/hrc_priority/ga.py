"""Real-coded genetic algorithm for the threshold design problem.

Maximizes a productivity predictor subject to ``risk(x) < t_lim`` over the box
``[0, l_max]^dim``. Constraints use the feasibility rule: feasible beats
infeasible, lower violation beats higher, and among feasible points higher
productivity wins.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError

RESULT_FORMAT = "hrc-result/1"
STRICT_MARGIN = 1e-9


@dataclass
class GAConfig:
    population_size: int = 64
    generations: int = 200
    crossover_rate: float = 0.9
    mutation_rate: float = 0.5
    mutation_std: float = 0.1
    tournament_size: int = 3
    blend_alpha: float = 0.5
    elite: int = 2
    final_mutation_std: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2:
            raise ConfigurationError("population_size must be even and >= 4")
        if self.generations < 1:
            raise ConfigurationError("generations must be >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.mutation_std <= 0 or self.final_mutation_std <= 0:
            raise ConfigurationError("mutation std must be positive")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ConfigurationError("tournament_size must be in [1, population_size]")
        if not 0 <= self.elite < self.population_size:
            raise ConfigurationError("elite must be in [0, population_size)")


@dataclass
class OptimizationResult:
    thresholds_star: np.ndarray
    predicted_product: float
    predicted_risk_bound: float
    feasible: bool
    t_lim: float
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"thresholds_star": [float(v) for v in self.thresholds_star],
                "predicted_product": float(self.predicted_product),
                "predicted_risk_bound": float(self.predicted_risk_bound),
                "feasible": bool(self.feasible), "t_lim": float(self.t_lim),
                "history": [[float(a), float(b)] for a, b in self.history]}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationResult":
        return cls(np.asarray(d["thresholds_star"], dtype=float), d["predicted_product"],
                   d["predicted_risk_bound"], d["feasible"], d["t_lim"],
                   [tuple(h) for h in d.get("history", [])])


def _rank_keys(product, violation):
    # lexsort sorts by the last key first
    return np.lexsort((-product, violation))


def _evaluate(f_product, f_risk, pop, t_lim):
    prod = np.asarray(f_product(pop), dtype=float).reshape(-1)
    risk = np.asarray(f_risk(pop), dtype=float).reshape(-1)
    viol = np.maximum(0.0, risk - (t_lim - STRICT_MARGIN))
    return prod, risk, viol


def optimize_thresholds(f_product, f_risk, t_lim: float, l_max: float, dim: int,
                        cfg: GAConfig | None = None, initial=None) -> OptimizationResult:
    """Maximize ``f_product`` subject to ``f_risk < t_lim`` on ``[0, l_max]^dim``.

    Both predictors map an ``(n, dim)`` array to ``n`` values. ``initial`` rows
    are injected into the first population (used for warm-started sweeps).
    """
    cfg = cfg or GAConfig()
    if t_lim <= 0:
        raise ConfigurationError("t_lim must be positive")
    if dim < 1 or l_max <= 0:
        raise ConfigurationError("need dim >= 1 and l_max > 0")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.population_size
    pop = rng.uniform(0.0, l_max, size=(n, dim))
    if initial is not None:
        init = np.clip(np.atleast_2d(np.asarray(initial, dtype=float)), 0.0, l_max)[:n]
        pop[:len(init)] = init
    prod, risk, viol = _evaluate(f_product, f_risk, pop, t_lim)
    history = []
    decay = (cfg.final_mutation_std / cfg.mutation_std) ** (1.0 / max(1, cfg.generations - 1))

    def tournament():
        idx = rng.integers(n, size=cfg.tournament_size)
        return idx[_rank_keys(prod[idx], viol[idx])[0]]

    for g in range(cfg.generations):
        sigma = cfg.mutation_std * decay ** g * l_max
        order = _rank_keys(prod, viol)
        children = [pop[order[:cfg.elite]]]
        n_new = n - cfg.elite
        kids = np.empty((n_new + 1, dim))
        for j in range(0, n_new, 2):
            a, b = pop[tournament()], pop[tournament()]
            if rng.random() < cfg.crossover_rate:
                lo, hi = np.minimum(a, b), np.maximum(a, b)
                ext = cfg.blend_alpha * (hi - lo)
                c1 = rng.uniform(lo - ext, hi + ext)
                c2 = rng.uniform(lo - ext, hi + ext)
            else:
                c1, c2 = a.copy(), b.copy()
            kids[j], kids[j + 1] = c1, c2
        kids = kids[:n_new]
        mask = rng.random(kids.shape) < cfg.mutation_rate
        kids = kids + mask * rng.normal(0.0, sigma, size=kids.shape)
        kids = np.clip(kids, 0.0, l_max)
        children.append(kids)
        pop = np.vstack(children)
        prod, risk, viol = _evaluate(f_product, f_risk, pop, t_lim)
        best = _rank_keys(prod, viol)[0]
        history.append((prod[best], viol[best]))

    best = _rank_keys(prod, viol)[0]
    return OptimizationResult(thresholds_star=pop[best].copy(), predicted_product=float(prod[best]),
                              predicted_risk_bound=float(risk[best]), feasible=bool(viol[best] == 0.0),
                              t_lim=float(t_lim), history=history)


def optimize_sweep(f_product, f_risk, t_lims, l_max: float, dim: int,
                   cfg: GAConfig | None = None) -> list[OptimizationResult]:
    """Optimize over ascending ``t_lims``, seeding each run with the previous optimum.

    A point feasible at one limit stays feasible at any larger one, so with
    elitism the optimized product never decreases along the sweep.
    """
    cfg = cfg or GAConfig()
    t_sorted = np.sort(np.asarray(t_lims, dtype=float))
    out = []
    prev = None
    for t in t_sorted:
        res = optimize_thresholds(f_product, f_risk, float(t), l_max, dim, cfg,
                                  initial=None if prev is None or not prev.feasible else prev.thresholds_star)
        out.append(res)
        prev = res if res.feasible else prev
    return out


def gp_predictors(product_model, risk_model, zeta: float = 0.0):
    """Wrap fitted GP models as batch predictors for :func:`optimize_thresholds`."""
    if zeta < 0:
        raise ConfigurationError("zeta must be >= 0")

    def f_product(X):
        return product_model.predict(np.atleast_2d(X))[0]

    def f_risk(X):
        mu, sd = risk_model.predict(np.atleast_2d(X))
        return mu + zeta * sd

    return f_product, f_risk


def evaluate_solution(scene, thresholds_star, n_trials: int, seed: int, jobs: int = 1):
    """Realized productivity and risk at the optimized thresholds."""
    from .simulator import run_batch

    return run_batch(scene, thresholds_star, n_trials, seed, jobs=jobs)


def config_dict(cfg: GAConfig) -> dict:
    return asdict(cfg)

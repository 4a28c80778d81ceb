import numpy as np
import pytest

from hrc_priority.errors import ConfigurationError
from hrc_priority.ga import (GAConfig, OptimizationResult, gp_predictors, optimize_sweep,
                             optimize_thresholds)
from hrc_priority.gp import fit_gp

L_MAX = 0.5


def linear_1d():
    # productivity and risk both grow with l; optimum sits on the constraint
    return (lambda X: X[:, 0]), (lambda X: 1.0 + 2.0 * X[:, 0])


def quadratic_2d():
    def f_product(X):
        return X[:, 0] + 0.5 * X[:, 1] - 0.3 * (X[:, 0] - X[:, 1]) ** 2

    def f_risk(X):
        return 1.0 + X[:, 0] + X[:, 1]

    return f_product, f_risk


def test_linear_problem_hits_constraint():
    f_p, f_r = linear_1d()
    res = optimize_thresholds(f_p, f_r, t_lim=1.5, l_max=L_MAX, dim=1, cfg=GAConfig(seed=1))
    assert res.feasible
    assert res.thresholds_star[0] == pytest.approx(0.25, abs=1e-6)
    assert res.predicted_risk_bound < 1.5


def test_loose_limit_gives_upper_bound():
    f_p, f_r = linear_1d()
    res = optimize_thresholds(f_p, f_r, t_lim=10.0, l_max=L_MAX, dim=1, cfg=GAConfig(seed=1))
    assert res.thresholds_star[0] == pytest.approx(L_MAX)


def test_constrained_2d_optimum():
    # on x + y = 0.4 the objective x + y/2 - 0.3(x - y)^2 peaks at x - y = 5/6 -> clipped by x <= 0.4
    f_p, f_r = quadratic_2d()
    grid = np.stack(np.meshgrid(np.linspace(0, L_MAX, 501), np.linspace(0, L_MAX, 501)), -1).reshape(-1, 2)
    ok = f_r(grid) < 1.4
    best = f_p(grid[ok]).max()
    res = optimize_thresholds(f_p, f_r, 1.4, L_MAX, 2, GAConfig(seed=3))
    assert res.feasible
    assert res.predicted_product >= best - 5e-4
    assert f_r(res.thresholds_star[None])[0] < 1.4


def test_solution_stays_in_bounds():
    rng = np.random.default_rng(0)
    w = rng.normal(size=4)
    res = optimize_thresholds(lambda X: X @ w, lambda X: np.zeros(len(X)), 1.0, L_MAX, 4,
                              GAConfig(seed=2, generations=30))
    assert np.all(res.thresholds_star >= 0) and np.all(res.thresholds_star <= L_MAX)
    np.testing.assert_allclose(res.thresholds_star, np.where(w > 0, L_MAX, 0.0), atol=1e-3)


def test_elitism_makes_history_monotone():
    f_p, f_r = quadratic_2d()
    res = optimize_thresholds(f_p, f_r, 1.3, L_MAX, 2, GAConfig(seed=4, generations=60))
    hist = np.array(res.history)
    feasible = hist[:, 1] == 0
    first = np.argmax(feasible)
    assert feasible[first:].all()
    assert np.all(np.diff(hist[first:, 0]) >= 0)
    assert np.all(np.diff(hist[:first, 1]) <= 0)


def test_infeasible_problem_reports_least_violation():
    f_p, f_r = linear_1d()
    res = optimize_thresholds(f_p, f_r, t_lim=0.5, l_max=L_MAX, dim=1, cfg=GAConfig(seed=0))
    assert not res.feasible
    assert res.thresholds_star[0] == pytest.approx(0.0, abs=1e-9)


def test_sweep_is_monotone_in_t_lim():
    f_p, f_r = quadratic_2d()
    t_lims = np.linspace(1.05, 2.0, 12)
    results = optimize_sweep(f_p, f_r, t_lims[::-1], L_MAX, 2, GAConfig(seed=5, generations=60))
    assert [r.t_lim for r in results] == sorted(t_lims)
    values = np.array([r.predicted_product for r in results])
    assert np.all(np.diff(values) >= -1e-3 * L_MAX)


def test_deterministic_under_seed():
    f_p, f_r = quadratic_2d()
    a = optimize_thresholds(f_p, f_r, 1.4, L_MAX, 2, GAConfig(seed=9, generations=20))
    b = optimize_thresholds(f_p, f_r, 1.4, L_MAX, 2, GAConfig(seed=9, generations=20))
    np.testing.assert_array_equal(a.thresholds_star, b.thresholds_star)


def test_initial_population_is_used():
    f_p, f_r = linear_1d()
    res = optimize_thresholds(f_p, f_r, 1.5, L_MAX, 1, GAConfig(seed=0, generations=1),
                              initial=[[0.2499999]])
    assert res.thresholds_star[0] >= 0.2499999


def test_result_round_trip():
    res = OptimizationResult(np.array([0.1, 0.2]), 1.5, 2.0, True, 2.5, [(1.0, 0.0)])
    back = OptimizationResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(back.thresholds_star, res.thresholds_star)
    assert back.to_dict() == res.to_dict()


def test_gp_predictors_inflate_risk():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, L_MAX, size=(20, 1))
    m = fit_gp(X, X[:, 0] + rng.normal(scale=0.05, size=20))
    Xs = np.linspace(0, L_MAX, 5)[:, None]
    _, r0 = gp_predictors(m, m, 0.0)
    _, r2 = gp_predictors(m, m, 2.0)
    assert np.all(r2(Xs) > r0(Xs))
    with pytest.raises(ConfigurationError):
        gp_predictors(m, m, -1.0)


@pytest.mark.parametrize("kwargs", [dict(population_size=5), dict(population_size=2),
                                    dict(generations=0), dict(crossover_rate=1.5),
                                    dict(mutation_rate=-0.1), dict(mutation_std=0.0),
                                    dict(tournament_size=0), dict(elite=64)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        GAConfig(**kwargs)


def test_argument_validation():
    f_p, f_r = linear_1d()
    with pytest.raises(ConfigurationError):
        optimize_thresholds(f_p, f_r, 0.0, L_MAX, 1)
    with pytest.raises(ConfigurationError):
        optimize_thresholds(f_p, f_r, 1.0, 0.0, 1)

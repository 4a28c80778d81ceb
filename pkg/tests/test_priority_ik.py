import numpy as np
import pytest

from hrc_priority.errors import ConfigurationError, DegenerateGeometryError
from hrc_priority.kinematics import augmented_jacobian, ee_frame, planar_chain
from hrc_priority.priority_ik import (CollisionParams, PriorityConfig, PriorityIK, TaskCommand,
                                      WorldState, assemble_ik_qp, collision_constraint,
                                      priority_value, priority_weights, step_ik)
from hrc_priority.qp import solve_qp

CP = CollisionParams()


def test_priority_value_threshold():
    assert priority_value(0.10, 0.15) == 0
    assert priority_value(0.15, 0.15) == 1
    assert priority_value(0.30, 0.15) == 1
    # l_bar = 0 always gives recovery priority
    assert priority_value(0.0, 0.0) == 1


def test_priority_weights():
    cfg = PriorityConfig(thresholds=[0.1, 0.2])
    w = priority_weights([1, 0], cfg, active_pair=1)
    np.testing.assert_allclose(w, [1e5, 1e7, 1e5])
    w = priority_weights([1, 0], cfg, active_pair=0)
    np.testing.assert_allclose(w, [1e5, 1e7, 1e7])
    w = priority_weights([0, 0], cfg)
    np.testing.assert_allclose(w[-1], 1e7)


def test_collision_row_value():
    models = [planar_chain([0.5]), planar_chain([0.5]).with_base([1.0, 0.0, 0.0])]
    q_all = np.array([0.0, np.pi])
    Jm = augmented_jacobian(models, q_all, 0)
    Jr = augmented_jacobian(models, q_all, 1)
    p_m = ee_frame(models[0], q_all[:1])[1]
    p_r = ee_frame(models[1], q_all[1:])[1]
    d = np.linalg.norm(p_m - p_r)
    assert d == pytest.approx(0.0, abs=1e-12) or d > 0
    # move them 0.12 apart along x
    p_r = p_m + np.array([0.12, 0.0, 0.0])
    row, lower = collision_constraint(p_m, p_r, Jm, Jr, CP)
    assert lower == pytest.approx(-0.1 * (0.12 - 0.10) / 0.05)
    n = np.array([-1.0, 0.0, 0.0])
    np.testing.assert_allclose(row, n @ (Jm[:3] - Jr[:3]))


def test_collision_row_absent_outside_influence():
    J = np.zeros((6, 2))
    assert collision_constraint([0, 0, 0], [0.15, 0, 0], J, J, CP) is None
    assert collision_constraint([0, 0, 0], [0.149, 0, 0], J, J, CP) is not None


def test_collision_row_at_security_distance_forbids_approach():
    J = np.zeros((6, 2))
    _, lower = collision_constraint([0, 0, 0], [0.10, 0, 0], J, J, CP)
    assert lower == pytest.approx(0.0)


def test_coincident_end_effectors_raise():
    J = np.zeros((6, 2))
    with pytest.raises(DegenerateGeometryError):
        collision_constraint([0, 0, 0], [0, 0, 0], J, J, CP)


@pytest.mark.parametrize("kwargs", [dict(d_s=0.2, d_i=0.1), dict(d_s=0.0), dict(xi=0.0)])
def test_collision_params_validation(kwargs):
    with pytest.raises(ConfigurationError):
        CollisionParams(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(thresholds=[0.6]), dict(thresholds=[-0.1]),
                                    dict(gamma=1.0), dict(epsilon=0.0), dict(w_o=-1.0)])
def test_priority_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        PriorityConfig(**kwargs)


def test_task_command_validation():
    with pytest.raises(ConfigurationError):
        TaskCommand(0, [np.nan, 0, 0, 0, 0, 0])


def two_planar_robots():
    # facing each other along x; at START the end effectors are 0.21 m apart
    m = planar_chain([0.4, 0.3, 0.1], qdot_limit=3.0)
    r = planar_chain([0.4, 0.3, 0.1], qdot_limit=3.0).with_base(
        [1.386, 0.0, 0.0], np.diag([-1.0, -1.0, 1.0]))
    return [m, r]


START = np.array([0.8, -1.6, 0.8, -0.8, 1.6, -0.8])


def test_assembled_qp_unconstrained_tracks_twist():
    models = two_planar_robots()
    q_all = START.copy()
    twists = [np.array([0.05, 0.0, 0, 0, 0, 0]), np.array([-0.02, 0.01, 0, 0, 0, 0])]
    cmds = [TaskCommand(i, t) for i, t in enumerate(twists)]
    cfg = PriorityConfig(thresholds=[0.0])
    p = assemble_ik_qp(models, q_all, cmds, [1e5, 1e5], cfg, CP, pairs=[(0, 1)])
    assert p.k == 0
    qdot = solve_qp(p).x
    for i in range(2):
        J = augmented_jacobian(models, q_all, i)
        # epsilon regularization leaves a small residual
        np.testing.assert_allclose(J[:2] @ qdot, twists[i][:2], atol=1e-4)


def closing_run(priority, steps=100, dt=0.01, speed=0.1):
    models = two_planar_robots()
    q = START.copy()
    state = WorldState(models, q, recovery_index=1, manufacturing_indices=[0],
                       targets=np.zeros((2, 3)))
    cfg = PriorityConfig(thresholds=[0.0 if priority == 1 else 0.5])
    ik = PriorityIK(models, 1, [0], cfg, CP)
    dists, tracking = [], []
    for _ in range(steps):
        frames = [ee_frame(m, qi) for m, qi in zip(models, np.split(state.q, [3]))]
        p_m, p_r = frames[0][1], frames[1][1]
        dists.append(np.linalg.norm(p_m - p_r))
        # both robots push straight at each other
        v = speed * (p_r - p_m) / np.linalg.norm(p_r - p_m)
        cmds = [TaskCommand(0, np.r_[v, 0, 0, 0]), TaskCommand(1, np.r_[-v, 0, 0, 0])]
        state.targets[0] = p_m + (1.0 if priority == 1 else 0.0)
        qdot = step_ik(state, cmds, cfg, CP, ik)
        J_r = augmented_jacobian(models, state.q, 1)
        J_m = augmented_jacobian(models, state.q, 0)
        tracking.append((np.linalg.norm(J_m[:2] @ qdot - v[:2]), np.linalg.norm(J_r[:2] @ qdot + v[:2])))
        state.q = state.q + qdot * dt
    return np.array(dists), np.array(tracking)


@pytest.mark.parametrize("priority", [0, 1])
def test_velocity_damper_keeps_security_distance(priority):
    dists, _ = closing_run(priority)
    assert dists[0] > CP.d_i
    assert dists.min() >= CP.d_s - 1e-3
    assert dists[-1] < CP.d_s + 0.02


def test_priority_decides_who_yields():
    _, recovery_first = closing_run(1)
    _, manufacturing_first = closing_run(0)
    # in contact the prioritized robot absorbs about 1/(1 + gamma) of the conflict
    m_err_r, r_err_r = recovery_first[-30:].mean(axis=0)
    m_err_m, r_err_m = manufacturing_first[-30:].mean(axis=0)
    assert r_err_r < 0.02 * m_err_r
    assert m_err_m < 0.02 * r_err_m


def test_solve_without_collision_pairs():
    models = two_planar_robots()
    ik = PriorityIK(models, 1, [0], PriorityConfig(thresholds=[0.0]), CP)
    ik.avoid_collisions = False
    q = START.copy()
    frames = [ee_frame(m, qi) for m, qi in zip(models, np.split(q, [3]))]
    step = ik.solve(frames, [np.zeros(6), np.zeros(6)], [1])
    assert step.n_constraints == 0
    np.testing.assert_allclose(step.qdot, 0.0, atol=1e-12)

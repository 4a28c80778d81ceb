import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hrc_priority.errors import ConfigurationError
from hrc_priority.kinematics import (RobotModel, augmented_jacobian, column_offsets, default_chain,
                                     ee_frame, forward_kinematics, geometric_jacobian, planar_chain,
                                     quat_from_matrix, quat_multiply, quat_conjugate, quat_to_matrix,
                                     quat_from_axis_angle, split_joints)


def random_chain(rng, n):
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return RobotModel(
        axes=axes,
        link_rotations=Rotation.random(n, random_state=rng.integers(1 << 31)).as_matrix(),
        link_translations=rng.uniform(-0.3, 0.3, size=(n, 3)),
        qdot_min=-np.ones(n), qdot_max=np.ones(n),
        tool_rotation=Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(),
        tool_translation=rng.uniform(-0.2, 0.2, 3),
        base_rotation=Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(),
        base_translation=rng.uniform(-1, 1, 3),
    )


def fd_jacobian(model, q, h=1e-6):
    J = np.zeros((6, model.n))
    for k in range(model.n):
        dq = np.zeros(model.n)
        dq[k] = h
        Rp, pp, _ = ee_frame(model, q + dq)
        Rm, pm, _ = ee_frame(model, q - dq)
        J[:3, k] = (pp - pm) / (2 * h)
        R = ee_frame(model, q)[0]
        W = (Rp - Rm) / (2 * h) @ R.T
        J[3:, k] = [W[2, 1], W[0, 2], W[1, 0]]
    return J


def test_jacobian_matches_finite_differences_on_random_chains():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        model = random_chain(rng, int(rng.integers(1, 9)))
        q = rng.uniform(-np.pi, np.pi, model.n)
        worst = max(worst, np.abs(geometric_jacobian(model, q) - fd_jacobian(model, q)).max())
    assert worst <= 1e-5


def test_planar_chain_closed_form(rng):
    lengths = [0.4, 0.3, 0.2]
    model = planar_chain(lengths)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        c = np.cumsum(q)
        x = sum(l * np.cos(a) for l, a in zip(lengths, c))
        y = sum(l * np.sin(a) for l, a in zip(lengths, c))
        pose = forward_kinematics(model, q)
        np.testing.assert_allclose(pose.position, [x, y, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose.rotation, Rotation.from_euler("z", c[-1]).as_matrix(), atol=1e-12)


def test_zero_configuration_of_default_chain_is_straight_up():
    model = default_chain()
    _, p, _ = ee_frame(model, np.zeros(model.n))
    reach = model.link_translations[:, 2].sum() + model.tool_translation[2]
    np.testing.assert_allclose(p, [0.0, 0.0, reach], atol=1e-12)


def test_quaternion_round_trip(rng):
    for R in Rotation.random(50, random_state=3).as_matrix():
        q = quat_from_matrix(R)
        assert q[0] >= 0
        np.testing.assert_allclose(quat_to_matrix(q), R, atol=1e-12)


def test_quaternion_algebra(rng):
    a = quat_from_axis_angle([0, 0, 1], 0.3)
    b = quat_from_axis_angle([0, 0, 1], 0.5)
    np.testing.assert_allclose(quat_multiply(a, b), quat_from_axis_angle([0, 0, 1], 0.8), atol=1e-12)
    np.testing.assert_allclose(quat_multiply(a, quat_conjugate(a)), [1, 0, 0, 0], atol=1e-12)


def test_dict_round_trip_preserves_kinematics(rng):
    model = random_chain(rng, 5)
    clone = RobotModel.from_dict(model.to_dict())
    q = rng.uniform(-1, 1, 5)
    for a, b in zip(ee_frame(model, q), ee_frame(clone, q)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_with_base_translates_end_effector():
    model = planar_chain([0.5])
    moved = model.with_base([1.0, 2.0, 3.0])
    np.testing.assert_allclose(forward_kinematics(moved, [0.0]).position, [1.5, 2.0, 3.0])


def test_augmented_jacobian_places_columns():
    models = [planar_chain([0.3, 0.3]), planar_chain([0.2, 0.2, 0.2])]
    q_all = np.linspace(-0.5, 0.5, 5)
    assert column_offsets(models).tolist() == [0, 2, 5]
    Jhat = augmented_jacobian(models, q_all, 1)
    assert Jhat.shape == (6, 5)
    assert np.all(Jhat[:, :2] == 0)
    np.testing.assert_allclose(Jhat[:, 2:], geometric_jacobian(models[1], q_all[2:]))


@pytest.mark.parametrize("bad", [np.zeros(4), np.zeros(6)])
def test_split_joints_rejects_wrong_length(bad):
    with pytest.raises(ConfigurationError):
        split_joints([planar_chain([0.3, 0.3]), planar_chain([0.3, 0.3, 0.3])], bad)


def test_wrong_configuration_length_rejected():
    with pytest.raises(ConfigurationError):
        ee_frame(planar_chain([0.3, 0.3]), np.zeros(3))


def test_model_validation():
    with pytest.raises(ConfigurationError):
        RobotModel(axes=[[0, 0, 2.0]], link_rotations=[np.eye(3)], link_translations=[[0, 0, 0]],
                   qdot_min=[-1], qdot_max=[1])
    with pytest.raises(ConfigurationError):
        RobotModel(axes=[[0, 0, 1.0]], link_rotations=[np.eye(3)], link_translations=[[0, 0, 0]],
                   qdot_min=[1], qdot_max=[1])
    with pytest.raises(ConfigurationError):
        RobotModel.from_dict({"format": "other/9", "joints": []})
    with pytest.raises(ConfigurationError):
        RobotModel.from_dict({"joints": [{"offset": [0, 0, 0]}]})

"""Serial-chain forward kinematics and geometric Jacobians.

A chain is a list of revolute joints. Joint ``j`` sits at the end of a fixed
link transform (rotation + translation expressed in the previous frame) and
rotates about ``axis[j]`` given in its own frame. A fixed tool transform
follows the last joint.

Quaternions use the ``[w, x, y, z]`` convention throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError

ROBOT_FORMAT = "hrc-robot/1"


# ----------------------------------------------------------------------------
# quaternion helpers
# ----------------------------------------------------------------------------

def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``[w, x, y, z]`` of a rotation matrix (Shepperd's method)."""
    m = np.asarray(R, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis])


@dataclass(frozen=True)
class Pose:
    """End-effector pose: position (m) and unit quaternion ``[w, x, y, z]``."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ConfigurationError("pose quaternion is not unit length")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)


@dataclass(frozen=True)
class JointVector:
    """Joint positions or velocities of one robot."""

    values: np.ndarray
    robot_index: int = 0

    def __len__(self):
        return len(self.values)


# ----------------------------------------------------------------------------
# robot model
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RobotModel:
    """Kinematic description of a revolute serial chain.

    Attributes:
        axes: (n, 3) joint axes, each in its own joint frame.
        link_rotations: (n, 3, 3) fixed rotation preceding each joint.
        link_translations: (n, 3) fixed translation preceding each joint (m).
        tool_rotation, tool_translation: fixed transform after the last joint.
        base_rotation, base_translation: world pose of link 0.
        qdot_min, qdot_max: joint velocity bounds (rad/s).
    """

    axes: np.ndarray
    link_rotations: np.ndarray
    link_translations: np.ndarray
    qdot_min: np.ndarray
    qdot_max: np.ndarray
    tool_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    tool_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "chain"

    def __post_init__(self):
        as_f = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
        for attr in ("axes", "link_rotations", "link_translations", "qdot_min",
                     "qdot_max", "tool_rotation", "tool_translation",
                     "base_rotation", "base_translation"):
            object.__setattr__(self, attr, as_f(getattr(self, attr)))
        n = self.axes.shape[0]
        if n < 1 or self.axes.shape != (n, 3):
            raise ConfigurationError("a chain needs at least one joint with a 3-vector axis")
        if self.link_rotations.shape != (n, 3, 3) or self.link_translations.shape != (n, 3):
            raise ConfigurationError("link transforms do not match the joint count")
        if self.qdot_min.shape != (n,) or self.qdot_max.shape != (n,):
            raise ConfigurationError("velocity bounds do not match the joint count")
        norms = np.linalg.norm(self.axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ConfigurationError(f"joint axes must be unit vectors, got norms {norms}")
        if np.any(self.qdot_min >= self.qdot_max):
            raise ConfigurationError("qdot_min must be strictly below qdot_max")

    @property
    def n(self) -> int:
        return self.axes.shape[0]

    def with_base(self, position, rotation=None) -> "RobotModel":
        """Copy of the model mounted at another world pose."""
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        return replace(self, base_translation=np.asarray(position, dtype=float),
                       base_rotation=R)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": ROBOT_FORMAT,
            "name": self.name,
            "base": {"position": self.base_translation.tolist(),
                     "quaternion": quat_from_matrix(self.base_rotation).tolist()},
            "joints": [
                {"axis": a.tolist(), "offset": t.tolist(),
                 "quaternion": quat_from_matrix(R).tolist()}
                for a, t, R in zip(self.axes, self.link_translations, self.link_rotations)
            ],
            "tool": {"offset": self.tool_translation.tolist(),
                     "quaternion": quat_from_matrix(self.tool_rotation).tolist()},
            "qdot_min": self.qdot_min.tolist(),
            "qdot_max": self.qdot_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        fmt = d.get("format", ROBOT_FORMAT)
        if fmt != ROBOT_FORMAT:
            raise ConfigurationError(f"unsupported robot format {fmt!r}")
        try:
            joints = d["joints"]
            axes = np.array([j["axis"] for j in joints], dtype=float)
            offsets = np.array([j.get("offset", [0.0, 0.0, 0.0]) for j in joints], dtype=float)
            rots = np.array([_rotation_from_entry(j) for j in joints])
            tool = d.get("tool", {})
            base = d.get("base", {})
            n = len(joints)
            qmin = d.get("qdot_min", [-1.0] * n)
            qmax = d.get("qdot_max", [1.0] * n)
            if np.isscalar(qmin):
                qmin = [qmin] * n
            if np.isscalar(qmax):
                qmax = [qmax] * n
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed robot description: {exc}") from exc
        # axes in description files are normalised on load
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        return cls(
            axes=axes, link_rotations=rots, link_translations=offsets,
            qdot_min=np.asarray(qmin, dtype=float), qdot_max=np.asarray(qmax, dtype=float),
            tool_rotation=_rotation_from_entry(tool),
            tool_translation=np.asarray(tool.get("offset", [0.0, 0.0, 0.0]), dtype=float),
            base_rotation=_rotation_from_entry(base),
            base_translation=np.asarray(base.get("position", [0.0, 0.0, 0.0]), dtype=float),
            name=d.get("name", "chain"),
        )

    @classmethod
    def load(cls, path) -> "RobotModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _rotation_from_entry(entry: dict) -> np.ndarray:
    if "quaternion" in entry:
        return quat_to_matrix(entry["quaternion"])
    if "rpy" in entry:
        return Rotation.from_euler("xyz", entry["rpy"]).as_matrix()
    if "yaw_deg" in entry:
        return Rotation.from_euler("z", entry["yaw_deg"], degrees=True).as_matrix()
    return np.eye(3)


def default_chain_path() -> Path:
    return Path(__file__).with_name("data") / "generic7.json"


def default_chain() -> RobotModel:
    """Generic 7-DoF arm: alternating Z/Y joints, 0.4 m upper arm and forearm."""
    return RobotModel.load(default_chain_path())


def planar_chain(lengths, qdot_limit: float = 1.0) -> RobotModel:
    """Planar chain of z-axis joints with links along x (test and demo helper)."""
    lengths = list(lengths)
    n = len(lengths)
    offsets = np.zeros((n, 3))
    offsets[1:, 0] = lengths[:-1]
    return RobotModel(
        axes=np.tile([0.0, 0.0, 1.0], (n, 1)),
        link_rotations=np.tile(np.eye(3), (n, 1, 1)),
        link_translations=offsets,
        qdot_min=-qdot_limit * np.ones(n), qdot_max=qdot_limit * np.ones(n),
        tool_translation=np.array([lengths[-1], 0.0, 0.0]),
        name=f"planar{n}",
    )


# ----------------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------------

@numba.njit(cache=True)
def _mat3_vec(R, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = R[i, 0] * v[0] + R[i, 1] * v[1] + R[i, 2] * v[2]
    return out


@numba.njit(cache=True)
def _mat3_mat(A, B):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@numba.njit(cache=True)
def _axis_rotation(axis, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = t * x * x + c
    R[0, 1] = t * x * y - s * z
    R[0, 2] = t * x * z + s * y
    R[1, 0] = t * x * y + s * z
    R[1, 1] = t * y * y + c
    R[1, 2] = t * y * z - s * x
    R[2, 0] = t * x * z - s * y
    R[2, 1] = t * y * z + s * x
    R[2, 2] = t * z * z + c
    return R


@numba.njit(cache=True)
def chain_kernel(axes, link_rot, link_trans, tool_rot, tool_trans, base_rot, base_trans, q):
    """End-effector rotation/position and the 6xn geometric Jacobian."""
    n = q.shape[0]
    R = base_rot.copy()
    p = base_trans.copy()
    joint_pos = np.empty((n, 3))
    joint_axis = np.empty((n, 3))
    for j in range(n):
        p = p + _mat3_vec(R, link_trans[j])
        R = _mat3_mat(R, link_rot[j])
        joint_pos[j] = p
        joint_axis[j] = _mat3_vec(R, axes[j])
        R = _mat3_mat(R, _axis_rotation(axes[j], q[j]))
    p = p + _mat3_vec(R, tool_trans)
    R = _mat3_mat(R, tool_rot)
    J = np.empty((6, n))
    for j in range(n):
        z = joint_axis[j]
        r0 = p[0] - joint_pos[j, 0]
        r1 = p[1] - joint_pos[j, 1]
        r2 = p[2] - joint_pos[j, 2]
        J[0, j] = z[1] * r2 - z[2] * r1
        J[1, j] = z[2] * r0 - z[0] * r2
        J[2, j] = z[0] * r1 - z[1] * r0
        J[3, j] = z[0]
        J[4, j] = z[1]
        J[5, j] = z[2]
    return R, p, J


def _check_q(model: RobotModel, q) -> np.ndarray:
    values = q.values if isinstance(q, JointVector) else q
    values = np.ascontiguousarray(values, dtype=float)
    if values.shape != (model.n,):
        raise ConfigurationError(
            f"joint vector has shape {values.shape}, robot {model.name!r} has {model.n} joints")
    return values


def ee_frame(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """End-effector rotation, position and geometric Jacobian in one pass."""
    values = _check_q(model, q)
    return chain_kernel(model.axes, model.link_rotations, model.link_translations,
                        model.tool_rotation, model.tool_translation,
                        model.base_rotation, model.base_translation, values)


def forward_kinematics(model: RobotModel, q) -> Pose:
    R, p, _ = ee_frame(model, q)
    return Pose(position=p, orientation=quat_from_matrix(R))


def geometric_jacobian(model: RobotModel, q) -> np.ndarray:
    """6xn Jacobian; rows 0-2 linear velocity, rows 3-5 world-frame angular velocity."""
    return ee_frame(model, q)[2]


def split_joints(models, q_all) -> list[np.ndarray]:
    """Partition a stacked joint vector into per-robot slices."""
    q_all = np.asarray(q_all, dtype=float)
    sizes = [m.n for m in models]
    if q_all.shape != (sum(sizes),):
        raise ConfigurationError(
            f"stacked joint vector has length {q_all.size}, models need {sum(sizes)}")
    return np.split(q_all, np.cumsum(sizes)[:-1])


def column_offsets(models) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([m.n for m in models])])


def augmented_jacobian(models, q_all, i: int) -> np.ndarray:
    """Jacobian of robot ``i`` embedded in the columns of the stacked joint vector."""
    if not 0 <= i < len(models):
        raise ConfigurationError(f"robot index {i} out of range for {len(models)} robots")
    parts = split_joints(models, q_all)
    offsets = column_offsets(models)
    Jhat = np.zeros((6, offsets[-1]))
    Jhat[:, offsets[i]:offsets[i + 1]] = geometric_jacobian(models[i], parts[i])
    return Jhat

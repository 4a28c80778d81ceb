"""Scene configuration: robots, controllers, prior and solver parameters.

Scenes are JSON documents (``"format": "hrc-scene/1"``). Loading validates
every field and reports the offending path, then solves IK once for each
robot's start postures.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError
from .kinematics import RobotModel, ee_frame, quat_from_matrix
from .motion_control import ImpedanceParams, circle_waypoints
from .prior_sampler import MHConfig, PriorDistribution
from .priority_ik import CollisionParams, PriorityConfig

SCENE_FORMAT = "hrc-scene/1"
DATA_DIR = Path(__file__).with_name("data")

RECOVERY = "recovery"
MANUFACTURING = "manufacturing"


def inverse_kinematics(model: RobotModel, position, rotation=None, q0=None,
                       iters: int = 2000, damping: float = 1e-3, tol: float = 1e-10):
    """Damped least-squares IK; position-only when ``rotation`` is None.

    Returns ``(q, error_norm)``.
    """
    q = np.zeros(model.n) if q0 is None else np.array(q0, dtype=float)
    target = np.asarray(position, dtype=float)
    err_norm = np.inf
    for _ in range(iters):
        R, p, J = ee_frame(model, q)
        e_pos = target - p
        if rotation is None:
            e, Jt = e_pos, J[:3]
        else:
            rv = Rotation.from_matrix(rotation @ R.T).as_rotvec()
            e, Jt = np.concatenate([e_pos, rv]), J
        err_norm = float(np.linalg.norm(e))
        if err_norm < tol:
            break
        dq = Jt.T @ np.linalg.solve(Jt @ Jt.T + damping * np.eye(Jt.shape[0]), e)
        step = np.abs(dq).max()
        if step > 0.2:
            dq *= 0.2 / step
        q = q + dq
    return q, err_norm


@dataclass
class RobotSpec:
    name: str
    role: str
    model: RobotModel
    impedance: ImpedanceParams
    reach_tol: float
    waypoints: np.ndarray
    start_configs: np.ndarray
    reference_orientation: np.ndarray

    @property
    def home_q(self) -> np.ndarray:
        return self.start_configs[0]


@dataclass
class SceneConfig:
    name: str
    robots: list
    prior: PriorDistribution
    mh: MHConfig
    collision: CollisionParams
    priority: PriorityConfig
    dt: float = 0.002
    trial_timeout: float = 60.0
    seed: int = 0
    orientation_gain: float = 2.0
    qp_tol: float = 1e-6
    qp_max_iter: int = 4000
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        roles = [r.role for r in self.robots]
        if roles.count(RECOVERY) != 1:
            raise ConfigurationError("robots: exactly one recovery robot is required")
        if roles.count(MANUFACTURING) < 1:
            raise ConfigurationError("robots: at least one manufacturing robot is required")
        if not 0.001 <= self.dt <= 0.02:
            raise ConfigurationError(f"dt: {self.dt} outside [0.001, 0.02]")
        if self.trial_timeout <= 0:
            raise ConfigurationError("trial_timeout: must be positive")
        if self.priority.thresholds.size != self.n_manufacturing:
            self.priority = self.priority.with_thresholds(np.zeros(self.n_manufacturing))

    @property
    def models(self) -> list:
        return [r.model for r in self.robots]

    @property
    def recovery_index(self) -> int:
        return next(i for i, r in enumerate(self.robots) if r.role == RECOVERY)

    @property
    def manufacturing_indices(self) -> list:
        return [i for i, r in enumerate(self.robots) if r.role == MANUFACTURING]

    @property
    def n_manufacturing(self) -> int:
        return len(self.manufacturing_indices)

    @property
    def l_max(self) -> float:
        return self.priority.l_max

    def digest(self) -> str:
        src = {k: v for k, v in self.source.items() if k != "_base_dir"}
        blob = json.dumps(src, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def override(self, **changes) -> "SceneConfig":
        """Rebuild the scene with top-level JSON fields replaced."""
        src = copy.deepcopy(self.source)
        src.update(changes)
        return scene_from_dict(src, base_dir=self.source.get("_base_dir"))


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigurationError(f"{where}.{key}: missing required field")
    return d[key]


def _vec(value, n: int, where: str) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float).reshape(n)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where}: expected {n} numbers, got {value!r}") from None
    if not np.all(np.isfinite(a)):
        raise ConfigurationError(f"{where}: values must be finite")
    return a


def _load_model(ref, base_dir: Path | None, where: str) -> RobotModel:
    if isinstance(ref, dict):
        return RobotModel.from_dict(ref)
    for root in ([base_dir] if base_dir else []) + [DATA_DIR]:
        path = Path(root) / ref
        if path.exists():
            return RobotModel.load(path)
    raise ConfigurationError(f"{where}: robot description {ref!r} not found")


def _seed_posture(model: RobotModel, base_pos, target) -> np.ndarray:
    """Elbow-bent start posture with the first joint turned toward the target."""
    d = np.asarray(target) - np.asarray(base_pos)
    local = model.base_rotation.T @ d
    yaw = np.arctan2(local[1], local[0])
    q = np.zeros(model.n)
    q[0] = yaw
    q[1:] = [0.5, 0.0, 1.2, 0.0, 1.2, 0.0][: model.n - 1] + [0.0] * max(0, model.n - 7)
    return q


def _robot_from_dict(d: dict, idx: int, models: dict, base_dir) -> RobotSpec:
    where = f"robots[{idx}]"
    name = d.get("name", f"robot{idx}")
    role = _req(d, "role", where)
    if role not in (RECOVERY, MANUFACTURING):
        raise ConfigurationError(f"{where}.role: must be 'recovery' or 'manufacturing', got {role!r}")
    ref = _req(d, "model", where)
    model = models[ref] if isinstance(ref, str) and ref in models else _load_model(ref, base_dir, f"{where}.model")
    base = d.get("base", {})
    base_pos = _vec(base.get("position", [0, 0, 0]), 3, f"{where}.base.position")
    base_R = Rotation.from_euler("z", float(base.get("yaw_deg", 0.0)), degrees=True).as_matrix()
    model = model.with_base(base_pos, base_R)
    imp = d.get("impedance", {})
    try:
        impedance = ImpedanceParams.from_dict({"mass": imp.get("mass", [1, 1, 1]),
                                               "stiffness": _req(imp, "stiffness", f"{where}.impedance"),
                                               **({"damping": imp["damping"]} if "damping" in imp else {})})
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}.impedance: {exc}") from None
    reach_tol = float(d.get("reach_tol", 0.02))
    if reach_tol <= 0:
        raise ConfigurationError(f"{where}.reach_tol: must be positive")

    if role == RECOVERY:
        waypoints = _vec(_req(d, "home", where), 3, f"{where}.home")[None, :]
    else:
        center = _vec(_req(d, "work_center", where), 3, f"{where}.work_center")
        radius = float(d.get("waypoint_radius", 0.15))
        count = int(d.get("n_waypoints", 4))
        if radius <= 0 or count < 2:
            raise ConfigurationError(f"{where}: need waypoint_radius > 0 and n_waypoints >= 2")
        waypoints = circle_waypoints(center, radius, count, np.deg2rad(d.get("phase_deg", 0.0)))

    # reference orientation: tool pointing down, heading toward the work area
    first = waypoints[0]
    aim = waypoints.mean(axis=0)
    heading = np.arctan2(aim[1] - base_pos[1], aim[0] - base_pos[0])
    if "ee_rpy_deg" in d:
        R_ref = Rotation.from_euler("xyz", d["ee_rpy_deg"], degrees=True).as_matrix()
    else:
        R_ref = Rotation.from_euler("ZY", [heading, np.pi]).as_matrix()
    configs = []
    q_prev = _seed_posture(model, base_pos, first)
    rng = np.random.default_rng(idx)
    for k, wp in enumerate(waypoints):
        q, err = inverse_kinematics(model, wp, R_ref, q0=q_prev)
        for _ in range(20):
            if err <= 1e-6:
                break
            q0 = q_prev + rng.uniform(-1.5, 1.5, model.n)
            q, err = inverse_kinematics(model, wp, R_ref, q0=q0, iters=800)
        if err > 1e-6:
            raise ConfigurationError(f"{where}: start pose {k} at {wp.tolist()} is unreachable (IK error {err:.2e})")
        configs.append(q)
        q_prev = q
    return RobotSpec(name=name, role=role, model=model, impedance=impedance,
                     reach_tol=reach_tol, waypoints=waypoints,
                     start_configs=np.array(configs),
                     reference_orientation=quat_from_matrix(R_ref))


def scene_from_dict(d: dict, base_dir=None) -> SceneConfig:
    fmt = d.get("format")
    if fmt != SCENE_FORMAT:
        raise ConfigurationError(f"format: expected {SCENE_FORMAT!r}, got {fmt!r}")
    models = {}
    for key, ref in d.get("robot_models", {}).items():
        models[key] = _load_model(ref, Path(base_dir) if base_dir else None, f"robot_models.{key}")
    robots_raw = _req(d, "robots", "scene")
    robots = [_robot_from_dict(r, i, models, Path(base_dir) if base_dir else None)
              for i, r in enumerate(robots_raw)]
    n_m = sum(r.role == MANUFACTURING for r in robots)
    try:
        prior = PriorDistribution.from_dict(_req(d, "prior", "scene"))
    except ConfigurationError as exc:
        raise ConfigurationError(f"prior: {exc}") from None
    try:
        mh = MHConfig(**d.get("mh", {}))
    except (TypeError, ConfigurationError) as exc:
        raise ConfigurationError(f"mh: {exc}") from None
    try:
        collision = CollisionParams(**d.get("collision", {}))
    except (TypeError, ConfigurationError) as exc:
        raise ConfigurationError(f"collision: {exc}") from None
    pr = dict(d.get("priority", {}))
    pr.setdefault("thresholds", [0.0] * n_m)
    try:
        priority = PriorityConfig(**pr)
    except (TypeError, ConfigurationError) as exc:
        raise ConfigurationError(f"priority: {exc}") from None
    qp = d.get("qp", {})
    src = copy.deepcopy(d)
    if base_dir is not None:
        src["_base_dir"] = str(base_dir)
    return SceneConfig(
        name=d.get("name", "scene"), robots=robots, prior=prior, mh=mh,
        collision=collision, priority=priority,
        dt=float(d.get("dt", 0.002)), trial_timeout=float(d.get("trial_timeout", 60.0)),
        seed=int(d.get("seed", 0)), orientation_gain=float(d.get("orientation_gain", 2.0)),
        qp_tol=float(qp.get("tol", 1e-6)), qp_max_iter=int(qp.get("max_iter", 4000)),
        source=src,
    )


def resolve_scene_path(path) -> Path:
    """``path`` itself, or the bundled scene of that name when ``path`` does not exist."""
    path = Path(path)
    if not path.exists() and (DATA_DIR / path.name).exists():
        return DATA_DIR / path.name
    return path


def load_scene(path) -> SceneConfig:
    path = resolve_scene_path(path)
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(d, base_dir=path.parent)


def default_scene_path() -> Path:
    return DATA_DIR / "default_scene.json"


def preliminary_scene_path() -> Path:
    return DATA_DIR / "preliminary_scene.json"

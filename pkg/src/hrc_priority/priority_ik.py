"""Weighted multi-robot differential IK with velocity-damper collision rows.

Each tick solves::

    min_qdot  sum_i w_i |Jhat_i qdot - xdot_i|^2 + eps |qdot|^2
    s.t.      qdot_min <= qdot <= qdot_max
              n'(Jhat_m - Jhat_r) qdot >= -xi (d - d_s) / (d_i - d_s)   for d < d_i

where the weights come from the binary priority of each manufacturing robot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError
from .kinematics import column_offsets, ee_frame, split_joints
from .qp import INFEASIBLE, MAX_ITER, QPProblem, QPSolver

log = logging.getLogger(__name__)


@dataclass
class CollisionParams:
    d_s: float = 0.10
    d_i: float = 0.15
    xi: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.d_s < self.d_i:
            raise ConfigurationError("need 0 < d_s < d_i")
        if self.xi <= 0:
            raise ConfigurationError("xi must be positive")


@dataclass
class PriorityConfig:
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(1))
    l_max: float = 0.5
    w_o: float = 1.0e5
    gamma: float = 1.0e2
    epsilon: float = 1.0

    def __post_init__(self):
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        if np.any(self.thresholds < 0) or np.any(self.thresholds > self.l_max):
            raise ConfigurationError(
                f"thresholds {self.thresholds} outside [0, {self.l_max}]")
        if self.w_o <= 0 or self.gamma <= 1 or self.epsilon <= 0:
            raise ConfigurationError("need w_o > 0, gamma > 1, epsilon > 0")

    def with_thresholds(self, thresholds) -> "PriorityConfig":
        return PriorityConfig(thresholds, self.l_max, self.w_o, self.gamma, self.epsilon)


@dataclass
class TaskCommand:
    robot_index: int
    desired_twist: np.ndarray

    def __post_init__(self):
        self.desired_twist = np.asarray(self.desired_twist, dtype=float).reshape(6)
        if not np.all(np.isfinite(self.desired_twist)):
            raise ConfigurationError("desired twist must be finite")


def _dist(a, b) -> float:
    d = a - b
    return math.sqrt(d @ d)


def priority_value(l: float, l_bar: float) -> int:
    """0 (manufacturing first) when ``l < l_bar``, else 1 (recovery first)."""
    return 0 if l < l_bar else 1


def priority_weights(p_per_robot, cfg: PriorityConfig, active_pair: int | None = None) -> np.ndarray:
    """Weights ``[w_m1, ..., w_mN, w_r]``.

    ``active_pair`` indexes the manufacturing robot that governs the recovery
    weight (the nearest one inside the influenced distance). Without one the
    recovery robot takes the boosted weight.
    """
    p = np.asarray(p_per_robot, dtype=float)
    w_m = cfg.w_o * cfg.gamma ** (1.0 - p)
    p_star = 1.0 if active_pair is None else p[active_pair]
    w_r = cfg.w_o * cfg.gamma ** p_star
    return np.append(w_m, w_r)


def collision_constraint(p_m, p_r, Jhat_m, Jhat_r, cp: CollisionParams):
    """Velocity-damper row for one manufacturing/recovery pair.

    Returns ``(row, lower)`` meaning ``row @ qdot >= lower``, or ``None`` when the
    pair is at or beyond the influenced distance.
    """
    diff = np.asarray(p_m, dtype=float) - np.asarray(p_r, dtype=float)
    d = float(np.linalg.norm(diff))
    if d <= 1e-9:
        raise DegenerateGeometryError("end effectors coincide")
    if d >= cp.d_i:
        return None
    normal = diff / d
    row = normal @ (Jhat_m[:3] - Jhat_r[:3])
    lower = -cp.xi * (d - cp.d_s) / (cp.d_i - cp.d_s)
    return row, lower


def _bounds(models):
    return (np.concatenate([m.qdot_min for m in models]),
            np.concatenate([m.qdot_max for m in models]))


def build_qp(jacobians, positions, twists, weights, epsilon, lb, ub, pairs, cp) -> QPProblem:
    """QP from per-robot Jacobians (6 x n_i) and end-effector positions."""
    sizes = [J.shape[1] for J in jacobians]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = off[-1]
    H = np.zeros((n, n))
    g = np.zeros(n)
    for i, J in enumerate(jacobians):
        s = slice(off[i], off[i + 1])
        H[s, s] = weights[i] * (J.T @ J)
        g[s] = -weights[i] * (J.T @ twists[i])
    H[np.diag_indices(n)] += epsilon
    rows, lowers = [], []
    for m, r in pairs:
        Jm = np.zeros((6, n))
        Jm[:, off[m]:off[m + 1]] = jacobians[m]
        Jr = np.zeros((6, n))
        Jr[:, off[r]:off[r + 1]] = jacobians[r]
        c = collision_constraint(positions[m], positions[r], Jm, Jr, cp)
        if c is not None:
            rows.append(c[0])
            lowers.append(c[1])
    C = np.array(rows) if rows else np.zeros((0, n))
    return QPProblem(H, g, lb, ub, C, np.array(lowers))


def assemble_ik_qp(models, q_all, commands, weights, cfg: PriorityConfig,
                   cp: CollisionParams, pairs) -> QPProblem:
    """Stacked IK problem for all robots (one :class:`TaskCommand` per robot)."""
    if len(commands) != len(models) or len(weights) != len(models):
        raise ConfigurationError("need one command and one weight per robot")
    parts = split_joints(models, q_all)
    frames = [ee_frame(m, q) for m, q in zip(models, parts)]
    twists = [None] * len(models)
    for c in commands:
        twists[c.robot_index] = c.desired_twist
    if any(t is None for t in twists):
        raise ConfigurationError("every robot needs exactly one command")
    lb, ub = _bounds(models)
    return build_qp([f[2] for f in frames], [f[1] for f in frames], twists,
                    np.asarray(weights, dtype=float), cfg.epsilon, lb, ub, pairs, cp)


@dataclass
class WorldState:
    """Joint state of every robot plus the manufacturing targets used for priorities."""

    models: list
    q: np.ndarray
    recovery_index: int
    manufacturing_indices: list
    targets: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float).reshape(len(self.models), 3)
        split_joints(self.models, self.q)


@dataclass
class IKStep:
    qdot: np.ndarray
    status: str
    weights: np.ndarray
    priorities: np.ndarray
    n_constraints: int
    pair_distances: np.ndarray


class PriorityIK:
    """Per-trial IK context owning a warm-started QP solver."""

    def __init__(self, models, recovery_index: int, manufacturing_indices,
                 cfg: PriorityConfig, cp: CollisionParams, solver: QPSolver | None = None):
        self.models = list(models)
        self.recovery_index = recovery_index
        self.manufacturing_indices = list(manufacturing_indices)
        self.cfg = cfg
        self.cp = cp
        self.solver = solver or QPSolver()
        self.lb, self.ub = _bounds(self.models)
        self.offsets = column_offsets(self.models)
        self.pairs = [(m, recovery_index) for m in self.manufacturing_indices]
        self.avoid_collisions = True
        self.failures = 0
        self.max_iter_hits = 0

    def priorities(self, positions, targets) -> np.ndarray:
        """Binary priority per manufacturing robot from its distance to its own target."""
        th = self.cfg.thresholds
        return np.array([priority_value(_dist(positions[m], targets[m]), th[k])
                         for k, m in enumerate(self.manufacturing_indices)])

    def solve(self, frames, twists, priorities) -> IKStep:
        """Joint velocities for one tick.

        ``frames`` holds ``(R, p, J)`` per robot, ``twists`` the desired 6-vector
        per robot, ``priorities`` one 0/1 value per manufacturing robot.
        """
        positions = [f[1] for f in frames]
        r = self.recovery_index
        dists = np.array([_dist(positions[m], positions[r])
                          for m in self.manufacturing_indices])
        inside = np.flatnonzero(dists < self.cp.d_i) if self.avoid_collisions else np.zeros(0, int)
        active = int(inside[np.argmin(dists[inside])]) if inside.size else None
        w_mr = priority_weights(priorities, self.cfg, active)
        weights = np.empty(len(self.models))
        weights[self.manufacturing_indices] = w_mr[:-1]
        weights[r] = w_mr[-1]
        pairs = [self.pairs[k] for k in inside]
        qp = build_qp([f[2] for f in frames], positions, twists, weights, self.cfg.epsilon,
                      self.lb, self.ub, pairs, self.cp)
        sol = self.solver.solve(qp)
        qdot = sol.x
        if sol.status == INFEASIBLE:
            self.failures += 1
            log.warning("IK QP infeasible; holding all joints")
            qdot = np.zeros_like(qdot)
        elif sol.status == MAX_ITER:
            self.max_iter_hits += 1
            log.debug("IK QP hit max_iter (primal %.2e, dual %.2e)",
                      sol.primal_residual, sol.dual_residual)
        return IKStep(qdot=qdot, status=sol.status, weights=weights,
                      priorities=np.asarray(priorities), n_constraints=qp.k,
                      pair_distances=dists)


def step_ik(state: WorldState, commands, cfg: PriorityConfig, cp: CollisionParams,
            ik: PriorityIK | None = None) -> np.ndarray:
    """Stacked joint-velocity command for the current world state."""
    ik = ik or PriorityIK(state.models, state.recovery_index, state.manufacturing_indices, cfg, cp)
    parts = split_joints(state.models, state.q)
    frames = [ee_frame(m, q) for m, q in zip(state.models, parts)]
    twists = [None] * len(state.models)
    for c in commands:
        twists[c.robot_index] = c.desired_twist
    prios = ik.priorities([f[1] for f in frames], state.targets)
    return ik.solve(frames, twists, prios).qdot

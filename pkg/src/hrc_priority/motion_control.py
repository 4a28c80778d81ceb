"""Impedance controllers producing end-effector twists, and target schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .errors import ConfigurationError
from .kinematics import quat_conjugate, quat_multiply


def critical_damping(M, K) -> np.ndarray:
    """Diagonal damping ``2*sqrt(m*k)`` for diagonal mass/stiffness (3-vectors or 3x3)."""
    m = _diag(M)
    k = _diag(K)
    if np.any(m <= 0) or np.any(k <= 0):
        raise ConfigurationError("mass and stiffness diagonals must be positive")
    return 2.0 * np.sqrt(m * k)


def _diag(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.diag(a).copy() if a.ndim == 2 else a.reshape(3).copy()


@dataclass
class ImpedanceParams:
    """Diagonal virtual mass, damper and spring (stored as 3-vectors)."""

    M: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        self.M, self.D, self.K = _diag(self.M), _diag(self.D), _diag(self.K)
        if np.any(self.M <= 0) or np.any(self.D < 0) or np.any(self.K < 0):
            raise ConfigurationError("impedance diagonals must be positive")

    @classmethod
    def critically_damped(cls, M, K) -> "ImpedanceParams":
        return cls(M=M, D=critical_damping(M, K), K=K)

    @classmethod
    def from_dict(cls, d: dict) -> "ImpedanceParams":
        M = d.get("mass", [1.0, 1.0, 1.0])
        K = d["stiffness"]
        if "damping" in d:
            return cls(M=M, D=d["damping"], K=K)
        if np.any(np.asarray(K, dtype=float) == 0):
            # a disabled (zero-stiffness) robot: damping keeps it at rest
            return cls(M=M, D=2.0 * np.sqrt(np.asarray(M, dtype=float)), K=K)
        return cls.critically_damped(M, K)


@dataclass
class ImpedanceState:
    x: np.ndarray
    xdot: np.ndarray
    x_d: np.ndarray
    xdot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))


def impedance_step(s: ImpedanceState, p: ImpedanceParams, dt: float) -> np.ndarray:
    """One explicit Euler step of ``M xdd + D(xd - xd_d) + K(x - x_d) = f``.

    Returns the commanded translational velocity and stores it in ``s.xdot``.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    xdd = (s.f_ext - p.D * (s.xdot - s.xdot_d) - p.K * (s.x - s.x_d)) / p.M
    cmd = s.xdot + xdd * dt
    s.xdot = cmd
    return cmd


def orientation_hold(current, reference, gain: float, max_rate: float = 1.0) -> np.ndarray:
    """Angular velocity rotating ``current`` toward ``reference`` (world frame)."""
    err = quat_multiply(np.asarray(reference, dtype=float), quat_conjugate(np.asarray(current, dtype=float)))
    if err[0] < 0.0:
        err = -err
    v = err[1:]
    s = math.sqrt(v @ v)
    if s < 1e-15:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(s, err[0])
    omega = gain * angle * err[1:] / s
    norm = math.sqrt(omega @ omega)
    if norm > max_rate:
        omega *= max_rate / norm
    return omega


MANUFACTURING_CYCLE = "manufacturing_cycle"
RECOVERY_SPAWN = "recovery_spawn"


@dataclass
class TargetSchedule:
    mode: str
    waypoints: np.ndarray
    reach_tol: float = 0.02
    current_index: int = 0
    completions: int = 0

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.mode not in (MANUFACTURING_CYCLE, RECOVERY_SPAWN):
            raise ConfigurationError(f"unknown schedule mode {self.mode!r}")
        if self.reach_tol <= 0:
            raise ConfigurationError("reach_tol must be positive")
        if self.mode == MANUFACTURING_CYCLE and len(self.waypoints) < 2:
            raise ConfigurationError("a manufacturing cycle needs at least two waypoints")

    @property
    def target(self) -> np.ndarray:
        return self.waypoints[self.current_index]


def circle_waypoints(center, radius: float = 0.15, count: int = 4, phase: float = 0.0) -> np.ndarray:
    """Evenly spaced waypoints on a horizontal circle, counter-clockwise."""
    ang = phase + 2.0 * np.pi * np.arange(count) / count
    c = np.asarray(center, dtype=float)
    return c + radius * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(count)])


def advance_schedule(sched: TargetSchedule, ee_position, sampler=None):
    """Check completion and move the schedule on.

    Returns ``(new_target or None, task_completed)``. In recovery mode a new
    target is drawn from ``sampler`` (a :class:`~hrc_priority.prior_sampler.DropSampler`)
    when one is given; otherwise the target is left in place.
    """
    d = np.asarray(ee_position, dtype=float) - sched.target
    done = math.sqrt(d @ d) <= sched.reach_tol
    if not done:
        return None, False
    sched.completions += 1
    if sched.mode == MANUFACTURING_CYCLE:
        sched.current_index = (sched.current_index + 1) % len(sched.waypoints)
        return sched.target, True
    if sampler is None:
        return None, True
    from .prior_sampler import sample_drop_position

    sched.waypoints = sample_drop_position(sampler)[None, :]
    sched.current_index = 0
    return sched.target, True

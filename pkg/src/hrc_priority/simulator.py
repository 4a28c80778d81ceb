"""Tick-driven kinematic simulation of the shared workcell.

One trial starts every robot at rest: the recovery robot at home, each
manufacturing robot at a random waypoint of its cycle. A drop position is drawn
from the prior and the trial lasts until the recovery end effector reaches it.
Every tick runs impedance control, the priority function, the weighted IK QP
and a forward Euler joint update.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SceneError
from .kinematics import ee_frame, quat_from_matrix
from .motion_control import (MANUFACTURING_CYCLE, ImpedanceState, TargetSchedule,
                             advance_schedule, impedance_step, orientation_hold)
from .prior_sampler import DropSampler, sample_drop_position
from .priority_ik import PriorityIK
from .qp import QPSolver
from .scene import SceneConfig

log = logging.getLogger(__name__)

PRIORITY = "priority"
RECOVERY_FIRST = "recovery_first"
MANUFACTURING_FIRST = "manufacturing_first"
NON_CONTINUOUS = "non_continuous"
MODES = (PRIORITY, RECOVERY_FIRST, MANUFACTURING_FIRST, NON_CONTINUOUS)

DATASET_FORMAT = "hrc-dataset/1"

# safety margin below d_s that counts as a breach
BREACH_SLACK = 0.01


@dataclass
class TrialResult:
    risk_time: float
    tasks_completed: np.ndarray
    deadlocked: bool
    min_pair_distance: float
    hard_failure: bool
    drop_position: np.ndarray
    seed: int
    qp_failures: int = 0
    trajectory_log: dict | None = field(default=None, repr=False)


@dataclass
class SampleRecord:
    thresholds: np.ndarray
    x_product: float
    x_risk: float
    n_trials: int
    discarded_trials: int
    seed: int
    sd_product: float = 0.0
    sd_risk: float = 0.0
    min_pair_distance: float = float("inf")
    hard_failures: int = 0

    def __post_init__(self):
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))


def _dist(a, b) -> float:
    d = a - b
    return math.sqrt(d @ d)


def trial_seed(batch_seed: int, index: int) -> int:
    """Seed of the ``index``-th trial attempt of a batch."""
    return int(np.random.SeedSequence([int(batch_seed), int(index)]).generate_state(1)[0])


def _check_thresholds(scene: SceneConfig, thresholds) -> np.ndarray:
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))
    if th.size == 1 and scene.n_manufacturing > 1:
        th = np.full(scene.n_manufacturing, th[0])
    if th.size != scene.n_manufacturing:
        raise ConfigurationError(
            f"expected {scene.n_manufacturing} thresholds, got {th.size}")
    if np.any(th < 0) or np.any(th > scene.l_max) or not np.all(np.isfinite(th)):
        raise ConfigurationError(f"thresholds {th} outside [0, {scene.l_max}]")
    return th


def run_trial(scene: SceneConfig, thresholds, seed: int, mode: str = PRIORITY,
              drop_position=None, log_trajectory: bool = False) -> TrialResult:
    """Simulate one recovery reach.

    ``mode`` selects the priority rule: ``priority`` uses the threshold
    function, ``recovery_first`` and ``manufacturing_first`` pin p to 1 or 0,
    and ``non_continuous`` halts the cell: manufacturing robots hold their
    first waypoint and are treated as retracted, so they neither move nor
    constrain the recovery robot.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; choose from {MODES}")
    th = _check_thresholds(scene, thresholds)
    ss = np.random.SeedSequence(int(seed))
    start_seq, drop_seq = ss.spawn(2)
    rng = np.random.default_rng(start_seq)

    if drop_position is None:
        sampler = DropSampler(scene.prior, scene.mh, seed=drop_seq)
        drop = sample_drop_position(sampler)
    else:
        drop = np.asarray(drop_position, dtype=float).reshape(3)

    robots = scene.robots
    models = scene.models
    r_idx = scene.recovery_index
    m_idx = scene.manufacturing_indices
    frozen = mode == NON_CONTINUOUS

    q = []
    schedules = {}
    for i, spec in enumerate(robots):
        if i == r_idx:
            q.append(spec.home_q.copy())
            continue
        k = 0 if frozen else int(rng.integers(len(spec.waypoints)))
        q.append(spec.start_configs[k].copy())
        schedules[i] = TargetSchedule(MANUFACTURING_CYCLE, spec.waypoints, spec.reach_tol,
                                      current_index=(k + 1) % len(spec.waypoints))

    ik = PriorityIK(models, r_idx, m_idx, scene.priority.with_thresholds(th), scene.collision,
                    QPSolver(tol=scene.qp_tol, max_iter=scene.qp_max_iter))
    if frozen:
        for i in m_idx:
            s = slice(ik.offsets[i], ik.offsets[i + 1])
            ik.lb[s] = 0.0
            ik.ub[s] = 0.0
        ik.avoid_collisions = False

    frames = [ee_frame(m, qi) for m, qi in zip(models, q)]
    states = []
    for i, f in enumerate(frames):
        target = drop if i == r_idx else (f[1] if frozen else schedules[i].target)
        states.append(ImpedanceState(x=f[1].copy(), xdot=np.zeros(3), x_d=np.array(target, dtype=float)))
    refs = [spec.reference_orientation for spec in robots]

    dt = scene.dt
    max_ticks = int(round(scene.trial_timeout / dt))
    counts = np.zeros(len(m_idx), dtype=int)
    min_dist = np.inf
    r_tol = robots[r_idx].reach_tol
    traj = {"t": [], "positions": [], "priorities": [], "events": []} if log_trajectory else None
    fixed_p = {RECOVERY_FIRST: 1, NON_CONTINUOUS: 1, MANUFACTURING_FIRST: 0}.get(mode)

    tick = 0
    reached = False
    while True:
        positions = [f[1] for f in frames]
        p_r = positions[r_idx]
        if not frozen:
            d = min(_dist(positions[m], p_r) for m in m_idx)
            min_dist = min(min_dist, d)
        t = tick * dt
        if _dist(p_r, drop) <= r_tol:
            reached = True
            break
        if tick >= max_ticks:
            break

        if not frozen:
            for k, m in enumerate(m_idx):
                new_target, done = advance_schedule(schedules[m], positions[m])
                if done:
                    counts[k] += 1
                    states[m].x_d = new_target.copy()
                    if traj is not None:
                        traj["events"].append((t, k, schedules[m].current_index))

        twists = []
        for i, (R, p, _) in enumerate(frames):
            s = states[i]
            s.x = p
            if frozen and i != r_idx:
                twists.append(np.zeros(6))
                continue
            v = impedance_step(s, robots[i].impedance, dt)
            w = orientation_hold(quat_from_matrix(R), refs[i], scene.orientation_gain)
            twists.append(np.concatenate([v, w]))

        if fixed_p is None:
            targets = {m: states[m].x_d for m in m_idx}
            prios = ik.priorities(positions, targets)
        else:
            prios = np.full(len(m_idx), fixed_p)
        step = ik.solve(frames, twists, prios)
        qdot = step.qdot
        for i in range(len(models)):
            q[i] = q[i] + qdot[ik.offsets[i]:ik.offsets[i + 1]] * dt
        frames = [ee_frame(m, qi) for m, qi in zip(models, q)]
        tick += 1

        if traj is not None:
            traj["t"].append(tick * dt)
            traj["positions"].append(np.array([f[1] for f in frames]))
            traj["priorities"].append(np.array(prios))

    hard = bool(min_dist < scene.collision.d_s - BREACH_SLACK)
    if hard:
        log.error("security distance breached: %.4f m (seed %d)", min_dist, seed)
    if traj is not None:
        traj["t"] = np.array(traj["t"])
        traj["positions"] = np.array(traj["positions"]).reshape(-1, len(models), 3)
        traj["priorities"] = np.array(traj["priorities"]).reshape(-1, len(m_idx))
        traj["drop"] = drop
    return TrialResult(risk_time=tick * dt, tasks_completed=counts, deadlocked=not reached,
                       min_pair_distance=float(min_dist), hard_failure=hard,
                       drop_position=drop, seed=int(seed), qp_failures=ik.failures,
                       trajectory_log=traj)


def _trial_job(args):
    scene, thresholds, seed, mode = args
    return run_trial(scene, thresholds, seed, mode)


def _trials(scene, thresholds, seeds, mode, jobs):
    if jobs <= 1 or len(seeds) <= 1:
        return [run_trial(scene, thresholds, s, mode) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, [(scene, thresholds, s, mode) for s in seeds]))


def run_batch(scene: SceneConfig, thresholds, n_trials: int, seed: int,
              mode: str = PRIORITY, jobs: int = 1) -> SampleRecord:
    """Mean productivity and risk time over ``n_trials`` completed trials.

    Deadlocked trials are dropped and replaced by the next derived seed. More
    deadlocks than requested trials means the scene is broken.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    th = _check_thresholds(scene, thresholds)
    done: list[TrialResult] = []
    discarded = 0
    next_index = 0
    while len(done) < n_trials:
        need = n_trials - len(done)
        seeds = [trial_seed(seed, next_index + j) for j in range(need)]
        next_index += need
        for res in _trials(scene, th, seeds, mode, jobs):
            if res.deadlocked:
                discarded += 1
                log.info("trial %d deadlocked; resampling", res.seed)
            else:
                done.append(res)
        if discarded > n_trials:
            raise SceneError(
                f"{discarded} deadlocked trials for {n_trials} requested; check the scene")
    risk = np.array([r.risk_time for r in done])
    prod = np.array([r.tasks_completed.mean() for r in done])
    ddof = 1 if len(done) > 1 else 0
    return SampleRecord(thresholds=th, x_product=float(prod.mean()), x_risk=float(risk.mean()),
                        n_trials=len(done), discarded_trials=discarded, seed=int(seed),
                        sd_product=float(prod.std(ddof=ddof)), sd_risk=float(risk.std(ddof=ddof)),
                        min_pair_distance=float(min(r.min_pair_distance for r in done)),
                        hard_failures=sum(r.hard_failure for r in done))


def dataset_header(n_m: int) -> list[str]:
    return [f"l{k + 1}" for k in range(n_m)] + ["x_product", "x_risk", "n_trials", "discarded", "seed"]


def _row(rec: SampleRecord) -> list[str]:
    return ([repr(float(v)) for v in rec.thresholds]
            + [repr(rec.x_product), repr(rec.x_risk), str(rec.n_trials),
               str(rec.discarded_trials), str(rec.seed)])


def collect_dataset(scene: SceneConfig, n_samples: int, n_trials: int, seed: int,
                    out_path=None, jobs: int = 1, common_trials: bool = False) -> list[SampleRecord]:
    """Run batches at thresholds drawn uniformly from ``[0, l_max]^N_m``.

    Rows go to ``out_path`` as they finish. With ``common_trials`` every sample
    reuses the same trial seeds, so rows differ only through the thresholds.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    th_seq, batch_seq = np.random.SeedSequence(int(seed)).spawn(2)
    thresholds = np.random.default_rng(th_seq).uniform(
        0.0, scene.l_max, size=(n_samples, scene.n_manufacturing))
    batch_seeds = batch_seq.generate_state(n_samples)
    if common_trials:
        batch_seeds[:] = batch_seeds[0]
    records = []
    fh = None
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fh = open(out_path, "w", newline="")
        fh.write(f"# {DATASET_FORMAT}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_header(scene.n_manufacturing))
        fh.flush()
    try:
        for j in range(n_samples):
            rec = run_batch(scene, thresholds[j], n_trials, int(batch_seeds[j]), jobs=jobs)
            records.append(rec)
            if fh is not None:
                writer.writerow(_row(rec))
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return records


def read_dataset(path) -> list[SampleRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {DATASET_FORMAT}":
            raise ConfigurationError(f"{path}: expected header '# {DATASET_FORMAT}', got {first!r}")
        reader = csv.reader(fh)
        header = next(reader)
        n_m = sum(h.startswith("l") for h in header)
        if header != dataset_header(n_m):
            raise ConfigurationError(f"{path}: unexpected columns {header}")
        out = []
        for line, row in enumerate(reader, start=3):
            if not row:
                continue
            try:
                out.append(SampleRecord(thresholds=[float(v) for v in row[:n_m]],
                                        x_product=float(row[n_m]), x_risk=float(row[n_m + 1]),
                                        n_trials=int(row[n_m + 2]), discarded_trials=int(row[n_m + 3]),
                                        seed=int(row[n_m + 4])))
            except (ValueError, IndexError) as exc:
                raise ConfigurationError(f"{path}:{line}: malformed row ({exc})") from None
    return out


def benchmark_modes(scene: SceneConfig, n_trials: int, seed: int, jobs: int = 1) -> dict:
    """Records for the non-continuous, always-recovery and always-manufacturing modes.

    All three share trial seeds, so each mode sees the same drops and start phases.
    """
    zeros = np.zeros(scene.n_manufacturing)
    return {mode: run_batch(scene, zeros, n_trials, seed, mode=mode, jobs=jobs)
            for mode in (NON_CONTINUOUS, RECOVERY_FIRST, MANUFACTURING_FIRST)}


# ----------------------------------------------------------------------------
# scripted interaction replay
# ----------------------------------------------------------------------------

def piecewise_linear(times, points):
    """Reference ``t -> (position, velocity)`` through ``points`` at ``times``, held at the ends."""
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)

    def ref(t):
        if t <= times[0]:
            return points[0].copy(), np.zeros(3)
        if t >= times[-1]:
            return points[-1].copy(), np.zeros(3)
        k = int(np.searchsorted(times, t, side="right")) - 1
        span = times[k + 1] - times[k]
        vel = (points[k + 1] - points[k]) / span
        return points[k] + vel * (t - times[k]), vel

    return ref


def track_references(scene: SceneConfig, thresholds, q0, references, duration: float,
                     avoid_collisions: bool = True) -> dict:
    """Drive every robot's impedance controller along a moving reference.

    ``references[i]`` maps time to ``(x_d, xdot_d)``. Returns time, positions
    (ticks x robots x 3) and the priority values used at each tick.
    """
    th = _check_thresholds(scene, thresholds)
    models = scene.models
    r_idx = scene.recovery_index
    m_idx = scene.manufacturing_indices
    ik = PriorityIK(models, r_idx, m_idx, scene.priority.with_thresholds(th), scene.collision,
                    QPSolver(tol=scene.qp_tol, max_iter=scene.qp_max_iter))
    ik.avoid_collisions = avoid_collisions
    q = [np.array(qi, dtype=float) for qi in q0]
    frames = [ee_frame(m, qi) for m, qi in zip(models, q)]
    states = []
    for i, f in enumerate(frames):
        x_d, v_d = references[i](0.0)
        states.append(ImpedanceState(x=f[1].copy(), xdot=v_d.copy(), x_d=x_d, xdot_d=v_d))
    refs = [spec.reference_orientation for spec in scene.robots]
    # the priority argument is the distance to where the reference ends
    final = {m: references[m](np.inf)[0] for m in m_idx}
    n_ticks = int(round(duration / scene.dt))
    ts = np.arange(n_ticks + 1) * scene.dt
    pos = np.empty((n_ticks + 1, len(models), 3))
    prios = np.empty((n_ticks, len(m_idx)), dtype=int)
    pos[0] = [f[1] for f in frames]
    for tick in range(n_ticks):
        t = ts[tick]
        twists = []
        for i, (R, p, _) in enumerate(frames):
            s = states[i]
            s.x = p
            s.x_d, s.xdot_d = references[i](t)
            v = impedance_step(s, scene.robots[i].impedance, scene.dt)
            w = orientation_hold(quat_from_matrix(R), refs[i], scene.orientation_gain)
            twists.append(np.concatenate([v, w]))
        positions = [f[1] for f in frames]
        p = ik.priorities(positions, final)
        prios[tick] = p
        qdot = ik.solve(frames, twists, p).qdot
        for i in range(len(models)):
            q[i] = q[i] + qdot[ik.offsets[i]:ik.offsets[i + 1]] * scene.dt
        frames = [ee_frame(m, qi) for m, qi in zip(models, q)]
        pos[tick + 1] = [f[1] for f in frames]
    return {"t": ts, "positions": pos, "priorities": prios}


@dataclass
class ReplayScript:
    """Timing of the two-collision scenario (seconds, metres)."""

    start_height: float = 0.3
    descent_time: float = 10.0
    target: tuple = (0.1, 0.0, 0.2)
    standoff: float = 0.3
    contact_gap: float = 0.08
    first_contact: tuple = (0.0, 1.0, 2.6, 3.0, 4.0)
    second_contact: tuple = (5.0, 6.0, 7.6, 8.0, 9.0)
    approach_gap: float = 0.16
    settle: float = 4.0


def interaction_replay(scene: SceneConfig, l_bar: float = 0.15, script: ReplayScript | None = None,
                       avoid_collisions: bool = True) -> dict:
    """Two-robot scenario with one collision above and one below the threshold height.

    The manufacturing robot descends vertically onto its target. The recovery
    robot twice moves in beside it and pushes ``contact_gap`` metres toward it,
    first while the manufacturing robot is above ``l_bar`` from its target and
    then while it is below. Returns the tracked log plus the window indices.
    """
    if scene.n_manufacturing != 1:
        raise ConfigurationError("the replay scenario needs exactly one manufacturing robot")
    sc = script or ReplayScript()
    r_idx = scene.recovery_index
    m_idx = scene.manufacturing_indices[0]
    target = np.asarray(sc.target, dtype=float)
    top = target + [0.0, 0.0, sc.start_height]
    m_ref = piecewise_linear([0.0, sc.descent_time], [top, target])
    side = np.array([-1.0, 0.0, 0.0])

    offsets_t = [0.0]
    offsets_v = [sc.standoff]
    for ts in (sc.first_contact, sc.second_contact):
        offsets_t += list(ts)
        offsets_v += [sc.standoff, sc.approach_gap, sc.contact_gap, sc.contact_gap, sc.standoff]
    gap = piecewise_linear(offsets_t, np.column_stack([offsets_v, np.zeros((len(offsets_v), 2))]))

    def r_ref(t):
        x_m, v_m = m_ref(t)
        g, dg = gap(t)
        return x_m + g[0] * side, v_m + dg[0] * side

    from .scene import inverse_kinematics
    from .kinematics import quat_to_matrix

    q0 = [None] * len(scene.robots)
    for i, start in ((m_idx, top), (r_idx, r_ref(0.0)[0])):
        spec = scene.robots[i]
        q, err = inverse_kinematics(spec.model, start, quat_to_matrix(spec.reference_orientation),
                                    q0=spec.start_configs[0])
        if err > 1e-8:
            raise ConfigurationError(f"replay start for {spec.name} unreachable ({err:.1e})")
        q0[i] = q
    refs = [None] * len(scene.robots)
    refs[m_idx] = m_ref
    refs[r_idx] = r_ref
    duration = sc.second_contact[-1] + sc.settle
    out = track_references(scene, [l_bar], q0, refs, duration, avoid_collisions)
    dt = scene.dt
    out["windows"] = {"above": (int(sc.first_contact[1] / dt), int(sc.first_contact[4] / dt)),
                      "below": (int(sc.second_contact[1] / dt), int(sc.second_contact[4] / dt))}
    out["recovery_index"] = r_idx
    out["manufacturing_index"] = m_idx
    out["references"] = refs
    return out

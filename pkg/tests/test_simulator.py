import copy

import numpy as np
import pytest

from hrc_priority.errors import ConfigurationError, SceneError
from hrc_priority.kinematics import ee_frame
from hrc_priority.simulator import (MANUFACTURING_FIRST, NON_CONTINUOUS, RECOVERY_FIRST,
                                    ReplayScript, collect_dataset, interaction_replay,
                                    piecewise_linear, read_dataset, run_batch, run_trial,
                                    trial_seed)


def home_position(scene):
    spec = scene.robots[scene.recovery_index]
    return ee_frame(spec.model, spec.home_q)[1]


def test_drop_at_home_finishes_immediately(preliminary_scene):
    res = run_trial(preliminary_scene, [0.2], seed=1, drop_position=home_position(preliminary_scene))
    assert res.risk_time == 0.0
    assert not res.deadlocked
    assert res.tasks_completed.tolist() == [0]


def test_trial_is_deterministic(default_scene):
    a = run_trial(default_scene, [0.1, 0.2, 0.3], seed=42)
    b = run_trial(default_scene, [0.1, 0.2, 0.3], seed=42)
    assert a.risk_time == b.risk_time
    np.testing.assert_array_equal(a.tasks_completed, b.tasks_completed)
    np.testing.assert_array_equal(a.drop_position, b.drop_position)
    c = run_trial(default_scene, [0.1, 0.2, 0.3], seed=43)
    assert not np.array_equal(a.drop_position, c.drop_position)


def test_completion_counts_match_logged_events(default_scene):
    res = run_trial(default_scene, [0.5, 0.5, 0.5], seed=3, log_trajectory=True)
    log = res.trajectory_log
    per_robot = np.bincount([k for _, k, _ in log["events"]], minlength=3)
    np.testing.assert_array_equal(per_robot, res.tasks_completed)
    assert log["positions"].shape == (len(log["t"]), 4, 3)
    assert log["t"][-1] == pytest.approx(res.risk_time)


def test_logged_distances_respect_security_distance(default_scene):
    res = run_trial(default_scene, [0.25, 0.25, 0.25], seed=8, log_trajectory=True)
    P = res.trajectory_log["positions"]
    r = default_scene.recovery_index
    d = np.linalg.norm(P[:, default_scene.manufacturing_indices] - P[:, [r]], axis=2)
    assert d.min() >= default_scene.collision.d_s - 0.01
    assert res.min_pair_distance >= default_scene.collision.d_s - 0.01
    assert not res.hard_failure


def test_priority_follows_threshold(preliminary_scene):
    res = run_trial(preliminary_scene, [0.0], seed=5, log_trajectory=True)
    assert np.all(res.trajectory_log["priorities"] == 1)
    res = run_trial(preliminary_scene, [0.5], seed=5, log_trajectory=True)
    assert np.all(res.trajectory_log["priorities"] == 0)


def test_fixed_modes_pin_priority(preliminary_scene):
    for mode, p in ((RECOVERY_FIRST, 1), (MANUFACTURING_FIRST, 0)):
        res = run_trial(preliminary_scene, [0.3], seed=2, mode=mode, log_trajectory=True)
        assert np.all(res.trajectory_log["priorities"] == p)


def test_non_continuous_freezes_manufacturing(preliminary_scene):
    res = run_trial(preliminary_scene, [0.0], seed=2, mode=NON_CONTINUOUS, log_trajectory=True)
    P = res.trajectory_log["positions"]
    m = preliminary_scene.manufacturing_indices[0]
    assert np.ptp(P[:, m], axis=0).max() < 1e-12
    assert res.tasks_completed.tolist() == [0]


def test_zero_stiffness_manufacturing_stays_idle(preliminary_scene):
    src = copy.deepcopy(preliminary_scene.source)
    m = preliminary_scene.manufacturing_indices[0]
    src["robots"][m]["impedance"]["stiffness"] = [0.0, 0.0, 0.0]
    scene = preliminary_scene.override(robots=src["robots"])
    res = run_trial(scene, [0.0], seed=4)
    assert res.tasks_completed.tolist() == [0]
    assert not res.deadlocked


def test_batch_of_one(preliminary_scene):
    rec = run_batch(preliminary_scene, [0.2], n_trials=1, seed=9)
    assert rec.n_trials == 1
    assert rec.sd_product == 0.0 and rec.sd_risk == 0.0
    single = run_trial(preliminary_scene, [0.2], trial_seed(9, 0))
    assert rec.x_risk == single.risk_time


def test_deadlocks_are_discarded_then_fatal(preliminary_scene):
    scene = preliminary_scene.override(trial_timeout=0.05)
    res = run_trial(scene, [0.2], seed=1)
    assert res.deadlocked
    with pytest.raises(SceneError):
        run_batch(scene, [0.2], n_trials=2, seed=1)


def test_trial_seeds_distinct():
    seeds = {trial_seed(7, k) for k in range(1000)}
    assert len(seeds) == 1000
    assert trial_seed(7, 3) == trial_seed(7, 3)


def test_scalar_threshold_broadcasts(default_scene):
    rec = run_batch(default_scene, 0.2, n_trials=1, seed=0)
    np.testing.assert_array_equal(rec.thresholds, [0.2, 0.2, 0.2])


@pytest.mark.parametrize("th", [[0.1, 0.2], [0.6, 0.1, 0.1], [np.nan, 0.1, 0.1]])
def test_threshold_validation(default_scene, th):
    with pytest.raises(ConfigurationError):
        run_trial(default_scene, th, seed=0)


def test_unknown_mode_rejected(preliminary_scene):
    with pytest.raises(ConfigurationError):
        run_trial(preliminary_scene, [0.1], seed=0, mode="fastest")


def test_dataset_round_trip(tmp_path, preliminary_scene):
    path = tmp_path / "data.csv"
    recs = collect_dataset(preliminary_scene, n_samples=3, n_trials=2, seed=4, out_path=path)
    back = read_dataset(path)
    assert len(back) == 3
    for a, b in zip(recs, back):
        np.testing.assert_array_equal(a.thresholds, b.thresholds)
        assert (a.x_product, a.x_risk, a.n_trials, a.seed) == (b.x_product, b.x_risk, b.n_trials, b.seed)
    assert path.read_text().startswith("# hrc-dataset/1\nl1,x_product,x_risk,n_trials,discarded,seed\n")


def test_common_trials_share_batch_seed(preliminary_scene):
    recs = collect_dataset(preliminary_scene, n_samples=2, n_trials=1, seed=4, common_trials=True)
    assert recs[0].seed == recs[1].seed


def test_read_dataset_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        read_dataset(p)


def test_piecewise_linear_reference():
    ref = piecewise_linear([0.0, 1.0, 3.0], [[0, 0, 0], [1, 0, 0], [1, 2, 0]])
    x, v = ref(0.5)
    np.testing.assert_allclose(x, [0.5, 0, 0])
    np.testing.assert_allclose(v, [1, 0, 0])
    x, v = ref(2.0)
    np.testing.assert_allclose(x, [1, 1, 0])
    np.testing.assert_allclose(v, [0, 1, 0])
    x, v = ref(10.0)
    np.testing.assert_allclose(x, [1, 2, 0])
    assert np.all(v == 0)


@pytest.fixture(scope="module")
def replay(preliminary_scene):
    return interaction_replay(preliminary_scene), interaction_replay(preliminary_scene, avoid_collisions=False)


def replay_errors(replay):
    live, solo = replay
    err = np.linalg.norm(live["positions"] - solo["positions"], axis=2)
    return live, err


def test_replay_priority_flips_at_threshold_height(replay):
    live, _ = replay_errors(replay)
    (a0, a1), (b0, b1) = live["windows"]["above"], live["windows"]["below"]
    assert np.all(live["priorities"][a0:a1] == 1)
    assert np.all(live["priorities"][b0:b1] == 0)


def test_replay_collision_above_threshold(replay):
    live, err = replay_errors(replay)
    r, m = live["recovery_index"], live["manufacturing_index"]
    a0, a1 = live["windows"]["above"]
    assert err[a0:a1, r].max() <= 1e-3
    assert err[a0:a1, m].max() >= 0.01


def test_replay_collision_below_threshold(replay):
    live, err = replay_errors(replay)
    r, m = live["recovery_index"], live["manufacturing_index"]
    b0, b1 = live["windows"]["below"]
    assert err[b0:b1, m].max() <= 1e-3
    assert err[b0:b1, r].max() >= 0.01


def test_replay_robots_reconverge(replay):
    live, err = replay_errors(replay)
    assert err[-1].max() <= 1e-3
    P = live["positions"]
    d = np.linalg.norm(P[:, live["recovery_index"]] - P[:, live["manufacturing_index"]], axis=1)
    assert d.min() >= 0.09


def test_replay_needs_single_manufacturing_robot(default_scene):
    with pytest.raises(ConfigurationError):
        interaction_replay(default_scene, script=ReplayScript())

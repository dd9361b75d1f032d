import math
from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarmfl import arena
from conftest import make_world


def test_unobstructed_robot_moves_straight():
    w = make_world([[2.5, 2.5]], headings=[0.0])
    arena.step_world(w)
    assert w.positions[0, 0] == pytest.approx(2.51, abs=1e-12)
    assert w.positions[0, 1] == 2.5


def test_robot_facing_wall_turns_in_place():
    w = make_world([[4.95, 2.5]], headings=[0.0])
    arena.step_world(w)
    assert np.array_equal(w.positions[0], [4.95, 2.5])
    turn = abs(arena.normalize_angle(w.headings[0]))
    assert math.pi / 4 <= turn <= 3 * math.pi / 4


def test_robot_ahead_blocks_motion():
    w = make_world([[2.0, 2.0], [2.12, 2.0]], headings=[0.0, math.pi / 2])
    arena.step_world(w)
    assert np.array_equal(w.positions[0], [2.0, 2.0])


def test_world_replay_is_bit_identical():
    cfg = arena.WorldConfig(rng_seed=11)
    a, b = arena.init_world(cfg), arena.init_world(cfg)
    for _ in range(50_000):
        arena.step_world(a)
        arena.step_world(b)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.headings, b.headings)


def test_robots_stay_inside_and_out_of_obstacles():
    w = arena.init_world(arena.WorldConfig(rng_seed=3))
    obs = w.obstacles
    for _ in range(5000):
        arena.step_world(w)
        assert np.all((w.positions >= 0) & (w.positions <= 5.0))
    d = np.hypot(*(w.positions[:, None, :] - obs.cylinders[None]).transpose(2, 0, 1))
    assert np.all(d > obs.cylinder_radius)


def test_init_world_is_seeded():
    a = arena.init_world(arena.WorldConfig(rng_seed=5))
    b = arena.init_world(arena.WorldConfig(rng_seed=5))
    c = arena.init_world(arena.WorldConfig(rng_seed=6))
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_config_validation():
    with pytest.raises(ValueError):
        arena.WorldConfig(tick=0.3)
    with pytest.raises(ValueError):
        arena.WorldConfig(n_robots=0)


# sensing


def test_pair_one_metre_apart_sense_each_other():
    w = make_world([[1.0, 1.0], [2.0, 1.0]])
    (j, r, _), = arena.sense_neighbors(w, 0)
    assert j == 1 and r == pytest.approx(1.0)
    (j, r, _), = arena.sense_neighbors(w, 1)
    assert j == 0 and r == pytest.approx(1.0)


def test_pair_beyond_range_sense_nothing():
    w = make_world([[1.0, 1.0], [3.6, 1.0]])
    assert arena.sense_neighbors(w, 0) == []
    assert arena.sense_neighbors(w, 1) == []


def test_line_of_robots_matches_pairwise_oracle():
    pos = [[0.2 + k, 0.5] for k in range(15)]
    w = make_world(pos, side=16.0)
    for i in range(15):
        got = [j for j, _, _ in arena.sense_neighbors(w, i)]
        want = [j for j in range(15) if j != i and math.dist(pos[i], pos[j]) <= 2.5]
        assert got == want


def test_bearing_is_relative_to_heading():
    w = make_world([[1.0, 1.0], [1.0, 2.0]], headings=[math.pi / 2, 0.0])
    (_, _, bearing), = arena.sense_neighbors(w, 0)
    assert bearing == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_sensing_is_reciprocal(seed):
    rng = np.random.default_rng(seed)
    w = make_world(rng.uniform(0, 5, (8, 2)), headings=rng.uniform(-3, 3, 8))
    in_range, ranges, _ = arena.sense_all(w)
    assert np.array_equal(in_range, in_range.T)
    assert np.allclose(ranges, ranges.T, atol=1e-9)
    for i in range(8):
        assert [j for j, _, _ in arena.sense_neighbors(w, i)] == list(np.flatnonzero(in_range[i]))


# trajectory recording


@dataclass
class Recorderbot:
    pose: arena.Pose
    recorder: arena.TrajectoryRecorder
    dataset: arena.LocalDataset = field(default_factory=arena.LocalDataset)


def _bot(n=3):
    return Recorderbot(arena.Pose(0.0, 0.0, 0.0), arena.TrajectoryRecorder(n))


def test_ten_consecutive_sightings_give_one_sample():
    bot = _bot()
    for t in range(10):
        arena.record_trajectories(bot, [(1, 1.0 + 0.1 * t, 0.0)], float(t))
    assert len(bot.dataset) == 1
    s = bot.dataset.samples[0]
    assert s.subject_id == 1 and s.positions.shape == (10, 2) and s.collected_at == 9.0
    assert np.allclose(s.positions[:, 0], 1.0 + 0.1 * np.arange(10))


def test_interrupted_window_is_discarded():
    bot = _bot()
    for t in range(7):
        arena.record_trajectories(bot, [(1, 1.0, 0.0)], float(t))
    arena.record_trajectories(bot, [], 7.0)
    assert len(bot.dataset) == 0
    assert bot.recorder.count[1] == 0
    # a fresh window needs ten new sightings
    for t in range(8, 17):
        arena.record_trajectories(bot, [(1, 1.0, 0.0)], float(t))
    assert len(bot.dataset) == 0
    arena.record_trajectories(bot, [(1, 1.0, 0.0)], 17.0)
    assert len(bot.dataset) == 1


@given(st.lists(st.lists(st.booleans(), min_size=3, max_size=3), min_size=0, max_size=60))
def test_window_count_matches_run_length_oracle(presence):
    bot = _bot(4)
    for t, seen in enumerate(presence):
        sensed = [(j + 1, 1.0, 0.5) for j in range(3) if seen[j]]
        arena.record_trajectories(bot, sensed, float(t))
    want = 0
    for j in range(3):
        run = 0
        for seen in presence:
            run = run + 1 if seen[j] else 0
            if run == 10:
                want += 1
                run = 0
    assert len(bot.dataset) == want
    assert all(s.positions.shape == (10, 2) for s in bot.dataset.samples)


def test_two_neighbours_twenty_seconds_give_four_samples():
    bot = _bot()
    for t in range(20):
        arena.record_trajectories(bot, [(1, 1.0, 0.0), (2, 2.0, 1.0)], float(t))
    assert len(bot.dataset) == 4


def test_positions_are_absolute():
    bot = Recorderbot(arena.Pose(1.0, 2.0, math.pi / 2), arena.TrajectoryRecorder(2))
    for t in range(10):
        arena.record_trajectories(bot, [(1, 1.0, 0.0)], float(t))
    assert np.allclose(bot.dataset.samples[0].positions, [[1.0, 3.0]] * 10)


# expiration


def _ds(times, expiration=750.0):
    return arena.LocalDataset([arena.TrajectorySample(0, np.zeros((10, 2)), float(t)) for t in times], expiration)


def test_expire_keeps_recent_samples():
    d = arena.expire(_ds([0, 400]), 500.0)
    assert [s.collected_at for s in d.samples] == [0.0, 400.0]
    d = arena.expire(_ds([0, 400]), 800.0)
    assert [s.collected_at for s in d.samples] == [400.0]


@given(st.lists(st.floats(0, 5000), max_size=100), st.floats(0, 6000), st.floats(0, 2000))
def test_expire_matches_filter_and_is_idempotent(times, now, expiration):
    d = arena.expire(_ds(times, expiration), now)
    want = [t for t in times if now - t <= expiration]
    assert [s.collected_at for s in d.samples] == want
    before = list(d.samples)
    assert arena.expire(d, now).samples == before

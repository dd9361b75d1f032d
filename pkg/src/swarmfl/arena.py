"""Discrete-time kinematic arena: motion, avoidance, sensing, data collection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROBOT_RADIUS = 0.035
N_RAYS = 8
RAY_RANGE = 0.15
# only the rays at -45, 0, +45 degrees gate forward motion (see step_world)
FRONT_RAYS = (7, 0, 1)


@dataclass(frozen=True)
class WorldConfig:
    arena_side: float = 5.0
    n_robots: int = 15
    n_cylinders: int = 5
    cylinder_radius: float = 0.15
    n_boxes: int = 5
    box_side: float = 0.3
    duration: float = 5000.0
    tick: float = 0.1
    comm_range: float = 2.5
    robot_speed: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.arena_side <= 0:
            raise ValueError("arena_side must be positive")
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        if self.tick <= 0 or self.duration < 0:
            raise ValueError("tick must be positive and duration non-negative")
        if not _divides(self.tick, 1.0):
            raise ValueError("tick must divide the 1 s sampling period")

    @property
    def tick_ms(self) -> int:
        return int(round(self.tick * 1000))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.tick))


def _divides(step: float, period: float) -> bool:
    ratio = period / step
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


@dataclass
class Pose:
    x: float
    y: float
    heading: float


def normalize_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass
class Obstacles:
    cylinders: np.ndarray  # (C, 2) centers
    cylinder_radius: float
    boxes: np.ndarray  # (K, 2) centers of axis-aligned squares
    box_half: float


@dataclass
class WorldState:
    config: WorldConfig
    positions: np.ndarray  # (n, 2)
    headings: np.ndarray  # (n,)
    obstacles: Obstacles
    rng: np.random.Generator
    tick_index: int = 0

    @property
    def now(self) -> float:
        return self.tick_index * self.config.tick

    def pose(self, robot: int) -> Pose:
        x, y = self.positions[robot]
        return Pose(float(x), float(y), float(self.headings[robot]))


def _clearance_ok(p, cylinders, c_r, boxes, b_half, margin):
    if len(cylinders) and np.any(np.hypot(*(cylinders - p).T) < c_r + margin):
        return False
    if len(boxes):
        d = np.abs(boxes - p)
        if np.any((d[:, 0] < b_half + margin) & (d[:, 1] < b_half + margin)):
            return False
    return True


def init_world(cfg: WorldConfig) -> WorldState:
    """Place obstacles and robots by rejection sampling.

    Obstacles are fully inside the arena and do not overlap each other;
    robots spawn clear of obstacles, walls and each other by at least one
    ray range, so no robot starts with an obstructed sensor.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    side = cfg.arena_side
    c_r, b_half = cfg.cylinder_radius, cfg.box_side / 2
    placed: list[tuple[np.ndarray, float]] = []  # (center, bounding radius)

    def sample_obstacle(extent):
        for _ in range(10_000):
            p = rng.uniform(extent, side - extent, size=2)
            if all(np.hypot(*(p - q)) >= extent + r for q, r in placed):
                return p
        raise RuntimeError("could not place obstacle")

    cylinders = []
    for _ in range(cfg.n_cylinders):
        p = sample_obstacle(c_r)
        cylinders.append(p)
        placed.append((p, c_r))
    boxes = []
    box_bound = b_half * math.sqrt(2)
    for _ in range(cfg.n_boxes):
        p = sample_obstacle(box_bound)
        boxes.append(p)
        placed.append((p, box_bound))
    cylinders = np.array(cylinders).reshape(-1, 2)
    boxes = np.array(boxes).reshape(-1, 2)

    margin = ROBOT_RADIUS + RAY_RANGE
    positions = []
    for _ in range(cfg.n_robots):
        for _ in range(100_000):
            p = rng.uniform(margin, side - margin, size=2)
            if not _clearance_ok(p, cylinders, c_r, boxes, b_half, margin):
                continue
            if all(np.hypot(*(p - q)) >= 2 * ROBOT_RADIUS + RAY_RANGE for q in positions):
                break
        else:
            raise RuntimeError("could not place robot")
        positions.append(p)
    headings = rng.uniform(-np.pi, np.pi, size=cfg.n_robots)
    return WorldState(
        config=cfg,
        positions=np.array(positions, dtype=np.float64).reshape(-1, 2),
        headings=normalize_angle(headings),
        obstacles=Obstacles(cylinders, c_r, boxes, b_half),
        rng=rng,
    )


def _segment_circle_hit(p0, d, centers, radius):
    """Rays from p0 (P,2) along d (P,k,2) against circles (P,2) -> (P,k)."""
    rel = centers[:, None, :] - p0[:, None, :]
    t = np.clip(np.sum(rel * d, axis=-1) / (RAY_RANGE * RAY_RANGE), 0.0, 1.0)
    gap = rel - t[..., None] * d
    return np.sum(gap * gap, axis=-1) <= radius * radius


def _segment_box_hit(p0, d, centers, half):
    """Slab test of rays against axis-aligned squares, pairwise -> (P,k)."""
    o = p0[:, None, :]
    lo = (centers - half)[:, None, :]
    hi = (centers + half)[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # axis-parallel ray: no hit outside the slab, unbounded inside
    par = d == 0.0
    if par.any():
        inside = (o >= lo) & (o <= hi)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    enter = np.max(tmin, axis=-1)
    leave = np.min(tmax, axis=-1)
    return (enter <= leave) & (leave >= 0.0) & (enter <= 1.0)


def _near_pairs(pos, centers, reach):
    delta = pos[:, None, :] - centers[None, :, :]
    close = np.einsum("ijc,ijc->ij", delta, delta) <= reach * reach
    return np.nonzero(close)


def ray_hits(world: WorldState, rays=tuple(range(N_RAYS))) -> np.ndarray:
    """Boolean (n, len(rays)) matrix: which proximity rays touch something."""
    cfg = world.config
    pos, head = world.positions, world.headings
    n = len(pos)
    offsets = np.asarray(rays) * (2 * np.pi / N_RAYS)
    angles = head[:, None] + offsets[None, :]
    d = RAY_RANGE * np.stack([np.cos(angles), np.sin(angles)], axis=-1)  # (n,k,2)
    end = pos[:, None, :] + d
    hits = np.any((end < 0.0) | (end > cfg.arena_side), axis=-1)
    obs = world.obstacles
    # broad phase: only bodies whose bounding circle is within ray reach
    if len(obs.cylinders):
        i, m = _near_pairs(pos, obs.cylinders, RAY_RANGE + obs.cylinder_radius)
        if len(i):
            hits[i] |= _segment_circle_hit(pos[i], d[i], obs.cylinders[m], obs.cylinder_radius)
    if len(obs.boxes):
        i, m = _near_pairs(pos, obs.boxes, RAY_RANGE + obs.box_half * math.sqrt(2))
        if len(i):
            np.logical_or.at(hits, i, _segment_box_hit(pos[i], d[i], obs.boxes[m], obs.box_half))
    if n > 1:
        i, j = _near_pairs(pos, pos, RAY_RANGE + ROBOT_RADIUS)
        keep = i != j
        i, j = i[keep], j[keep]
        if len(i):
            np.logical_or.at(hits, i, _segment_circle_hit(pos[i], d[i], pos[j], ROBOT_RADIUS))
    return hits


def step_world(world: WorldState, tick: float | None = None) -> WorldState:
    """Advance every robot one tick (in place; the state is returned).

    A robot whose forward rays detect a wall, obstacle or robot turns on the
    spot by a random angle in [pi/4, 3pi/4] (random side); otherwise it
    drives straight at ``robot_speed``.
    """
    cfg = world.config
    dt = cfg.tick if tick is None else tick
    if dt <= 0:
        raise ValueError("tick must be positive")
    n = len(world.positions)
    blocked = ray_hits(world, FRONT_RAYS).any(axis=1)
    # draw for every robot every tick so the stream does not depend on outcomes
    mag = world.rng.uniform(np.pi / 4, 3 * np.pi / 4, size=n)
    side = np.where(world.rng.random(n) < 0.5, -1.0, 1.0)
    step = cfg.robot_speed * dt
    h = world.headings
    move = ~blocked
    world.positions[:, 0] += np.where(move, step * np.cos(h), 0.0)
    world.positions[:, 1] += np.where(move, step * np.sin(h), 0.0)
    np.clip(world.positions, 0.0, cfg.arena_side, out=world.positions)
    world.headings = np.where(blocked, normalize_angle(h + side * mag), h)
    world.tick_index += 1
    return world


def sense_all(world: WorldState):
    """Range/bearing sensing for every robot at once.

    Returns (in_range (n,n) bool, ranges (n,n), bearings (n,n)); the
    diagonal is never in range. Bearings are relative to each robot's heading.
    """
    pos = world.positions
    delta = pos[None, :, :] - pos[:, None, :]
    ranges = np.hypot(delta[..., 0], delta[..., 1])
    in_range = ranges <= world.config.comm_range
    np.fill_diagonal(in_range, False)
    bearings = normalize_angle(np.arctan2(delta[..., 1], delta[..., 0]) - world.headings[:, None])
    return in_range, ranges, bearings


def sense_neighbors(world: WorldState, robot: int) -> list[tuple[int, float, float]]:
    """Robots within comm_range of ``robot`` as (id, range, bearing)."""
    pos = world.positions
    delta = pos - pos[robot]
    rng = np.hypot(delta[:, 0], delta[:, 1])
    out = []
    for j in np.flatnonzero(rng <= world.config.comm_range):
        if j == robot:
            continue
        bearing = normalize_angle(math.atan2(delta[j, 1], delta[j, 0]) - world.headings[robot])
        out.append((int(j), float(rng[j]), float(bearing)))
    return out


# --------------------------------------------------------------------------
# trajectory data


@dataclass(frozen=True)
class TrajectorySample:
    subject_id: int
    positions: np.ndarray  # (L, 2)
    collected_at: float


@dataclass
class LocalDataset:
    samples: list[TrajectorySample] = field(default_factory=list)
    expiration: float = 750.0

    def __len__(self):
        return len(self.samples)

    def positions(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 0, 2))
        return np.stack([s.positions for s in self.samples])


def expire(dataset: LocalDataset, now: float) -> LocalDataset:
    """Drop samples older than the expiration window (in place)."""
    dataset.samples = [s for s in dataset.samples if now - s.collected_at <= dataset.expiration]
    return dataset


class TrajectoryRecorder:
    """Per-robot 1 Hz recording of neighbours' absolute positions.

    One window per neighbour. A window that reaches ``length`` points becomes
    a sample and a fresh window starts at the next sampling instant; a
    neighbour missing at any instant wipes its partial window.
    """

    def __init__(self, n_robots: int, length: int = 10):
        self.length = length
        self.buffer = np.zeros((n_robots, length, 2))
        self.count = np.zeros(n_robots, dtype=np.int64)

    def record(self, pose: Pose, ids, ranges, bearings, now: float) -> list[TrajectorySample]:
        ids = np.asarray(ids, dtype=np.int64)
        seen = np.zeros(len(self.count), dtype=bool)
        seen[ids] = True
        self.count[~seen] = 0
        if len(ids) == 0:
            return []
        a = pose.heading + np.asarray(bearings)
        r = np.asarray(ranges)
        k = self.count[ids]
        self.buffer[ids, k, 0] = pose.x + r * np.cos(a)
        self.buffer[ids, k, 1] = pose.y + r * np.sin(a)
        self.count[ids] = k + 1
        done = []
        for j in ids[k + 1 == self.length]:
            done.append(TrajectorySample(int(j), self.buffer[j].copy(), now))
            self.count[j] = 0
        return done


def record_trajectories(robot, sensed, now: float) -> list[TrajectorySample]:
    """Feed one sampling instant into ``robot``'s recorder and dataset.

    ``robot`` is anything with ``pose``, ``recorder`` and ``dataset``
    attributes; ``sensed`` is the output of
    sense_neighbors. Returns the samples completed now.
    """
    ids = [j for j, _, _ in sensed]
    ranges = [r for _, r, _ in sensed]
    bearings = [b for _, _, b in sensed]
    new = robot.recorder.record(robot.pose, ids, ranges, bearings, now)
    robot.dataset.samples.extend(new)
    return new

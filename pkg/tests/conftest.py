import numpy as np
import pytest
from hypothesis import settings

from swarmfl import arena

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_world(positions, headings=None, side=5.0, comm_range=2.5, seed=0, speed=0.1, tick=0.1):
    """World with hand-placed robots and no obstacles."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    cfg = arena.WorldConfig(arena_side=side, n_robots=n, n_cylinders=0, n_boxes=0,
                            comm_range=comm_range, robot_speed=speed, tick=tick, rng_seed=seed)
    h = np.zeros(n) if headings is None else np.asarray(headings, dtype=np.float64)
    empty = np.zeros((0, 2))
    obs = arena.Obstacles(empty, cfg.cylinder_radius, empty, cfg.box_side / 2)
    return arena.WorldState(cfg, pos.copy(), h.copy(), obs, np.random.default_rng(seed))


@pytest.fixture
def world_factory():
    return make_world


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            for key, value in getattr(rep, "user_properties", ()):
                if key == "acceptance" and getattr(rep, "when", "call") == "call":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda text: int(text[1:3])):
            terminalreporter.write_line(line)

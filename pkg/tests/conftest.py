import sys
from dataclasses import replace

import pytest

from marlnav import sim
from marlnav.config import ScenarioConfig

THREE_LANES = ((1.0, 1.0, 0.0), (1.0, 2.0, 0.0), (1.0, 3.0, 0.0))
LANE_GOALS = ((3.2, 1.0, 0.3), (3.2, 2.0, 0.3), (3.2, 3.0, 0.3))


def quiet(scenario: ScenarioConfig) -> ScenarioConfig:
    """Same scenario with every noise source switched off."""
    return replace(scenario, lidar=replace(scenario.lidar, noise_sigma=0.0), odom_drift=0.0, start_jitter=0.0)


@pytest.fixture
def lanes():
    return ScenarioConfig("lanes", THREE_LANES, LANE_GOALS)


@pytest.fixture
def quiet_lanes(lanes):
    return quiet(lanes)


def single(x=3.0, y=2.0, th=0.0, obstacles=(), goal=(5.0, 3.0, 0.3), noise=0.0):
    lidar = replace(sim.LidarConfig(), noise_sigma=noise)
    return ScenarioConfig("single", ((x, y, th),), (goal,), obstacles, lidar=lidar, odom_drift=0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    lines = {int(line.split()[1]): line for line in mod.RESULTS}
    terminalreporter.section("acceptance")
    for n in range(1, 10):
        terminalreporter.write_line(lines.get(n, f"[----] {n} not run (deselected or errored)"))

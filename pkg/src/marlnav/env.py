"""Multi-agent MDP over the simulator: joint observations, actions, rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .errors import EpisodeFinishedError, InvalidActionError

OBS_DIM = 17
N_DISCRETE_ACTIONS = 5

# index -> (v m/s, omega rad/s)
ACTION_TABLE = (
    (0.3, 0.0),   # forward
    (0.2, 0.6),   # arc left
    (0.2, -0.6),  # arc right
    (0.0, 0.8),   # spin left
    (0.0, -0.8),  # spin right
)


def action_decode(index) -> tuple[float, float]:
    if isinstance(index, (bool, np.bool_)) or not isinstance(index, (int, np.integer)):
        raise InvalidActionError(f"discrete action must be an int, got {index!r}")
    if not 0 <= index < N_DISCRETE_ACTIONS:
        raise InvalidActionError(f"action index {index} outside 0..{N_DISCRETE_ACTIONS - 1}")
    return ACTION_TABLE[index]


@dataclass(frozen=True)
class RewardConfig:
    base_mode: str = "progress"
    base_scale: float = 1.0
    joint_bonus: float = 100.0
    individual_bonus: float = 10.0
    collision_penalty: float = -1.0
    step_penalty: float = -0.01

    def problems(self) -> list[str]:
        out = []
        if self.base_mode not in ("progress", "distance_moved"):
            out.append(f"reward.base_mode must be 'progress' or 'distance_moved', got {self.base_mode!r}")
        if not self.joint_bonus > self.individual_bonus > 0 > self.collision_penalty:
            out.append("reward ordering requires joint_bonus > individual_bonus > 0 > collision_penalty")
        return out


@dataclass
class StepResult:
    obs: np.ndarray
    rewards: list[float]
    done: bool
    success: bool
    events: list[dict] = field(default_factory=list)
    commands: list[tuple[float, float]] = field(default_factory=list)


def observe(world: sim.World) -> np.ndarray:
    """Joint observation, one row per robot: odometry (x, y) then lidar."""
    rows = [sense(world, r.id)[0] for r in world.robots]
    return np.asarray(rows, dtype=float)


def sense(world: sim.World, robot_id: int):
    """Observation row for one robot plus the raw (odom, lidar) readings."""
    body = world.robot(robot_id)
    odom = sim.read_odometry(body)
    lidar = sim.cast_lidar(world, robot_id)
    return np.concatenate([odom, lidar]), odom, lidar


def is_success(world: sim.World) -> bool:
    return all(sim.in_goal(world, r.id) for r in world.robots)


def compute_rewards(before: sim.World, after: sim.World, events, cfg: RewardConfig,
                    bonus_paid: list[bool] | None = None) -> list[float]:
    """Per-robot rewards for one cycle.

    ``bonus_paid`` latches the individual goal bonus; it is updated in place.
    """
    n = len(after.robots)
    if bonus_paid is None:
        bonus_paid = [False] * n
    hit = sim.colliding_robots(events)
    joint = is_success(after) and not is_success(before)
    rewards = []
    for i in range(n):
        if cfg.base_mode == "progress":
            base = sim.goal_distance(before, i) - sim.goal_distance(after, i)
        else:
            base = after.robots[i].distance_traveled - before.robots[i].distance_traveled
        r = cfg.base_scale * base + cfg.step_penalty
        if i in hit:
            r += cfg.collision_penalty
        if not bonus_paid[i] and sim.in_goal(after, i):
            bonus_paid[i] = True
            r += cfg.individual_bonus
        if joint:
            r += cfg.joint_bonus
        rewards.append(r)
    return rewards


class MultiRobotEnv:
    """Gym-style joint environment.

    The physical side is a *backend* (see :mod:`marlnav.backends`); the
    default is the in-process simulator driven through the emitter/receiver
    buffers. ``cycle_log`` receives one ``(cycle, event)`` pair per stage.
    """

    def __init__(self, scenario, backend=None, cycle_log=None):
        from .backends import SimBackend

        self.scenario = scenario
        self.backend = backend if backend is not None else SimBackend(scenario)
        self.cycle_log = cycle_log
        self.n_robots = len(scenario.starts)
        self.horizon = scenario.horizon
        self.reward_cfg = scenario.reward
        self.continuous = scenario.action_mode == "continuous"
        self.steps = 0
        self.done = True
        self.success = False
        self.obs = None
        self._bonus_paid = [False] * self.n_robots

    @property
    def world(self) -> sim.World:
        return self.backend.world

    def _log(self, event):
        if self.cycle_log is not None:
            self.cycle_log.append((self.steps, event))

    def reset(self, seed) -> np.ndarray:
        states = self.backend.reset(seed)
        self.steps = 0
        self.done = False
        self.success = False
        self._bonus_paid = [False] * self.n_robots
        self.obs = states_to_obs(states)
        return self.obs

    def decode(self, joint_action) -> list[tuple[float, float]]:
        if len(joint_action) != self.n_robots:
            raise InvalidActionError(f"expected {self.n_robots} actions, got {len(joint_action)}")
        if self.continuous:
            out = []
            for a in joint_action:
                v, w = a
                if not (math.isfinite(v) and math.isfinite(w)):
                    raise InvalidActionError(f"non-finite continuous action {a!r}")
                out.append((float(v), float(w)))
            return out
        return [action_decode(a) for a in joint_action]

    def step(self, joint_action) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode finished; call reset()")
        commands = self.decode(joint_action)
        before = self.world.snapshot()
        states, events, executed = self.backend.execute(self.steps + 1, commands, log=self._log)
        after = self.world
        rewards = compute_rewards(before, after, events, self.reward_cfg, self._bonus_paid)
        self._log("reward")
        self.steps += 1
        self.success = is_success(after)
        self.done = self.success or self.steps >= self.horizon
        self.obs = states_to_obs(states)
        hit = sim.colliding_robots(events)
        info = [
            {"collided": i in hit, "in_goal": bool(s.in_goal)}
            for i, s in enumerate(states)
        ]
        return StepResult(self.obs, rewards, self.done, self.success, info, executed)


def states_to_obs(states) -> np.ndarray:
    return np.asarray([[s.odom[0], s.odom[1], *s.lidar] for s in states], dtype=float)

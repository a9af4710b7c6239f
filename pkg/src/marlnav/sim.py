"""Deterministic 2D physics for a team of differential-drive robots.

Everything random (lidar noise, odometry drift, optional start jitter) is
drawn from the world's own ``numpy.random.Generator`` in a fixed order, so a
(scenario, seed, command sequence) triple always reproduces the same
trajectory bit for bit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidScenarioError, NotFoundError

log = logging.getLogger(__name__)

V_MAX = 0.5
OMEGA_MAX = 1.5
ROBOT_RADIUS = 0.15
SUBSTEP_S = 0.02
SUBSTEPS_PER_CYCLE = 5
# per-axis odometry sigma after one meter of travel; the mean Euclidean error
# of a 2D Gaussian is sigma * sqrt(pi / 2), which puts it at 0.03 m
ODOM_DRIFT = 0.03 / math.sqrt(math.pi / 2)

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def as_tuple(self):
        return (self.x, self.y, self.theta)


@dataclass
class RobotBody:
    id: int
    namespace: str
    pose: Pose
    radius: float = ROBOT_RADIUS
    odom: Pose | None = None
    distance_traveled: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("robot radius must be positive")
        if self.odom is None:
            self.odom = self.pose


class Box(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float


class Goal(NamedTuple):
    x: float
    y: float
    radius: float = 0.3


class CollisionEvent(NamedTuple):
    """``kind`` is "robot", "obstacle" or "wall".

    For robot-robot events ``a < b`` are the two robot ids; for obstacles
    ``b`` is the box index; for walls ``b`` is -1.
    """

    kind: str
    a: int
    b: int = -1


@dataclass(frozen=True)
class LidarConfig:
    num_rays: int = 15
    max_range: float = 5.0
    noise_sigma: float = 0.02
    robot_inflation: float = 1.5

    def __post_init__(self):
        if self.num_rays < 1:
            raise ValueError("num_rays must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.robot_inflation <= 0:
            raise ValueError("robot_inflation must be > 0")


@dataclass
class World:
    bounds: Box
    obstacles: list[Box]
    goals: list[Goal]
    robots: list[RobotBody]
    rng: np.random.Generator | None
    lidar: LidarConfig = field(default_factory=LidarConfig)
    odom_drift: float = ODOM_DRIFT
    actuator_gain: float = 1.0
    tick: int = 0

    def robot(self, robot_id: int) -> RobotBody:
        if not isinstance(robot_id, (int, np.integer)) or not 0 <= robot_id < len(self.robots):
            raise NotFoundError(f"unknown robot id {robot_id!r}")
        return self.robots[robot_id]

    def snapshot(self) -> World:
        """Copy of the kinematic state; the rng is not carried over."""
        robots = [
            RobotBody(r.id, r.namespace, r.pose, r.radius, r.odom, r.distance_traveled)
            for r in self.robots
        ]
        return World(self.bounds, self.obstacles, self.goals, robots, None,
                     self.lidar, self.odom_drift, self.actuator_gain, self.tick)

    def state_key(self) -> tuple:
        """Hashable, exact summary of the dynamic state (for determinism checks)."""
        rng_state = None if self.rng is None else repr(self.rng.bit_generator.state)
        return (
            self.tick,
            tuple((r.pose.as_tuple(), r.odom.as_tuple(), r.distance_traveled) for r in self.robots),
            rng_state,
        )

    def advance(self, commands, substeps: int = SUBSTEPS_PER_CYCLE, dt: float = SUBSTEP_S) -> set[CollisionEvent]:
        """Integrate one control cycle of per-robot ``(v, omega)`` commands.

        Robots move in id order each sub-step. A move that would leave the
        room or overlap a box or another robot is rejected (only the heading
        change is kept) and reported as a collision event.
        """
        if len(commands) != len(self.robots):
            raise ValueError(f"expected {len(self.robots)} commands, got {len(commands)}")
        gain = self.actuator_gain
        cmds = [_clamp_command(float(v) * gain, float(w) * gain) for v, w in commands]
        events: set[CollisionEvent] = set()
        for _ in range(substeps):
            noise = self.rng.standard_normal((len(self.robots), 2))
            for i, body in enumerate(self.robots):
                v, w = cmds[i]
                cand = step_kinematics(body.pose, v, w, dt)
                hit = self._blocking(i, cand.x, cand.y, body.radius)
                if hit:
                    events.update(hit)
                    cand = Pose(body.pose.x, body.pose.y, cand.theta)
                _move(body, cand, self.odom_drift, noise[i])
            self.tick += 1
        return events

    def _blocking(self, i: int, x: float, y: float, r: float) -> list[CollisionEvent]:
        out = []
        b = self.bounds
        if x - r < b.x0 or x + r > b.x1 or y - r < b.y0 or y + r > b.y1:
            out.append(CollisionEvent("wall", i))
        for k, box in enumerate(self.obstacles):
            if _disk_hits_box(x, y, r, box):
                out.append(CollisionEvent("obstacle", i, k))
        for j, other in enumerate(self.robots):
            if j != i and math.hypot(x - other.pose.x, y - other.pose.y) < r + other.radius:
                out.append(CollisionEvent("robot", min(i, j), max(i, j)))
        return out


def _clamp_command(v: float, w: float, v_max=V_MAX, omega_max=OMEGA_MAX) -> tuple[float, float]:
    cv = min(max(v, -v_max), v_max)
    cw = min(max(w, -omega_max), omega_max)
    if cv != v or cw != w:
        log.debug("clamped command (%r, %r) -> (%r, %r)", v, w, cv, cw)
    return cv, cw


def _move(body: RobotBody, new: Pose, drift: float, noise) -> None:
    old = body.pose
    d = math.hypot(new.x - old.x, new.y - old.y)
    # odometry is the true pose plus an accumulated error; the error is a
    # random walk whose variance grows linearly with distance
    ex = body.odom.x - old.x
    ey = body.odom.y - old.y
    if d > 0.0 and drift > 0.0:
        s = drift * math.sqrt(d)
        ex += s * float(noise[0])
        ey += s * float(noise[1])
    body.pose = new
    body.odom = Pose(new.x + ex, new.y + ey, new.theta)
    body.distance_traveled += d


def step_kinematics(pose: Pose, v: float, omega: float, dt: float,
                    limits=(V_MAX, OMEGA_MAX)) -> Pose:
    """Exact unicycle integration over ``dt`` seconds.

    Commands are clamped to ``limits`` (v_max, omega_max); pass ``None`` to
    integrate the raw command.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if limits is not None:
        v, omega = _clamp_command(v, omega, *limits)
    th = pose.theta
    if abs(omega) < 1e-9:
        x = pose.x + v * dt * math.cos(th)
        y = pose.y + v * dt * math.sin(th)
    else:
        th1 = th + omega * dt
        x = pose.x + (v / omega) * (math.sin(th1) - math.sin(th))
        y = pose.y + (v / omega) * (math.cos(th) - math.cos(th1))
    return Pose(x, y, normalize_angle(th + omega * dt))


def _disk_hits_box(x: float, y: float, r: float, box: Box) -> bool:
    nx = min(max(x, box.x0), box.x1)
    ny = min(max(y, box.y0), box.y1)
    return math.hypot(x - nx, y - ny) < r


def ray_distances(world: World, robot_id: int, config: LidarConfig | None = None) -> np.ndarray:
    """Noise-free first-hit distance for each ray (not clamped)."""
    config = config or world.lidar
    body = world.robot(robot_id)
    px, py, th = body.pose.x, body.pose.y, body.pose.theta
    angles = th + np.arange(config.num_rays) * (TWO_PI / config.num_rays)
    dx = np.cos(angles)
    dy = np.sin(angles)
    b = world.bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (b.x1 - px) / dx, np.where(dx < 0, (b.x0 - px) / dx, np.inf))
        ty = np.where(dy > 0, (b.y1 - py) / dy, np.where(dy < 0, (b.y0 - py) / dy, np.inf))
        best = np.maximum(np.minimum(tx, ty), 0.0)
        for box in world.obstacles:
            best = np.minimum(best, _ray_box(px, py, dx, dy, box))
    for other in world.robots:
        if other.id == body.id:
            continue
        R = other.radius * config.robot_inflation
        best = np.minimum(best, _ray_circle(px, py, dx, dy, other.pose.x, other.pose.y, R))
    return best


def _ray_box(px, py, dx, dy, box: Box) -> np.ndarray:
    if box.x0 <= px <= box.x1 and box.y0 <= py <= box.y1:
        return np.zeros_like(dx)
    t1x = (box.x0 - px) / dx
    t2x = (box.x1 - px) / dx
    t1y = (box.y0 - py) / dy
    t2y = (box.y1 - py) / dy
    # rays parallel to a slab: inside it -> unconstrained, outside -> miss
    in_x = (box.x0 <= px) & (px <= box.x1)
    in_y = (box.y0 <= py) & (py <= box.y1)
    lo_x = np.where(dx == 0, np.where(in_x, -np.inf, np.inf), np.minimum(t1x, t2x))
    hi_x = np.where(dx == 0, np.where(in_x, np.inf, -np.inf), np.maximum(t1x, t2x))
    lo_y = np.where(dy == 0, np.where(in_y, -np.inf, np.inf), np.minimum(t1y, t2y))
    hi_y = np.where(dy == 0, np.where(in_y, np.inf, -np.inf), np.maximum(t1y, t2y))
    t_in = np.maximum(lo_x, lo_y)
    t_out = np.minimum(hi_x, hi_y)
    hit = (t_in <= t_out) & (t_out >= 0)
    return np.where(hit, np.maximum(t_in, 0.0), np.inf)


def _ray_circle(px, py, dx, dy, cx, cy, R) -> np.ndarray:
    ox = px - cx
    oy = py - cy
    c = ox * ox + oy * oy - R * R
    if c <= 0:
        return np.zeros_like(dx)
    bq = ox * dx + oy * dy
    disc = bq * bq - c
    t = -bq - np.sqrt(np.maximum(disc, 0.0))
    return np.where((disc >= 0) & (t >= 0), t, np.inf)


def cast_lidar(world: World, robot_id: int, config: LidarConfig | None = None) -> np.ndarray:
    """Noisy, clamped range readings for one robot.

    Always consumes ``num_rays`` normal draws from the world rng, even with
    zero noise, so the random stream does not depend on the noise level.
    """
    config = config or world.lidar
    d = ray_distances(world, robot_id, config)
    noise = world.rng.standard_normal(config.num_rays)
    return np.clip(d + config.noise_sigma * noise, 0.0, config.max_range)


def read_odometry(body: RobotBody) -> tuple[float, float]:
    return (body.odom.x, body.odom.y)


def detect_collisions(world: World) -> set[CollisionEvent]:
    events = set()
    robots = world.robots
    b = world.bounds
    for i, r in enumerate(robots):
        x, y = r.pose.x, r.pose.y
        if x - r.radius < b.x0 or x + r.radius > b.x1 or y - r.radius < b.y0 or y + r.radius > b.y1:
            events.add(CollisionEvent("wall", r.id))
        for k, box in enumerate(world.obstacles):
            if _disk_hits_box(x, y, r.radius, box):
                events.add(CollisionEvent("obstacle", r.id, k))
        for o in robots[i + 1:]:
            if math.hypot(x - o.pose.x, y - o.pose.y) < r.radius + o.radius:
                events.add(CollisionEvent("robot", min(r.id, o.id), max(r.id, o.id)))
    return events


def colliding_robots(events) -> set[int]:
    ids = set()
    for e in events:
        ids.add(e.a)
        if e.kind == "robot":
            ids.add(e.b)
    return ids


def goal_distance(world: World, robot_id: int) -> float:
    body = world.robot(robot_id)
    g = world.goals[robot_id]
    return math.hypot(body.pose.x - g.x, body.pose.y - g.y)


def in_goal(world: World, robot_id: int) -> bool:
    # boundary inclusive
    return goal_distance(world, robot_id) <= world.goals[robot_id].radius


def reset_world(scenario, seed) -> World:
    """Build the initial world for ``scenario``; deterministic in (scenario, seed)."""
    rng = np.random.default_rng(seed)
    robots = []
    for i, (x, y, th) in enumerate(scenario.starts):
        if scenario.start_jitter > 0:
            jx, jy = rng.normal(0.0, scenario.start_jitter, 2)
            x, y = x + float(jx), y + float(jy)
        robots.append(RobotBody(i, f"robot_{i}", Pose(float(x), float(y), normalize_angle(th)),
                                scenario.robot_radius))
    world = World(
        bounds=Box(*scenario.bounds),
        obstacles=[Box(*o) for o in scenario.obstacles],
        goals=[Goal(*g) for g in scenario.goals],
        robots=robots,
        rng=rng,
        lidar=scenario.lidar,
        odom_drift=scenario.odom_drift,
    )
    hits = detect_collisions(world)
    if hits:
        raise InvalidScenarioError(f"scenario {scenario.name!r}: start poses collide: {sorted(hits)}")
    return world

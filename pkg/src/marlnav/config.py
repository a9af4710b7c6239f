"""Scenario and algorithm configuration: JSON loading and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import sim
from .env import RewardConfig
from .errors import ConfigError, InvalidScenarioError


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    starts: tuple
    goals: tuple
    obstacles: tuple = ()
    bounds: tuple = (0.0, 0.0, 6.0, 4.0)
    robot_radius: float = sim.ROBOT_RADIUS
    lidar: sim.LidarConfig = field(default_factory=sim.LidarConfig)
    odom_drift: float = sim.ODOM_DRIFT
    start_jitter: float = 0.0
    horizon: int = 200
    reward: RewardConfig = field(default_factory=RewardConfig)
    action_mode: str = "discrete"

    @property
    def n_robots(self):
        return len(self.starts)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class AlgorithmConfig:
    name: str = "multi_dqn"
    hidden: tuple = (256, 256)
    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int = 64
    buffer_capacity: int = 100_000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    priority_eps: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 500
    target_sync: int = 1000
    train_every: int = 1
    learning_starts: int = 1000
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    grad_clip: float = 10.0
    input_scale: float = 0.2
    share_parameters: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 2000
    checkpoint_every: int = 100
    early_stop: bool = False
    convergence_window: int = 20
    convergence_threshold: float = 0.8
    # stop once the trailing-window joint success rate reaches this value
    target_success: float | None = None
    extra_episodes: int = 0

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self):
        return {
            "scenario": self.scenario.to_dict(),
            "algorithm": self.algorithm.to_dict(),
            "training": self.training.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _vec(errors, where, value, n):
    if not isinstance(value, (list, tuple)) or len(value) != n or not all(_num(v) for v in value):
        errors.append(f"{where}: expected {n} finite numbers, got {value!r}")
        return None
    return tuple(float(v) for v in value)


def _section(errors, cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        errors.append(f"{where}: expected an object")
        return cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            errors.append(f"{where}.{key}: unknown key")
            continue
        default = names[key].default
        if isinstance(default, tuple):
            if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
                errors.append(f"{where}.{key}: expected a list of positive integers")
                continue
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                errors.append(f"{where}.{key}: expected a boolean")
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                errors.append(f"{where}.{key}: expected an integer")
                continue
        elif isinstance(default, float) or default is None:
            if value is not None and not _num(value):
                errors.append(f"{where}.{key}: expected a number")
                continue
            if value is not None:
                value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            errors.append(f"{where}.{key}: expected a string")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def scenario_from_dict(raw: dict, errors: list[str]) -> ScenarioConfig | None:
    if not isinstance(raw, dict):
        errors.append("scenario: expected an object")
        return None
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        errors.append("name: required non-empty string")
        name = "?"
    bounds = _vec(errors, "room", raw.get("room", [0, 0, 6, 4]), 4)
    if bounds and not (bounds[2] > bounds[0] and bounds[3] > bounds[1]):
        errors.append(f"room: empty rectangle {bounds}")
    robots = raw.get("robots")
    starts = []
    if not isinstance(robots, list) or not robots:
        errors.append("robots: need at least one robot")
        robots = []
    for i, r in enumerate(robots):
        start = r.get("start") if isinstance(r, dict) else None
        pose = _vec(errors, f"robots[{i}].start", start, 3)
        if pose:
            starts.append(pose)
    goals = []
    raw_goals = raw.get("goals")
    if not isinstance(raw_goals, list):
        errors.append("goals: expected a list")
        raw_goals = []
    for i, g in enumerate(raw_goals):
        if not isinstance(g, dict):
            errors.append(f"goals[{i}]: expected an object")
            continue
        c = _vec(errors, f"goals[{i}].center", g.get("center"), 2)
        rad = g.get("radius", 0.3)
        if not _num(rad) or rad <= 0:
            errors.append(f"goals[{i}].radius: must be a positive number")
            continue
        if c:
            goals.append((c[0], c[1], float(rad)))
    if len(robots) != len(raw_goals):
        errors.append(f"robots/goals mismatch: {len(robots)} robots but {len(raw_goals)} goals")
    obstacles = []
    for i, o in enumerate(raw.get("obstacles", [])):
        box = _vec(errors, f"obstacles[{i}]", o, 4)
        if box:
            if not (box[2] > box[0] and box[3] > box[1]):
                errors.append(f"obstacles[{i}]: empty box {box}")
            obstacles.append(box)

    noise = raw.get("noise", {})
    if not isinstance(noise, dict):
        errors.append("noise: expected an object")
        noise = {}
    lidar_raw = dict(raw.get("lidar", {}))
    if "lidar_sigma" in noise:
        lidar_raw["noise_sigma"] = noise["lidar_sigma"]
    lidar = _section(errors, sim.LidarConfig, lidar_raw, "lidar")
    odom_drift = noise.get("odom_drift", sim.ODOM_DRIFT)
    jitter = noise.get("start_jitter", 0.0)
    for key, val in (("odom_drift", odom_drift), ("start_jitter", jitter)):
        if not _num(val) or val < 0:
            errors.append(f"noise.{key}: must be a non-negative number")
    for key in set(noise) - {"lidar_sigma", "odom_drift", "start_jitter"}:
        errors.append(f"noise.{key}: unknown key")
    reward = _section(errors, RewardConfig, raw.get("reward"), "reward")
    errors.extend(reward.problems())
    horizon = raw.get("horizon", 200)
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        errors.append("horizon: must be a positive integer")
        horizon = 200
    mode = raw.get("action_mode", "discrete")
    if mode not in ("discrete", "continuous"):
        errors.append(f"action_mode: must be 'discrete' or 'continuous', got {mode!r}")
    radius = raw.get("robot_radius", sim.ROBOT_RADIUS)
    if not _num(radius) or radius <= 0:
        errors.append("robot_radius: must be positive")
        radius = sim.ROBOT_RADIUS
    if not bounds or len(starts) != len(robots):
        return None
    scenario = ScenarioConfig(
        name=name, starts=tuple(starts), goals=tuple(goals), obstacles=tuple(obstacles),
        bounds=bounds, robot_radius=float(radius), lidar=lidar,
        odom_drift=float(odom_drift) if _num(odom_drift) else sim.ODOM_DRIFT,
        start_jitter=float(jitter) if _num(jitter) else 0.0,
        horizon=horizon, reward=reward, action_mode=mode,
    )
    errors.extend(geometry_problems(scenario))
    return scenario


def geometry_problems(scenario: ScenarioConfig) -> list[str]:
    out = []
    if not scenario.starts:
        return ["robots: need at least one robot"]
    if len(scenario.goals) != len(scenario.starts):
        return out
    try:
        world = sim.reset_world(dataclasses.replace(scenario, start_jitter=0.0), 0)
    except InvalidScenarioError as exc:
        return [str(exc)]
    b = world.bounds
    for i, g in enumerate(world.goals):
        if not (b.x0 < g.x < b.x1 and b.y0 < g.y < b.y1):
            out.append(f"goals[{i}]: center outside the room")
        if sim.in_goal(world, i):
            out.append(f"robots[{i}]: starts inside its own goal")
    return out


def load_config(path) -> RunConfig:
    """Parse and validate a run config; all problems are reported together."""
    path = resolve_config_path(path)
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw) -> RunConfig:
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    scenario_raw = raw.get("scenario", raw)
    scenario = scenario_from_dict(scenario_raw, errors)
    algorithm = _section(errors, AlgorithmConfig, raw.get("algorithm"), "algorithm")
    training = _section(errors, TrainingConfig, raw.get("training"), "training")
    if algorithm.name not in ("multi_dqn",):
        errors.append(f"algorithm.name: unknown algorithm {algorithm.name!r}")
    if scenario is not None and scenario.action_mode == "continuous" and algorithm.name == "multi_dqn":
        errors.append("action_mode 'continuous' has no trainable algorithm (multi_dqn is discrete)")
    if not 0 <= algorithm.gamma <= 1:
        errors.append("algorithm.gamma: must lie in [0, 1]")
    if not 0 < algorithm.eps_end <= algorithm.eps_start <= 1:
        errors.append("algorithm: need 0 < eps_end <= eps_start <= 1")
    for key in ("lr", "batch_size", "buffer_capacity", "target_sync", "train_every", "input_scale"):
        if not getattr(algorithm, key) > 0:
            errors.append(f"algorithm.{key}: must be positive")
    if training.episodes < 0:
        errors.append("training.episodes: must be >= 0")
    if errors:
        raise ConfigError(errors)
    return RunConfig(scenario, algorithm, training)


BUNDLED = ("scenario1", "scenario2")


def resolve_config_path(path) -> Path:
    """Bundled scenario names ("scenario1") resolve to packaged JSON files."""
    p = Path(path)
    if not p.exists() and str(path).removesuffix(".json") in BUNDLED:
        return Path(str(resources.files("marlnav") / "scenarios" / f"{str(path).removesuffix('.json')}.json"))
    return p


def bundled(name: str) -> RunConfig:
    return load_config(name)


def run_config_from_plain(d: dict) -> RunConfig:
    """Inverse of ``RunConfig.to_dict`` (no validation; input came from us)."""
    s = dict(d["scenario"])
    s["lidar"] = sim.LidarConfig(**s["lidar"])
    s["reward"] = RewardConfig(**s["reward"])
    for key in ("starts", "goals", "obstacles"):
        s[key] = tuple(tuple(v) for v in s[key])
    s["bounds"] = tuple(s["bounds"])
    a = dict(d["algorithm"])
    a["hidden"] = tuple(a["hidden"])
    return RunConfig(ScenarioConfig(**s), AlgorithmConfig(**a), TrainingConfig(**d["training"]))

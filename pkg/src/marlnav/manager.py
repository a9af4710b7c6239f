"""The orchestrator: robot registry, run modes, the per-cycle loop, training
and evaluation drivers, and the multi-robot convergence detector."""
from __future__ import annotations

import enum
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algo import ALGORITHMS
from .algo.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from .algo.dqn import MultiDQN
from .config import RunConfig
from .env import N_DISCRETE_ACTIONS, OBS_DIM, MultiRobotEnv
from .errors import CompatibilityError, ConfigError, ConflictError, GatherTimeoutError

log = logging.getLogger(__name__)

CYCLE_EVENTS = ("state", "action", "emit", "execute", "gather", "reward")
TRAIN_EVENTS = ("store", "train")


class RunMode(enum.Enum):
    SIM_TRAIN = "SimTrain"
    SIM_EVAL = "SimEval"
    DEPLOY = "Deploy"


@dataclass
class RegistryEntry:
    robot_id: int
    namespace: str
    endpoint: object = None
    registered: bool = True


class RobotRegistry:
    def __init__(self):
        self.entries: list[RegistryEntry] = []

    def register(self, namespace: str, endpoint=None) -> int:
        if any(e.namespace == namespace for e in self.entries):
            raise ConflictError(f"namespace {namespace!r} already registered")
        rid = len(self.entries)
        self.entries.append(RegistryEntry(rid, namespace, endpoint))
        return rid

    def __len__(self):
        return len(self.entries)

    @property
    def namespaces(self):
        return [e.namespace for e in self.entries]


def register_robot(registry: RobotRegistry, namespace: str, endpoint=None) -> int:
    return registry.register(namespace, endpoint)


@dataclass
class EpisodeRecord:
    episode: int
    returns: list[float]
    steps: int
    success: bool
    robot_success: list[bool]
    wall_time: float = 0.0
    epsilon: float = 0.0
    failure: str | None = None


def convergence_check(history, window: int = 20, threshold: float = 0.8) -> bool:
    """True iff every robot's success rate over the trailing ``window``
    episodes exceeds ``threshold``.

    ``history`` holds one sequence of per-robot success flags per episode.
    """
    if len(history) < window:
        return False
    recent = np.asarray(list(history)[-window:], dtype=float)
    return bool(np.all(recent.mean(axis=0) > threshold))


def episode_seed(run_seed: int, episode: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([run_seed, episode, stream]).generate_state(1)[0])


class Manager:
    """Drives episodes of one scenario with one algorithm instance.

    ``cycle_log`` keeps the stage sequence of recent cycles for auditing.
    ``trace`` (a list) receives per-episode trajectories for replay.
    """

    def __init__(self, run_config: RunConfig, mode: RunMode, algorithm=None, backend=None,
                 seed: int = 0, trace=None, log_cycles: int = 1000):
        if mode is RunMode.SIM_TRAIN and algorithm is None:
            raise ConfigError("SimTrain mode needs an algorithm instance")
        if mode is RunMode.DEPLOY and not getattr(algorithm, "loaded", False):
            raise ConfigError("Deploy mode needs a policy loaded from a checkpoint")
        self.config = run_config
        self.scenario = run_config.scenario
        self.mode = mode
        self.algorithm = algorithm
        self.seed = seed
        self.registry = RobotRegistry()
        if backend is not None and getattr(backend, "mode", "sim") == "deploy":
            backend.registry = self.registry
        else:
            for i in range(self.scenario.n_robots):
                self.registry.register(f"robot_{i}")
        self.cycle_log = deque(maxlen=log_cycles * (len(CYCLE_EVENTS) + len(TRAIN_EVENTS)))
        self.env = MultiRobotEnv(self.scenario, backend, cycle_log=self.cycle_log)
        self.trace = trace
        self.obs = None
        self._trace_ep = None

    def _log(self, event):
        self.cycle_log.append((self.env.steps, event))

    def begin_episode(self, env_seed):
        self.obs = self.env.reset(env_seed)
        if self.trace is not None:
            self._trace_ep = {
                "seed": env_seed,
                "start_poses": [list(p) for p in self.env.backend.start_poses],
                "cycles": [],
            }
            self.trace.append(self._trace_ep)
        return self.obs

    def run_cycle(self, epsilon: float = 0.0):
        """One cycle: state -> action -> emit -> execute -> gather -> reward
        (-> store -> train when training)."""
        obs = self.obs
        self._log("state")
        actions = self.algorithm.select_actions(obs, epsilon)
        self._log("action")
        result = self.env.step(actions)
        if self.mode is RunMode.SIM_TRAIN:
            self.algorithm.observe(obs, actions, result.rewards, result.obs, result.success)
            self._log("store")
            self.algorithm.train()
            self._log("train")
        self.obs = result.obs
        if self._trace_ep is not None:
            self._trace_ep["cycles"].append({
                "cycle": self.env.steps,
                "actions": [list(c) for c in result.commands],
                "poses": [list(r.pose.as_tuple()) for r in self.env.world.robots],
            })
        return result

    def run_episode(self, episode: int, env_seed: int, epsilon: float = 0.0) -> EpisodeRecord:
        t0 = time.perf_counter()
        returns = np.zeros(self.scenario.n_robots)
        failure = None
        try:
            self.begin_episode(env_seed)
            if self._trace_ep is not None:
                self._trace_ep["episode"] = episode
            result = None
            while not self.env.done:
                result = self.run_cycle(epsilon)
                returns += result.rewards
            success = self.env.success
            robot_success = [bool(e["in_goal"]) for e in result.events]
        except GatherTimeoutError as exc:
            log.warning("episode %d aborted: %s", episode, exc)
            failure = f"gather-timeout: {exc}"
            success = False
            robot_success = [False] * self.scenario.n_robots
            self.env.done = True
        return EpisodeRecord(
            episode=episode,
            returns=[float(r) for r in returns],
            steps=self.env.steps,
            success=bool(success),
            robot_success=robot_success,
            wall_time=time.perf_counter() - t0,
            epsilon=float(epsilon),
            failure=failure,
        )

    def close(self):
        self.env.backend.close()


def make_algorithm(run_config: RunConfig, seed: int):
    cls = ALGORITHMS[run_config.algorithm.name]
    return cls(run_config.scenario.n_robots, OBS_DIM, N_DISCRETE_ACTIONS, run_config.algorithm, seed=seed)


@dataclass
class TrainingResult:
    algorithm: object
    records: list[EpisodeRecord] = field(default_factory=list)
    checkpoint: Path | None = None
    converged_at: int | None = None
    target_reached_at: int | None = None
    trace: list | None = None


def trailing_rate(flags, window=20) -> float:
    recent = list(flags)[-window:]
    return float(np.mean(recent)) if recent else 0.0


def run_training(run_config: RunConfig, seed: int = 0, out_dir=None, on_episode=None,
                 trace_last: bool = False) -> TrainingResult:
    """Train from scratch in simulation.

    Writes ``checkpoint.mrl`` (and periodic ``checkpoint_XXXXX.mrl``) under
    ``out_dir`` when given. ``on_episode(record, trail)`` is called after
    every episode. Returns the trained algorithm and the episode records.
    """
    tc = run_config.training
    if tc.episodes < 0:
        raise ConfigError("training.episodes must be >= 0")
    result = TrainingResult(algorithm=None)
    if tc.episodes == 0:
        return result
    algo = make_algorithm(run_config, seed)
    result.algorithm = algo
    manager = Manager(run_config, RunMode.SIM_TRAIN, algo, seed=seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history = []
    joint = []
    stop_at = None
    for ep in range(tc.episodes):
        algo.begin_episode(ep, tc.episodes)
        if trace_last:
            manager.trace = []
        rec = manager.run_episode(ep, episode_seed(seed, ep), algo.epsilon)
        result.records.append(rec)
        history.append(rec.robot_success)
        joint.append(rec.success)
        trail = trailing_rate(joint, tc.convergence_window)
        if result.converged_at is None and convergence_check(history, tc.convergence_window,
                                                             tc.convergence_threshold):
            result.converged_at = ep
            log.info("converged at episode %d", ep)
        if (result.target_reached_at is None and tc.target_success is not None
                and len(joint) >= tc.convergence_window and trail >= tc.target_success):
            result.target_reached_at = ep
        if on_episode is not None:
            on_episode(rec, trail)
        if out is not None and tc.checkpoint_every and (ep + 1) % tc.checkpoint_every == 0:
            save_checkpoint(algo, out / f"checkpoint_{ep + 1:05d}.mrl", run_config.scenario.name, seed)
        if stop_at is None:
            if tc.early_stop and result.converged_at is not None:
                stop_at = ep + tc.extra_episodes
            elif result.target_reached_at is not None:
                stop_at = ep + tc.extra_episodes
        if stop_at is not None and ep >= stop_at:
            break
    if trace_last:
        result.trace = manager.trace
    if out is not None:
        result.checkpoint = out / "checkpoint.mrl"
        save_checkpoint(algo, result.checkpoint, run_config.scenario.name, seed)
    return result


@dataclass
class EvalResult:
    success_rate: float
    records: list[EpisodeRecord]
    trace: list | None = None


def as_policy(checkpoint, run_config: RunConfig) -> MultiDQN:
    n = run_config.scenario.n_robots
    if isinstance(checkpoint, (str, Path)):
        algo = load_checkpoint(checkpoint, n_agents=n, obs_dim=OBS_DIM)
    else:
        algo = checkpoint
        if algo.n_agents != n:
            raise CompatibilityError(f"policy has {algo.n_agents} agents, scenario has {n} robots")
    algo.loaded = True
    return algo


def run_evaluation(checkpoint, run_config: RunConfig, backend="sim", episodes: int = 200,
                   seed: int = 0, perturbation=None, transport="process", trace=None,
                   gather_timeout_ms=None) -> EvalResult:
    """Greedy rollouts of a trained policy; no learning and no exploration."""
    from .backends import DeployBackend, SimBackend

    if episodes < 1:
        raise ConfigError("evaluation needs at least one episode")
    algo = as_policy(checkpoint, run_config)
    if backend == "sim":
        be, mode = SimBackend(run_config.scenario), RunMode.SIM_EVAL
    elif backend == "deploy":
        kwargs = {} if gather_timeout_ms is None else {"gather_timeout_ms": gather_timeout_ms}
        be = DeployBackend(run_config.scenario, perturbation, transport=transport, **kwargs)
        mode = RunMode.DEPLOY
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    manager = Manager(run_config, mode, algo, backend=be, seed=seed, trace=trace)
    before = checkpoint_bytes(algo)
    records = []
    try:
        for ep in range(episodes):
            records.append(manager.run_episode(ep, episode_seed(seed, ep, stream=1), 0.0))
    finally:
        manager.close()
    if checkpoint_bytes(algo) != before:
        raise AssertionError("evaluation modified policy parameters")
    rate = sum(r.success for r in records) / len(records)
    return EvalResult(rate, records, trace)

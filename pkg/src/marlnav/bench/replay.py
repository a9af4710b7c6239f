"""Trajectory logs (JSON lines) and bit-exact re-simulation."""
from __future__ import annotations

import json
from pathlib import Path

from .. import sim
from ..backends import DeployPerturbation, deploy_world, robot_state
from ..config import RunConfig, run_config_from_plain
from ..errors import ConfigError, ReplayDivergenceError

LOG_FORMAT = 1


def write_trajectory_log(path, run_config: RunConfig, episodes, backend="sim", perturbation=None):
    path = Path(path)
    with path.open("w") as fh:
        head = {
            "type": "header",
            "format": LOG_FORMAT,
            "backend": backend,
            "config": run_config.to_dict(),
            "perturbation": None if perturbation is None else _pert_dict(perturbation),
        }
        fh.write(json.dumps(head) + "\n")
        for ep in episodes:
            fh.write(json.dumps({"type": "episode", **ep}) + "\n")
    return path


def _pert_dict(p: DeployPerturbation):
    return {"actuator_gain": p.actuator_gain, "lidar_noise_mult": p.lidar_noise_mult,
            "odom_drift_mult": p.odom_drift_mult, "latency_ms": list(p.latency_ms),
            "start_jitter": p.start_jitter, "seed": p.seed}


def read_trajectory_log(path):
    """Returns ``(header or None, episodes)``; an empty file has no header."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return None, []
    try:
        items = [json.loads(ln) for ln in lines]
    except ValueError as exc:
        raise ConfigError(f"{path}: unreadable log line: {exc}") from None
    head = items[0]
    if head.get("type") != "header" or head.get("format") != LOG_FORMAT:
        raise ConfigError(f"{path}: not a trajectory log")
    return head, items[1:]


def replay_episode(run_config: RunConfig, ep: dict, perturbation=None) -> None:
    """Re-simulate one logged episode; raise on the first pose mismatch."""
    scenario = run_config.scenario
    if perturbation is None:
        world = sim.reset_world(scenario, ep["seed"])
    else:
        world = deploy_world(scenario, perturbation, ep["seed"])
    for body, p in zip(world.robots, ep["start_poses"]):
        body.pose = body.odom = sim.Pose(*p)
    for i in range(len(world.robots)):
        robot_state(world, i, 0)
    for cyc in ep["cycles"]:
        try:
            commands = [(float(v), float(w)) for v, w in cyc["actions"]]
        except (TypeError, ValueError):
            raise ReplayDivergenceError(ep.get("episode"), cyc.get("cycle"), "(unreadable actions)") from None
        events = world.advance(commands)
        events |= sim.detect_collisions(world)
        for i in range(len(world.robots)):
            robot_state(world, i, cyc["cycle"], events)
        got = [list(r.pose.as_tuple()) for r in world.robots]
        if got != cyc["poses"]:
            raise ReplayDivergenceError(ep.get("episode"), cyc["cycle"])


def replay_log(path):
    """Replay every episode in a log. Returns ``(run_config | None, episodes)``."""
    head, episodes = read_trajectory_log(path)
    if head is None:
        return None, []
    run_config = run_config_from_plain(head["config"])
    pert = head.get("perturbation")
    perturbation = None
    if head.get("backend") == "deploy" and pert is not None:
        pert = dict(pert)
        pert["latency_ms"] = tuple(pert["latency_ms"])
        perturbation = DeployPerturbation(**pert)
    for ep in episodes:
        replay_episode(run_config, ep, perturbation)
    return run_config, episodes

"""Execution backends behind :class:`~marlnav.env.MultiRobotEnv`.

A backend owns the physical side of a cycle: it takes decoded per-robot
commands, pushes them through the emitter buffer, advances the world by one
control cycle and gathers the robots' states through the receiver buffer.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import sim
from .comm.buffers import (
    CYCLE_MS,
    GATHER_TIMEOUT_MS,
    SUBSTEP_MS,
    EmitterBuffer,
    ReceiverBuffer,
    RobotState,
)
from .errors import GatherTimeoutError
from .env import sense


def robot_state(world: sim.World, robot_id: int, cycle_id: int, events=()) -> RobotState:
    _, odom, lidar = sense(world, robot_id)
    return RobotState(
        robot_id=robot_id,
        cycle_id=cycle_id,
        odom=tuple(float(v) for v in odom),
        lidar=tuple(float(v) for v in lidar),
        collided=robot_id in sim.colliding_robots(events),
        in_goal=sim.in_goal(world, robot_id),
    )


class SimBackend:
    """Single-threaded simulator on a virtual clock."""

    mode = "sim"

    def __init__(self, scenario, hold="previous"):
        self.scenario = scenario
        self.namespaces = [f"robot_{i}" for i in range(scenario.n_robots)]
        self.emitter = EmitterBuffer(self.namespaces, hold=hold)
        self.receiver = ReceiverBuffer(range(scenario.n_robots), mode="sim")
        self.world: sim.World | None = None
        self.clock_ms = 0
        self.start_poses = None

    def reset(self, seed, start_poses=None) -> list[RobotState]:
        self.world = sim.reset_world(self.scenario, seed)
        if start_poses is not None:
            for body, p in zip(self.world.robots, start_poses):
                body.pose = body.odom = sim.Pose(*p)
        self.start_poses = [r.pose.as_tuple() for r in self.world.robots]
        self.emitter.clear()
        self.clock_ms = 0
        for i in range(len(self.world.robots)):
            self.receiver.collect(robot_state(self.world, i, 0))
        return self.receiver.gather_joint(0)

    def execute(self, cycle_id, commands, log=None):
        log = log or _nolog
        self.emitter.emit(commands, cycle_id)
        log("emit")
        due = self.emitter.dispatch(self.clock_ms)
        executed = [(e.v, e.w) for e in due]
        events = self.world.advance(executed)
        events |= sim.detect_collisions(self.world)
        self.clock_ms += CYCLE_MS
        log("execute")
        for i in range(len(self.world.robots)):
            self.receiver.collect(robot_state(self.world, i, cycle_id, events))
        states = self.receiver.gather_joint(cycle_id)
        log("gather")
        return states, events, executed

    def close(self):
        pass


def _nolog(event):
    pass


@dataclass(frozen=True)
class DeployPerturbation:
    """Deterministic stand-in for the gap between simulator and real robots."""

    # calibrated once against a trained open-room policy, then frozen
    actuator_gain: float = 1.20
    lidar_noise_mult: float = 3.0
    odom_drift_mult: float = 3.0
    latency_ms: tuple = (0.0, 60.0)
    start_jitter: float = 0.10
    seed: int = 0

    def __post_init__(self):
        for name in ("actuator_gain", "lidar_noise_mult", "odom_drift_mult"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        lo, hi = self.latency_ms
        if not 0 <= lo <= hi:
            raise ValueError("latency_ms must satisfy 0 <= lo <= hi")
        if self.start_jitter < 0:
            raise ValueError("start_jitter must be >= 0")

    @classmethod
    def identity(cls, seed=0) -> DeployPerturbation:
        return cls(1.0, 1.0, 1.0, (0.0, 0.0), 0.0, seed)

    def apply(self, scenario):
        """Scenario with the perturbed sensor noise levels."""
        lidar = replace(scenario.lidar, noise_sigma=scenario.lidar.noise_sigma * self.lidar_noise_mult)
        return replace(scenario, lidar=lidar, odom_drift=scenario.odom_drift * self.odom_drift_mult)


def deploy_world(scenario, perturbation: DeployPerturbation, seed) -> sim.World:
    world = sim.reset_world(perturbation.apply(scenario), seed)
    world.actuator_gain = perturbation.actuator_gain
    return world


# -- plant and endpoint loops --------------------------------------------------
# The plant is the shared physical world. Each robot endpoint speaks the wire
# protocol to the manager and relays actuation/sensing to the plant, which
# steps only once every robot has reported in (a barrier per round).

def run_plant(scenario, perturbation: DeployPerturbation, links, control):
    jitter_rng = np.random.default_rng([perturbation.seed, 1])
    world = None
    while True:
        reqs = [link.recv() for link in links]
        kind = reqs[0][0]
        if any(r[0] != kind for r in reqs):
            raise RuntimeError(f"plant round mixes request kinds: {[r[0] for r in reqs]}")
        if kind == "shutdown":
            control.send(("bye",))
            return
        if kind == "reset":
            _, seed = control.recv()
            world = deploy_world(scenario, perturbation, seed)
            offsets = jitter_rng.normal(0.0, 1.0, (len(links), 2)) * perturbation.start_jitter
            for body, req, off in zip(world.robots, reqs, offsets):
                x, y, th = req[1]
                pose = sim.Pose(x + float(off[0]), y + float(off[1]), sim.normalize_angle(th))
                body.pose = body.odom = pose
            events = sim.detect_collisions(world)
            cycle = 0
        else:
            commands = [r[1] for r in reqs]
            cycle = reqs[0][2]
            events = world.advance(commands)
            events |= sim.detect_collisions(world)
        for i, link in enumerate(links):
            link.send(robot_state(world, i, cycle, events))
        control.send(("truth", [(r.pose, r.odom, r.distance_traveled) for r in world.robots],
                      world.tick, events))


def run_endpoint(robot_id, namespace, wire, plant, mute_after=None):
    """Robot-side loop. ``mute_after`` silences STATE replies after that cycle
    (fault injection for timeout handling)."""
    from .comm import protocol as P

    wire.send(P.make("REGISTER", robot_id=robot_id, namespace=namespace))
    ack = wire.recv()
    if ack is None or ack.kind != "REGISTER_ACK":
        raise RuntimeError(f"{namespace}: bad handshake reply {ack!r}")
    while True:
        msg = wire.recv()
        if msg is None:
            continue
        if msg.kind == "SHUTDOWN":
            plant.send(("shutdown",))
            wire.close()
            return
        if msg.kind == "RESET":
            plant.send(("reset", tuple(msg["pose"])))
            state = plant.recv()
            wire.send(P.make("RESET_ACK", robot_id=robot_id, episode=msg["episode"]))
            wire.send(state_message(state))
        elif msg.kind == "COMMAND":
            plant.send(("act", (msg["v"], msg["w"]), msg["cycle"]))
            state = plant.recv()
            if mute_after is None or state.cycle_id <= mute_after:
                wire.send(state_message(state))


def state_message(s: RobotState):
    from .comm import protocol as P

    return P.make("STATE", robot_id=s.robot_id, cycle=s.cycle_id, odom=list(s.odom),
                  lidar=list(s.lidar), collided=s.collided, in_goal=s.in_goal)


def state_from_message(msg) -> RobotState:
    return RobotState(msg["robot_id"], msg["cycle"], tuple(msg["odom"]), tuple(msg["lidar"]),
                      msg["collided"], msg["in_goal"])


def _endpoint_process(robot_id, namespace, address, plant_conn, mute_after):
    from .comm.transport import SocketLink

    run_endpoint(robot_id, namespace, SocketLink.connect(address), plant_conn, mute_after)


class DeployBackend:
    """Perturbed plant reached only through robot endpoints and the wire protocol.

    ``transport="process"`` runs the plant and one endpoint per robot as
    separate OS processes talking over loopback TCP; ``"inprocess"`` runs
    them as threads on queue links carrying the same encoded frames.
    Latency injection drops commands that miss the send deadline.
    """

    mode = "deploy"

    def __init__(self, scenario, perturbation: DeployPerturbation | None = None,
                 transport="process", gather_timeout_ms=GATHER_TIMEOUT_MS, hold="previous",
                 mute=None, registry=None):
        if transport not in ("process", "inprocess"):
            raise ValueError("transport must be 'process' or 'inprocess'")
        self.scenario = scenario
        self.perturbation = perturbation or DeployPerturbation()
        self.transport = transport
        self.n = scenario.n_robots
        self.mute = dict(mute or {})
        self.registry = registry
        lo, hi = self.perturbation.latency_ms
        self._latency_rng = np.random.default_rng([self.perturbation.seed, 2])
        latency = None if hi == 0 else (lambda _i: float(self._latency_rng.uniform(lo, hi)))
        self.namespaces = [f"robot_{i}" for i in range(self.n)]
        self.emitter = EmitterBuffer(self.namespaces, hold=hold, latency=latency)
        self.receiver = ReceiverBuffer(range(self.n), mode="deploy", timeout_ms=gather_timeout_ms)
        self.world: sim.World | None = None
        self.links = []
        self._workers = []
        self._control = None
        self.clock_ms = 0
        self.episode = -1
        self.start_poses = None
        self.started = False

    # lifecycle ---------------------------------------------------------------
    def start(self):
        if self.started:
            return
        from .comm import protocol as P

        if self.transport == "inprocess":
            self._start_threads()
        else:
            self._start_processes()
        hello = {}
        for link in self._pending:
            msg = link.recv(timeout=30.0)
            if msg is None or msg.kind != "REGISTER":
                raise RuntimeError(f"endpoint did not register: {msg!r}")
            hello[msg["robot_id"]] = (msg["namespace"], link)
        if self.registry is None:
            from .manager import RobotRegistry

            self.registry = RobotRegistry()
        self.links = [None] * self.n
        for rid in sorted(hello):
            ns, link = hello[rid]
            assigned = self.registry.register(ns, endpoint=link)
            link.send(P.make("REGISTER_ACK", robot_id=assigned, cycle_ms=CYCLE_MS, substep_ms=SUBSTEP_MS))
            self.links[assigned] = link
        self.started = True

    def _start_threads(self):
        import threading

        from .comm.transport import object_pair, queue_pair

        plant_ends, robot_ends, self._pending = [], [], []
        for i in range(self.n):
            mgr, robot = queue_pair()
            p_end, r_end = object_pair()
            plant_ends.append(p_end)
            robot_ends.append(r_end)
            self._pending.append(mgr)
            t = threading.Thread(target=run_endpoint, daemon=True,
                                 args=(i, self.namespaces[i], robot, r_end, self.mute.get(i)))
            self._workers.append(t)
        self._control, plant_control = object_pair()
        t = threading.Thread(target=run_plant, daemon=True,
                             args=(self.scenario, self.perturbation, plant_ends, plant_control))
        self._workers.append(t)
        for t in self._workers:
            t.start()

    def _start_processes(self):
        import multiprocessing as mp
        import socket

        from .comm.transport import SocketLink

        ctx = mp.get_context("spawn")
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.bind(("127.0.0.1", 0))
        server.listen(self.n)
        address = server.getsockname()
        plant_ends = []
        for i in range(self.n):
            p_end, r_end = ctx.Pipe()
            plant_ends.append(p_end)
            proc = ctx.Process(target=_endpoint_process, daemon=True,
                               args=(i, self.namespaces[i], address, r_end, self.mute.get(i)))
            self._workers.append(proc)
        self._control, plant_control = ctx.Pipe()
        self._workers.append(ctx.Process(target=run_plant, daemon=True,
                                         args=(self.scenario, self.perturbation, plant_ends, plant_control)))
        for p in self._workers:
            p.start()
        server.settimeout(60.0)
        self._pending = []
        for _ in range(self.n):
            conn, _ = server.accept()
            self._pending.append(SocketLink(conn))
        server.close()

    def close(self):
        if not self.started:
            return
        from .comm import protocol as P

        for link in self.links:
            try:
                link.send(P.make("SHUTDOWN"))
            except OSError:
                pass
        try:
            if self._control.poll(5.0):
                while self._control.recv()[0] != "bye":
                    pass
        except (EOFError, OSError):
            pass
        for w in self._workers:
            w.join(timeout=5.0)
            if hasattr(w, "terminate") and w.is_alive():
                w.terminate()
        for link in self.links:
            link.close()
        self.started = False

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    # cycle -----------------------------------------------------------------------
    def _sync_truth(self):
        msg = self._control.recv()
        _, bodies, tick, events = msg
        for r, (pose, odom, dist) in zip(self.world.robots, bodies):
            r.pose, r.odom, r.distance_traveled = pose, odom, dist
        self.world.tick = tick
        return events

    def _pump(self, missing, left):
        deadline = time.monotonic() + left
        for i in missing:
            msg = self.links[i].recv(timeout=max(0.0, deadline - time.monotonic()))
            if msg is not None and msg.kind == "STATE":
                self.receiver.collect(state_from_message(msg))

    def reset(self, seed, start_poses=None) -> list[RobotState]:
        from .comm import protocol as P

        self.start()
        self.episode += 1
        # local mirror of the plant; its reset poses are the nominal starts
        self.world = deploy_world(self.scenario, self.perturbation, seed)
        self.world.rng = None
        poses = start_poses or [r.pose.as_tuple() for r in self.world.robots]
        self.emitter.clear()
        self.receiver.slots = {i: None for i in range(self.n)}
        self.clock_ms = 0
        self._control.send(("reset", seed))
        for i, link in enumerate(self.links):
            link.send(P.make("RESET", episode=self.episode, pose=list(poses[i])))
        # discard anything left over from an aborted episode
        for i, link in enumerate(self.links):
            while True:
                msg = link.recv(timeout=30.0)
                if msg is None:
                    raise GatherTimeoutError(0, [i])
                if msg.kind == "RESET_ACK" and msg["episode"] == self.episode:
                    break
        self._sync_truth()
        self.start_poses = [r.pose.as_tuple() for r in self.world.robots]
        return self.receiver.gather_joint(0, pump=self._pump)

    def execute(self, cycle_id, commands, log=None):
        from .comm import protocol as P

        log = log or _nolog
        self.emitter.emit(commands, cycle_id)
        log("emit")
        due = self.emitter.dispatch(self.clock_ms)
        for env, link in zip(due, self.links):
            link.send(P.make("COMMAND", robot_id=env.robot_id, cycle=cycle_id, v=env.v, w=env.w,
                             exec_ms=env.exec_duration))
        self.clock_ms += CYCLE_MS
        events = self._sync_truth()
        log("execute")
        states = self.receiver.gather_joint(cycle_id, pump=self._pump)
        log("gather")
        return states, events, [(e.v, e.w) for e in due]

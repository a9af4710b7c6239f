"""Emitter and receiver buffers: the timed command/state queues of a cycle.

One control cycle lasts ``cycle_ms`` (100 ms). Each robot's command for the
cycle must land within the first ``send_deadline_ms`` (20 ms); a command
that is missing or late leaves the robot holding what it executed last
cycle (or stopping, if ``hold="stop"``).
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, replace

from ..errors import ArityError, GatherTimeoutError, NotFoundError

CYCLE_MS = 100
SUBSTEP_MS = 20
SEND_DEADLINE_MS = 20
GATHER_TIMEOUT_MS = 200


@dataclass(frozen=True)
class CommandEnvelope:
    robot_id: int
    namespace: str
    cycle_id: int
    v: float
    w: float
    exec_duration: int = CYCLE_MS
    issue_time: float | None = None
    held: bool = False

    def __post_init__(self):
        if self.exec_duration <= 0 or self.exec_duration % SUBSTEP_MS:
            raise ValueError(f"exec_duration must be a positive multiple of {SUBSTEP_MS} ms")

    @property
    def action(self):
        return (self.v, self.w)


@dataclass(frozen=True)
class RobotState:
    robot_id: int
    cycle_id: int
    odom: tuple
    lidar: tuple
    collided: bool = False
    in_goal: bool = False


class EmitterBuffer:
    """Per-robot FIFO command queues dispatched once per cycle.

    ``latency`` is an optional callable ``robot_id -> ms`` used in deployment
    mode to model transport delay; with ``None`` every command is on time.
    """

    def __init__(self, namespaces, send_deadline_ms=SEND_DEADLINE_MS, cycle_ms=CYCLE_MS,
                 hold="previous", latency=None):
        if hold not in ("previous", "stop"):
            raise ValueError("hold must be 'previous' or 'stop'")
        self.namespaces = list(namespaces)
        self.send_deadline_ms = send_deadline_ms
        self.cycle_ms = cycle_ms
        self.hold = hold
        self.latency = latency
        self.queues = [deque() for _ in self.namespaces]
        self.dropped = 0
        self.held = 0
        self._last_cycle = [-1] * len(self.namespaces)
        self._clock = None
        self.reset_hold()

    def reset_hold(self):
        self.current = [
            CommandEnvelope(i, ns, -1, 0.0, 0.0, self.cycle_ms, None, True)
            for i, ns in enumerate(self.namespaces)
        ]

    def clear(self):
        for q in self.queues:
            q.clear()
        self._last_cycle = [-1] * len(self.namespaces)
        self._clock = None
        self.reset_hold()

    def emit(self, joint_action, cycle_id: int) -> int:
        if len(joint_action) != len(self.namespaces):
            raise ArityError(f"{len(joint_action)} actions for {len(self.namespaces)} registered robots")
        for i, (v, w) in enumerate(joint_action):
            if cycle_id <= self._last_cycle[i]:
                raise ValueError(f"robot {i}: cycle id {cycle_id} not after {self._last_cycle[i]}")
            self._last_cycle[i] = cycle_id
            self.queues[i].append(
                CommandEnvelope(i, self.namespaces[i], cycle_id, float(v), float(w), self.cycle_ms))
        return len(joint_action)

    def dispatch(self, clock_ms: float) -> list[CommandEnvelope]:
        """Commands executed during the cycle starting at ``clock_ms``.

        Returns one envelope per robot; envelopes with ``held=True`` are the
        hold-rule fallback rather than a fresh command.
        """
        if self._clock is not None and clock_ms < self._clock:
            raise ValueError(f"clock went backwards: {clock_ms} < {self._clock}")
        self._clock = clock_ms
        out = []
        for i, q in enumerate(self.queues):
            env = q.popleft() if q else None
            if env is not None and self.latency is not None:
                if self.latency(i) > self.send_deadline_ms:
                    self.dropped += 1
                    env = None
            if env is None:
                self.held += 1
                prev = self.current[i]
                if self.hold == "stop":
                    prev = replace(prev, v=0.0, w=0.0)
                env = replace(prev, held=True, issue_time=clock_ms)
            else:
                env = replace(env, issue_time=clock_ms)
            self.current[i] = env
            out.append(env)
        return out


class ReceiverBuffer:
    """Latest-state slots per robot, gathered into one joint state per cycle."""

    def __init__(self, robot_ids, mode="sim", timeout_ms=GATHER_TIMEOUT_MS):
        if mode not in ("sim", "deploy"):
            raise ValueError("mode must be 'sim' or 'deploy'")
        self.robot_ids = list(robot_ids)
        self.mode = mode
        self.timeout_ms = timeout_ms
        self.slots: dict[int, RobotState | None] = {i: None for i in self.robot_ids}
        self.warnings = 0

    def collect(self, state: RobotState) -> None:
        if state.robot_id not in self.slots:
            raise NotFoundError(f"state from unregistered robot {state.robot_id!r}")
        cur = self.slots[state.robot_id]
        if cur is not None and cur.cycle_id == state.cycle_id:
            self.warnings += 1
        self.slots[state.robot_id] = state

    def missing(self, cycle_id) -> list[int]:
        return [i for i, s in self.slots.items() if s is None or s.cycle_id != cycle_id]

    def gather_joint(self, cycle_id: int, pump=None) -> list[RobotState]:
        """States for ``cycle_id`` in robot-id order.

        In deploy mode ``pump(missing_ids, seconds_left)`` is called until all
        slots are filled or the timeout elapses; it should receive whatever
        arrives and feed it to :meth:`collect`.
        """
        missing = self.missing(cycle_id)
        if missing and self.mode == "sim":
            raise AssertionError(f"sim gather for cycle {cycle_id}: robots {missing} have no state")
        if missing:
            deadline = time.monotonic() + self.timeout_ms / 1000.0
            while missing:
                left = deadline - time.monotonic()
                if left <= 0 or pump is None:
                    raise GatherTimeoutError(cycle_id, missing)
                pump(missing, left)
                missing = self.missing(cycle_id)
        states = [self.slots[i] for i in self.robot_ids]
        assert len({s.cycle_id for s in states}) == 1
        return states

"""metrics.csv: one append-only row per training episode."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError

METRICS_VERSION = 1


@dataclass
class MetricsRow:
    episode: int
    returns: list[float]
    successes: list[bool]
    joint_success: bool
    steps: int
    epsilon: float
    trail20: float

    def cells(self) -> list[str]:
        return [
            str(self.episode),
            *(repr(float(r)) for r in self.returns),
            *("1" if s else "0" for s in self.successes),
            "1" if self.joint_success else "0",
            str(self.steps),
            repr(float(self.epsilon)),
            repr(float(self.trail20)),
        ]


def header(n_robots: int) -> list[str]:
    return [
        "episode",
        *(f"ret_r{i}" for i in range(n_robots)),
        *(f"succ_r{i}" for i in range(n_robots)),
        "succ_joint",
        "steps",
        "epsilon",
        "trail20",
    ]


def row_from_record(rec, trail: float) -> MetricsRow:
    return MetricsRow(rec.episode, rec.returns, rec.robot_success, rec.success, rec.steps,
                      rec.epsilon, trail)


class MetricsWriter:
    def __init__(self, path, n_robots):
        self.path = Path(path)
        self.fh = self.path.open("w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(header(n_robots))
        self.rows = 0

    def append(self, row: MetricsRow):
        self.writer.writerow(row.cells())
        self.fh.flush()
        self.rows += 1

    def close(self):
        self.fh.close()


def read_metrics(path) -> list[dict]:
    """Parse metrics.csv into dicts of floats; raises ConfigError on bad input."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            head = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if head is None or not head or head[0] != "episode" or "succ_joint" not in head:
        raise ConfigError(f"{path}: missing or unrecognized metrics header")
    n_robots = sum(1 for h in head if h.startswith("ret_r"))
    if head != header(n_robots):
        raise ConfigError(f"{path}: header does not match metrics format v{METRICS_VERSION}")
    out = []
    for lineno, cells in enumerate(rows, start=2):
        if len(cells) != len(head):
            raise ConfigError(f"{path}:{lineno}: expected {len(head)} cells, got {len(cells)}")
        try:
            out.append({h: float(c) for h, c in zip(head, cells)})
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric cell") from None
    return out

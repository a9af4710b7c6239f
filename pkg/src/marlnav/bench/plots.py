"""SVG figures: learning curves from metrics.csv and trajectory plots."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .metrics import read_metrics

_SVG_META = {"Date": None, "Creator": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "marlnav"
    return plt


def trailing_series(flags, window=20) -> np.ndarray:
    """Mean of the last ``window`` flags at every episode (shorter at the start)."""
    flags = np.asarray(flags, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(flags)])
    idx = np.arange(1, len(flags) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def emit_plots(metrics_csv, out_dir, window=20) -> list[Path]:
    rows = read_metrics(metrics_csv)
    if not rows:
        raise ConfigError(f"{metrics_csv}: no episodes to plot")
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ep = np.array([r["episode"] for r in rows])
    ret_keys = [k for k in rows[0] if k.startswith("ret_r")]

    fig, ax = plt.subplots(figsize=(7, 4))
    for k in ret_keys:
        ax.plot(ep, [r[k] for r in rows], lw=0.8, label=k.replace("ret_", "robot "))
    ax.set_xlabel("episode")
    ax.set_ylabel("episode return")
    ax.legend(loc="lower right")
    reward_path = out / "reward.svg"
    fig.savefig(reward_path, format="svg", metadata=_SVG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ep, trailing_series([r["succ_joint"] for r in rows], window), lw=1.2)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"joint success rate (trailing {window})")
    success_path = out / "success.svg"
    fig.savefig(success_path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return [reward_path, success_path]


def plot_trajectories(scenario, episodes, path) -> Path:
    """Paths of every robot over the room, goals and obstacles.

    ``scenario`` may be None (empty log): only the default room is drawn.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 5))
    x0, y0, x1, y1 = scenario.bounds if scenario is not None else (0.0, 0.0, 6.0, 4.0)
    ax.add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, lw=1.5))
    if scenario is not None:
        for bx0, by0, bx1, by1 in scenario.obstacles:
            ax.add_patch(plt.Rectangle((bx0, by0), bx1 - bx0, by1 - by0, color="tab:orange"))
        for gx, gy, gr in scenario.goals:
            ax.add_patch(plt.Circle((gx, gy), gr, color="0.7", alpha=0.6))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for ep in episodes:
        for i in range(len(ep["start_poses"])):
            xs = [ep["start_poses"][i][0]] + [c["poses"][i][0] for c in ep["cycles"]]
            ys = [ep["start_poses"][i][1]] + [c["poses"][i][1] for c in ep["cycles"]]
            ax.plot(xs, ys, lw=0.8, color=colors[i % len(colors)])
    ax.set_xlim(x0 - 0.1, x1 + 0.1)
    ax.set_ylim(y0 - 0.1, y1 + 0.1)
    ax.set_aspect("equal")
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path

"""Command line: ``marlnav train | eval | deploy | replay | plot``.

Exit codes: 0 ok, 1 usage or config error, 2 runtime failure,
3 replay divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..backends import DeployPerturbation
from ..config import load_config
from ..errors import CheckpointError, ConfigError, MarlNavError, ReplayDivergenceError
from ..manager import run_evaluation, run_training
from .metrics import MetricsWriter, row_from_record
from .plots import emit_plots, plot_trajectories
from .replay import replay_log, write_trajectory_log

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("marlnav")


def _manifest(run_config, seed, mode, extra=None):
    m = {
        "mode": mode,
        "seed": seed,
        "config_digest": run_config.digest(),
        "config": run_config.to_dict(),
        "versions": {
            "marlnav": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    m.update(extra or {})
    return m


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.episodes is not None:
        cfg = replace(cfg, training=replace(cfg.training, episodes=args.episodes))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out / "metrics.csv", cfg.scenario.n_robots)

    def on_episode(rec, trail):
        writer.append(row_from_record(rec, trail))
        if not args.quiet and (rec.episode % 20 == 0 or rec.success):
            print(f"episode {rec.episode:5d}  steps {rec.steps:3d}  success {int(rec.success)}"
                  f"  trail {trail:.2f}  eps {rec.epsilon:.3f}", flush=True)

    try:
        result = run_training(cfg, seed=args.seed, out_dir=out, on_episode=on_episode, trace_last=True)
    finally:
        writer.close()
    if result.trace:
        write_trajectory_log(out / "trajectory_last.jsonl", cfg, result.trace)
    else:
        write_trajectory_log(out / "trajectory_last.jsonl", cfg, [])
    extra = {
        "episodes_run": len(result.records),
        "converged_at": result.converged_at,
        "target_reached_at": result.target_reached_at,
    }
    (out / "manifest.json").write_text(json.dumps(_manifest(cfg, args.seed, "SimTrain", extra), indent=2) + "\n")
    print(f"trained {len(result.records)} episodes; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    backend = args.backend
    episodes = args.episodes if args.episodes is not None else (50 if backend == "deploy" else 200)
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    perturbation = DeployPerturbation(seed=args.seed) if backend == "deploy" else None
    trace = [] if args.out else None
    res = run_evaluation(args.checkpoint, cfg, backend=backend, episodes=episodes, seed=args.seed,
                         perturbation=perturbation, transport=args.transport, trace=trace)
    failures = sum(r.failure is not None for r in res.records)
    print(f"{backend}: success {res.success_rate:.3f} over {episodes} episodes"
          + (f" ({failures} aborted)" if failures else ""))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_log(out / "trajectory_eval.jsonl", cfg, trace, backend=backend,
                             perturbation=perturbation)
        summary = {"backend": backend, "episodes": episodes, "success_rate": res.success_rate,
                   "aborted": failures}
        (out / "eval.json").write_text(json.dumps(summary, indent=2) + "\n")
        mode = "Deploy" if backend == "deploy" else "SimEval"
        extra = {"checkpoint": str(args.checkpoint), "backend": backend}
        (out / "manifest.json").write_text(json.dumps(_manifest(cfg, args.seed, mode, extra), indent=2) + "\n")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        cfg, episodes = replay_log(args.log)
    except ReplayDivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    n_cycles = sum(len(ep["cycles"]) for ep in episodes)
    print(f"replayed {len(episodes)} episodes, {n_cycles} cycles, 0 divergences")
    out = Path(args.out) if args.out else Path(args.log).parent
    out.mkdir(parents=True, exist_ok=True)
    svg = plot_trajectories(cfg.scenario if cfg is not None else None, episodes, out / "trajectory.svg")
    print(svg)
    return EXIT_OK


def cmd_plot(args) -> int:
    paths = emit_plots(args.metrics, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marlnav", description="multi-robot navigation with independent DQN learners")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from scratch in simulation")
    t.add_argument("--config", default="scenario1")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name in ("eval", "deploy"):
        e = sub.add_parser(name, help="greedy evaluation of a checkpoint" if name == "eval"
                           else "evaluate on the perturbed out-of-process backend")
        e.add_argument("--config", default="scenario1")
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--episodes", type=int)
        e.add_argument("--out")
        e.add_argument("--transport", choices=("process", "inprocess"), default="process")
        if name == "eval":
            e.add_argument("--backend", choices=("sim", "deploy"), default="sim")
        else:
            e.set_defaults(backend="deploy")
        e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="re-simulate a trajectory log and check it")
    r.add_argument("log")
    r.add_argument("--out", help="directory for trajectory.svg (default: next to the log)")
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="reward and success curves from metrics.csv")
    pl.add_argument("metrics")
    pl.add_argument("--out", default=".")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplayDivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MarlNavError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

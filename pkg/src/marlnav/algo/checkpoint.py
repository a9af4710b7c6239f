"""Binary checkpoint format.

Layout: ``b"MRL1"``, a 4-byte big-endian metadata length, UTF-8 JSON
metadata, then for each agent its online and then target parameters as
little-endian float64, layer by layer (weights row-major, then biases).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..config import AlgorithmConfig
from ..errors import (
    ArchitectureMismatchError,
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .dqn import MultiDQN

MAGIC = b"MRL1"
VERSION = 1


def checkpoint_bytes(algo: MultiDQN, scenario_name="", seed=None) -> bytes:
    meta = {
        "version": VERSION,
        "n_agents": algo.n_agents,
        "layer_sizes": list(algo.layer_sizes),
        "n_actions": algo.n_actions,
        "gamma": algo.cfg.gamma,
        "hyperparameters": algo.cfg.to_dict(),
        "scenario_name": scenario_name,
        "seed": algo.seed if seed is None else seed,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack(">I", len(blob)), blob]
    for online, target in algo.parameters():
        parts.append(online.astype("<f8").tobytes())
        parts.append(target.astype("<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(algo: MultiDQN, path, scenario_name="", seed=None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(algo, scenario_name, seed))
    tmp.replace(path)


def read_checkpoint(data: bytes):
    """Parse checkpoint bytes into ``(metadata, [(online, target), ...])``."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {data[:4]!r})")
    if len(data) < 8:
        raise TruncatedCheckpointError("missing metadata length")
    (n,) = struct.unpack(">I", data[4:8])
    if len(data) < 8 + n:
        raise TruncatedCheckpointError("metadata cut short")
    try:
        meta = json.loads(data[8:8 + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from None
    if meta.get("version") != VERSION:
        raise VersionMismatchError(f"checkpoint version {meta.get('version')!r}, expected {VERSION}")
    sizes = meta["layer_sizes"]
    n_params = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    hp = meta.get("hyperparameters", {})
    n_nets = 1 if hp.get("share_parameters") else meta["n_agents"]
    want = 8 + n + n_nets * 2 * n_params * 8
    if len(data) < want:
        raise TruncatedCheckpointError(f"expected {want} bytes, found {len(data)}")
    if len(data) > want:
        raise CheckpointError(f"{len(data) - want} unexpected trailing bytes")
    flat = np.frombuffer(data, dtype="<f8", offset=8 + n).astype(float)
    blocks = flat.reshape(n_nets, 2, n_params)
    return meta, [(b[0].copy(), b[1].copy()) for b in blocks]


def load_checkpoint(path, n_agents=None, obs_dim=None) -> MultiDQN:
    """Rebuild the agents; ``n_agents``/``obs_dim`` guard against a mismatched scenario."""
    meta, blocks = read_checkpoint(Path(path).read_bytes())
    if n_agents is not None and meta["n_agents"] != n_agents:
        raise ArchitectureMismatchError(
            f"checkpoint has {meta['n_agents']} agents, scenario has {n_agents} robots")
    sizes = meta["layer_sizes"]
    if obs_dim is not None and sizes[0] != obs_dim:
        raise ArchitectureMismatchError(f"checkpoint input size {sizes[0]}, observations have {obs_dim}")
    hp = dict(meta["hyperparameters"])
    hp["hidden"] = tuple(hp["hidden"])
    cfg = AlgorithmConfig(**hp)
    if [sizes[0], *cfg.hidden, meta["n_actions"] + 1] != sizes:
        raise ArchitectureMismatchError(f"layer sizes {sizes} disagree with hyperparameters")
    algo = MultiDQN(meta["n_agents"], sizes[0], meta["n_actions"], cfg, seed=meta["seed"])
    for agent, (online, target) in zip(algo.agents, blocks):
        agent.online.params[:] = online
        agent.target.params[:] = target
    algo.meta = meta
    return algo

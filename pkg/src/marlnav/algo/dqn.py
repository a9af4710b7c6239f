"""Independent dueling double-DQN learners, one per robot."""
from __future__ import annotations

import numpy as np

from ..config import AlgorithmConfig
from ..errors import NotReadyError, TrainingDivergedError
from .mlp import Mlp, RMSProp
from .replay import PrioritizedReplay


def double_dqn_target(reward, next_obs, done, gamma, online: Mlp, target: Mlp):
    """r if terminal, else r + gamma * Q_target(s', argmax_a Q_online(s', a)).

    Scalars or batches; ``next_obs`` must already be in network input units.
    """
    reward = np.asarray(reward, dtype=float)
    done = np.asarray(done, dtype=bool)
    q_next_online = online.q_values(next_obs)
    q_next_target = target.q_values(next_obs)
    best = np.argmax(q_next_online, axis=-1)
    boot = np.take_along_axis(np.atleast_2d(q_next_target), np.atleast_1d(best)[:, None], axis=1)[:, 0]
    if reward.ndim == 0:
        boot = boot[0]
    return np.where(done, reward, reward + gamma * boot)


class DqnAgent:
    def __init__(self, obs_dim, n_actions, cfg: AlgorithmConfig, rng: np.random.Generator,
                 online: Mlp | None = None, replay: PrioritizedReplay | None = None):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.rng = rng
        self.layer_sizes = [obs_dim, *cfg.hidden, n_actions + 1]
        self.online = online if online is not None else Mlp(self.layer_sizes, rng=rng)
        self.target = self.online.copy()
        self.opt = RMSProp(self.online.n_params, cfg.lr, cfg.rms_decay, cfg.rms_eps)
        self.replay = replay if replay is not None else PrioritizedReplay(
            cfg.buffer_capacity, obs_dim, cfg.alpha, cfg.priority_eps, rng)
        self.grad_steps = 0
        self.beta = cfg.beta_start

    def scale(self, obs):
        return np.asarray(obs, dtype=float) * self.cfg.input_scale

    def q(self, obs):
        return self.online.q_values(self.scale(obs))

    def act(self, obs, epsilon: float) -> int:
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.n_actions))
        return int(np.argmax(self.q(obs)))

    def sync_target(self):
        self.target.params[:] = self.online.params

    def train_step(self) -> float:
        """One prioritized double-DQN gradient step; raises NotReadyError if the
        replay is too small."""
        cfg = self.cfg
        batch, weights, leaves = self.replay.sample(cfg.batch_size, self.beta)
        s = self.scale(batch.obs)
        s2 = self.scale(batch.next_obs)
        y = double_dqn_target(batch.rewards, s2, batch.dones, cfg.gamma, self.online, self.target)
        q = self.online.q_values(s, cache=True)
        rows = np.arange(len(y))
        td = y - q[rows, batch.actions]
        loss = float(np.mean(weights * td * td))
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                "non-finite TD loss",
                {"grad_steps": self.grad_steps, "td": td, "weights": weights, "leaves": leaves},
            )
        grad_q = np.zeros_like(q)
        grad_q[rows, batch.actions] = -2.0 * weights * td / len(y)
        grad = self.online.backward_q(grad_q)
        if cfg.grad_clip:
            norm = float(np.sqrt(grad @ grad))
            if norm > cfg.grad_clip:
                grad *= cfg.grad_clip / norm
        self.opt.step(self.online.params, grad)
        if not np.all(np.isfinite(self.online.params)):
            raise TrainingDivergedError("non-finite parameters after update",
                                        {"grad_steps": self.grad_steps})
        self.replay.update_priorities(leaves, td)
        self.grad_steps += 1
        if self.grad_steps % cfg.target_sync == 0:
            self.sync_target()
        return loss


class MultiDQN:
    """Independent learners: each robot acts on its own observation row.

    With ``share_parameters`` every robot uses agent 0's networks and replay.
    """

    name = "multi_dqn"

    def __init__(self, n_agents, obs_dim, n_actions, cfg: AlgorithmConfig | None = None, seed=0):
        self.cfg = cfg or AlgorithmConfig()
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(ss.spawn(1)[0])
        n_nets = 1 if self.cfg.share_parameters else n_agents
        self.agents = [DqnAgent(obs_dim, n_actions, self.cfg, np.random.default_rng(child))
                       for child in ss.spawn(n_nets + 1)[1:]]
        self.epsilon = self.cfg.eps_start
        self.cycles = 0

    def agent(self, i) -> DqnAgent:
        return self.agents[0 if self.cfg.share_parameters else i]

    @property
    def layer_sizes(self):
        return self.agents[0].layer_sizes

    def begin_episode(self, episode: int, total_episodes: int) -> None:
        cfg = self.cfg
        frac = min(1.0, episode / max(1, cfg.eps_decay_episodes))
        self.epsilon = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
        bfrac = min(1.0, episode / max(1, total_episodes))
        for a in self.agents:
            a.beta = cfg.beta_start + bfrac * (cfg.beta_end - cfg.beta_start)

    def select_actions(self, joint_obs, epsilon=None) -> list[int]:
        eps = self.epsilon if epsilon is None else epsilon
        return select_actions(self, joint_obs, eps, self.rng)

    def observe(self, obs, actions, rewards, next_obs, terminal) -> None:
        for i in range(self.n_agents):
            self.agent(i).replay.add(obs[i], actions[i], rewards[i], next_obs[i], terminal)

    def train(self) -> list[float] | None:
        self.cycles += 1
        cfg = self.cfg
        if self.cycles % cfg.train_every:
            return None
        losses = []
        for a in self.agents:
            if len(a.replay) < max(cfg.batch_size, cfg.learning_starts):
                continue
            try:
                losses.append(a.train_step())
            except NotReadyError:
                continue
        return losses

    def parameters(self):
        """Flat (online, target) parameter pairs in agent order."""
        return [(a.online.params, a.target.params) for a in self.agents]


def select_actions(algo: MultiDQN, joint_obs, epsilon, rng) -> list[int]:
    """Per robot: uniform random action with probability ``epsilon``, else greedy."""
    out = []
    for i, obs in enumerate(joint_obs):
        if rng.random() < epsilon:
            out.append(int(rng.integers(algo.n_actions)))
        else:
            out.append(int(np.argmax(algo.agent(i).q(obs))))
    return out

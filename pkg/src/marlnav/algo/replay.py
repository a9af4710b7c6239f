from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NotReadyError
from .sumtree import SumTree


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


class PrioritizedReplay:
    """Ring buffer of transitions sampled in proportion to their priority.

    The stored priority of a transition is ``(|td| + eps) ** alpha``; new
    transitions enter with the largest priority seen so far so that each is
    replayed at least once with high probability.
    """

    def __init__(self, capacity, obs_dim, alpha=0.6, eps=1e-3, rng=None):
        self.capacity = int(capacity)
        self.alpha = alpha
        self.eps = eps
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tree = SumTree(self.capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.pos = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done) -> int:
        if not np.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self.tree.update(i, self.max_priority)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def priority(self, td_error):
        return (np.abs(td_error) + self.eps) ** self.alpha

    def sample(self, batch_size, beta):
        """Stratified proportional sample: one draw per equal slice of the total.

        Returns ``(batch, weights, leaves)``; weights are ``(N * P(i)) ** -beta``
        divided by their maximum.
        """
        if self.size < batch_size:
            raise NotReadyError(f"{self.size} stored transitions, need {batch_size}")
        total = self.tree.total
        seg = total / batch_size
        prefixes = (np.arange(batch_size) + self.rng.random(batch_size)) * seg
        prefixes = np.minimum(prefixes, np.nextafter(total, 0.0))
        leaves = self.tree.sample_batch(prefixes)
        # float rounding can walk past the last stored slot onto an empty leaf
        leaves = np.minimum(leaves, self.size - 1)
        p = self.tree.leaves[leaves] / total
        w = (self.size * p) ** (-beta)
        w /= w.max()
        batch = Batch(self.obs[leaves], self.actions[leaves], self.rewards[leaves],
                      self.next_obs[leaves], self.dones[leaves])
        return batch, w, leaves

    def update_priorities(self, leaves, td_errors) -> None:
        p = self.priority(np.asarray(td_errors, dtype=float))
        self.tree.update_batch(leaves, p)
        self.max_priority = max(self.max_priority, float(p.max()))


def replay_sample(replay: PrioritizedReplay, batch_size, beta):
    return replay.sample(batch_size, beta)

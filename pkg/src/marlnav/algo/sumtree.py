from __future__ import annotations

import numpy as np

from ..errors import RangeError


class SumTree:
    """Binary tree of partial priority sums over ``capacity`` leaves.

    Stored as a 1-indexed heap: node ``k`` has children ``2k`` and ``2k+1``
    and leaf ``i`` sits at ``capacity + i``. Parents are always recomputed
    from their children (never adjusted by deltas), so sums do not drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        cap = 1
        while cap < capacity:
            cap *= 2
        self.capacity = cap
        self.depth = cap.bit_length() - 1
        self.tree = np.zeros(2 * cap)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, leaf):
        return self.tree[self.capacity + leaf]

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity:]

    def update(self, leaf: int, priority: float) -> None:
        if not 0 <= leaf < self.capacity:
            raise IndexError(f"leaf {leaf} outside 0..{self.capacity - 1}")
        if not priority >= 0:
            raise ValueError(f"priority must be >= 0, got {priority!r}")
        k = self.capacity + leaf
        t = self.tree
        t[k] = priority
        k //= 2
        while k >= 1:
            t[k] = t[2 * k] + t[2 * k + 1]
            k //= 2

    def update_batch(self, leaves, priorities) -> None:
        leaves = np.asarray(leaves, dtype=np.int64)
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities < 0) or not np.all(np.isfinite(priorities)):
            raise ValueError("priorities must be finite and >= 0")
        t = self.tree
        nodes = self.capacity + leaves
        # later duplicates win, as with sequential updates
        t[nodes] = priorities
        for _ in range(self.depth):
            nodes = nodes // 2
            # duplicate parents all receive the same value
            t[nodes] = t[2 * nodes] + t[2 * nodes + 1]

    def sample(self, prefix: float) -> int:
        """Leaf whose cumulative-priority interval [lo, hi) contains ``prefix``."""
        total = self.tree[1]
        if not 0 <= prefix < total:
            raise RangeError(f"prefix {prefix!r} outside [0, {total!r})")
        t = self.tree
        k = 1
        while k < self.capacity:
            left = 2 * k
            if prefix < t[left]:
                k = left
            else:
                prefix -= t[left]
                k = left + 1
        return k - self.capacity

    def sample_batch(self, prefixes) -> np.ndarray:
        prefixes = np.array(prefixes, dtype=float)
        total = self.tree[1]
        if np.any(prefixes < 0) or np.any(prefixes >= total):
            raise RangeError(f"prefixes must lie in [0, {total!r})")
        t = self.tree
        k = np.ones(prefixes.shape, dtype=np.int64)
        for _ in range(self.depth):
            k *= 2
            ls = t[k]
            go_right = prefixes >= ls
            prefixes -= ls * go_right
            k += go_right
        return k - self.capacity

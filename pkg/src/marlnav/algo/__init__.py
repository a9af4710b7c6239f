"""Learning algorithms. New algorithms register in ``ALGORITHMS``; the manager
only relies on ``select_actions``, ``observe``, ``train``, ``begin_episode``
and ``epsilon``."""
from .dqn import DqnAgent, MultiDQN, double_dqn_target, select_actions
from .mlp import Mlp, dueling_combine, mlp_backward, mlp_forward
from .replay import PrioritizedReplay, replay_sample
from .sumtree import SumTree

ALGORITHMS = {"multi_dqn": MultiDQN}

__all__ = [
    "ALGORITHMS",
    "DqnAgent",
    "Mlp",
    "MultiDQN",
    "PrioritizedReplay",
    "SumTree",
    "double_dqn_target",
    "dueling_combine",
    "mlp_backward",
    "mlp_forward",
    "replay_sample",
    "select_actions",
]

"""Multi-robot goal navigation with independent dueling double DQN learners.

A 2D differential-drive simulator, a joint-action environment, a
cycle-synchronised command/state channel, an orchestrator for training,
evaluation and deployment to a perturbed out-of-process backend, and a small
benchmark harness.
"""
__version__ = "0.1.0"

from .backends import DeployBackend, DeployPerturbation, SimBackend
from .config import AlgorithmConfig, RunConfig, ScenarioConfig, TrainingConfig, load_config
from .env import MultiRobotEnv, RewardConfig, StepResult
from .manager import Manager, RunMode, convergence_check, run_evaluation, run_training

__all__ = [
    "AlgorithmConfig",
    "DeployBackend",
    "DeployPerturbation",
    "Manager",
    "MultiRobotEnv",
    "RewardConfig",
    "RunConfig",
    "RunMode",
    "ScenarioConfig",
    "SimBackend",
    "StepResult",
    "TrainingConfig",
    "convergence_check",
    "load_config",
    "run_evaluation",
    "run_training",
]

from .env import GateEnv, PointEnv
from .sac import ReplayBuffer, SacAgent, SacConfig, policy_sample
from .train import TrainResult, evaluate_policy, train

__all__ = [
    "GateEnv", "PointEnv", "ReplayBuffer", "SacAgent", "SacConfig",
    "TrainResult", "evaluate_policy", "policy_sample", "train",
]

from .dqn import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, sync_target, train_step
from .network import Adam, NonFiniteError, QNetwork
from .policy import (
    OBS_SIZE,
    EpsilonSchedule,
    encode_all,
    encode_state,
    epsilon,
    greedy,
    legal_mask,
    reward,
    select_action,
    select_actions,
)
from .replay import ReplayBuffer
from .training import EpisodeResult, Learner, TrainingResult, run_episode, run_training

__all__ = [
    "QNetwork", "Adam", "NonFiniteError", "ReplayBuffer", "EpsilonSchedule", "epsilon", "reward",
    "encode_state", "encode_all", "legal_mask", "greedy", "select_action", "select_actions", "OBS_SIZE",
    "train_step", "sync_target", "save_checkpoint", "load_checkpoint", "Checkpoint", "CheckpointError",
    "Learner", "run_episode", "run_training", "EpisodeResult", "TrainingResult",
]

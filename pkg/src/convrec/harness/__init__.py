"""Experiment orchestration: episodes, baselines, metrics, training, I/O."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, TrainConfig, fingerprint, load_config
from .metrics import EpisodeLog, MetricsReport, compute_metrics, hdcg_gain
from .policies import AbsGreedyPolicy, AgentPolicy, MaxEntropyPolicy
from .runner import episode_rng, run_episode
from .training import evaluate, train

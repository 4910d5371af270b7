"""Experiment configuration: nested JSON, CLI overrides, stable fingerprint."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..agent import AgentConfig
from ..embed import TransEConfig
from ..env import RewardConfig


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    eval_every: int = 100  # training episodes per logged epoch
    eval_episodes: int = 100
    train_every: int = 1  # environment steps per gradient step
    max_entropy_rec_prob: float = 0.2
    seed: int = 1

    def validate(self) -> None:
        if self.episodes < 0 or self.eval_every < 1 or self.eval_episodes < 1 or self.train_every < 1:
            raise ValueError("episodes >= 0; eval_every, eval_episodes, train_every >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transe: TransEConfig = field(default_factory=TransEConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)

    def validate(self) -> None:
        self.agent.validate()
        self.train.validate()
        self.transe.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {"agent", "train", "transe", "rewards"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = ExperimentConfig(
            agent=AgentConfig.from_dict(d.get("agent", {})),
            train=_build(TrainConfig, d.get("train", {})),
            transe=_build(TransEConfig, d.get("transe", {})),
            rewards=_build(RewardConfig, d.get("rewards", {})),
        )
        cfg.validate()
        return cfg


def _build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def canonical_json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def fingerprint(config: ExperimentConfig | dict) -> str:
    d = config.to_dict() if isinstance(config, ExperimentConfig) else config
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (missing keys take defaults) and apply dotted
    overrides such as ``{"train.episodes": 500}``."""
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ValueError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(d)

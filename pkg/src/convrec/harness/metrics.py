"""Episode logs and the conversational metrics SR@t, AT and hDCG."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..env import MAX_TURNS, REC_SIZE


@dataclass
class EpisodeLog:
    user: int
    target: int
    turns: list[dict] = field(default_factory=list)
    success: bool = False
    success_turn: int | None = None
    success_rank: int | None = None
    max_turns: int = MAX_TURNS

    @property
    def n_turns(self) -> int:
        return self.success_turn if self.success else self.max_turns

    def validate(self) -> None:
        if self.success:
            if not (1 <= (self.success_turn or 0) <= self.max_turns):
                raise ValueError("success turn out of range")
            if not (1 <= (self.success_rank or 0) <= REC_SIZE):
                raise ValueError("success rank out of range")
            if len(self.turns) != self.success_turn:
                raise ValueError("turn records do not match the success turn")
        elif len(self.turns) not in (0, self.max_turns):
            raise ValueError("a failed episode must run to the turn limit")

    def to_dict(self) -> dict:
        return {
            "user": self.user,
            "target": self.target,
            "success": self.success,
            "success_turn": self.success_turn,
            "success_rank": self.success_rank,
            "turns": self.turns,
        }


def hdcg_gain(t: int, k: int) -> float:
    """Gain for a success at turn ``t`` and list position ``k`` (both 1-based).

    The turn discount interpolates between ``1/log2(t+2)`` and ``1/log2(t+1)``
    by how high the target sits in the list, so earlier turns always beat
    later ones and higher ranks beat lower ones within a turn.
    """
    if t < 1 or k < 1:
        raise ValueError("turn and rank are 1-based")
    late, early = 1.0 / math.log2(t + 2), 1.0 / math.log2(t + 1)
    return late + (early - late) / math.log2(k + 1)


@dataclass
class MetricsReport:
    sr: np.ndarray  # sr[t-1] = SR@t
    at: float
    hdcg: float
    episodes: int
    fingerprint: str = ""

    @property
    def sr15(self) -> float:
        return float(self.sr[-1])

    def sr_at(self, t: int) -> float:
        return float(self.sr[t - 1])

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "sr": [float(x) for x in self.sr],
            "sr15": self.sr15,
            "at": self.at,
            "hdcg": self.hdcg,
            "fingerprint": self.fingerprint,
        }


def compute_metrics(logs, max_turns: int = MAX_TURNS, fingerprint: str = "") -> MetricsReport:
    logs = list(logs)
    if not logs:
        raise ValueError("no episodes to score")
    n = len(logs)
    hits = np.zeros(max_turns)
    turns = 0
    gain = 0.0
    for log in logs:
        if log.success:
            hits[log.success_turn - 1] += 1
            turns += log.success_turn
            gain += hdcg_gain(log.success_turn, log.success_rank)
        else:
            turns += max_turns
    return MetricsReport(np.cumsum(hits) / n, turns / n, gain / n, n, fingerprint)

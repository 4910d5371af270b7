"""Policies that can drive an episode: the learned agent and two rule baselines."""

from __future__ import annotations

import math

import numpy as np

from .. import agent as ag
from ..env import REC_SIZE, AgentMove, SessionState, rank_items


class AgentPolicy:
    def __init__(self, nets: ag.PolicyNetworks):
        self.nets = nets

    def decide(self, state: SessionState, rng: np.random.Generator, mode: str = "greedy", eps: float = 0.0) -> ag.Decision:
        return ag.act(self.nets, state, rng, mode, eps)


def greedy_scores(state: SessionState) -> dict[int, float]:
    """``|P_v & P_acc| - |P_v & P_rej|`` for every candidate item."""
    M = state.catalog.membership
    items = sorted(state.v_cand)
    acc, rej = sorted(state.p_acc), sorted(state.p_rej)
    score = M[np.ix_(items, acc)].sum(axis=1) - M[np.ix_(items, rej)].sum(axis=1) if items else []
    return dict(zip(items, np.asarray(score, dtype=np.float64).tolist()))


class AbsGreedyPolicy:
    """Recommends every turn; never asks."""

    def __init__(self, k: int = REC_SIZE):
        self.k = k

    def decide(self, state, rng, mode="greedy", eps=0.0) -> ag.Decision:
        ranking = rank_items(greedy_scores(state))
        return ag.Decision(AgentMove.rec(ranking[: self.k]), ranking, ag.REC, np.eye(2)[ag.REC], None)


def binary_entropy(q: float) -> float:
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return -q * math.log(q) - (1 - q) * math.log(1 - q)


class MaxEntropyPolicy:
    """Asks the most informative attribute, or recommends with probability ``rec_prob``."""

    def __init__(self, rec_prob: float = 0.2, k: int = REC_SIZE):
        if not 0.0 <= rec_prob <= 1.0:
            raise ValueError("rec_prob must be in [0, 1]")
        self.rec_prob = rec_prob
        self.k = k

    def decide(self, state, rng, mode="greedy", eps=0.0) -> ag.Decision:
        ranking = rank_items(greedy_scores(state))
        recommend = not state.p_cand or rng.random() < self.rec_prob
        if recommend:
            return ag.Decision(AgentMove.rec(ranking[: self.k]), ranking, ag.REC, np.eye(2)[ag.REC], None)
        items = sorted(state.v_cand)
        attrs = sorted(state.p_cand)
        cover = state.catalog.membership[np.ix_(items, attrs)].mean(axis=0)
        ent = {p: binary_entropy(float(q)) for p, q in zip(attrs, cover)}
        best = rank_items(ent)[0]
        return ag.Decision(AgentMove.ask(best), ranking, ag.ASK, np.eye(2)[ag.ASK], None)

"""Episode loop shared by training, evaluation and the baselines."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..agent import TransitionRecord
from ..catalog import Catalog
from ..env import MAX_TURNS, RewardConfig, reset, step, trace_row
from .metrics import EpisodeLog


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator per episode so results do not depend on order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def run_episode(
    policy,
    user: int,
    target: int,
    catalog: Catalog,
    rng: np.random.Generator,
    mode: str = "greedy",
    eps_fn: Callable[[], float] | None = None,
    on_transition: Callable[[TransitionRecord], None] | None = None,
    rewards: RewardConfig = RewardConfig(),
    max_turns: int = MAX_TURNS,
) -> EpisodeLog:
    state = reset(catalog, user, target, rng, max_turns)
    log = EpisodeLog(int(user), int(target), max_turns=max_turns)
    while not state.done:
        eps = eps_fn() if eps_fn is not None else 0.0
        d = policy.decide(state, rng, mode, eps)
        out = step(state, d.move, d.ranking, rewards)
        log.turns.append(trace_row(out.next_state.turn, d.move, out))
        if on_transition is not None:
            on_transition(
                TransitionRecord(state, d.option, d.move, out.intrinsic, out.extrinsic, out.next_state, out.done, d.noise)
            )
        if out.next_state.success:
            log.success = True
            log.success_turn = out.next_state.turn
            log.success_rank = d.move.payload.index(target) + 1
        state = out.next_state
    return log


def run_many(policy, pairs, catalog: Catalog, seed: int, mode: str = "greedy", rewards: RewardConfig = RewardConfig()) -> list[EpisodeLog]:
    return [run_episode(policy, u, v, catalog, episode_rng(seed, i), mode, rewards=rewards) for i, (u, v) in enumerate(pairs)]


def evaluation_pairs(pairs, episodes: int | None) -> list[tuple[int, int]]:
    """One episode per (user, item) pair; short lists are cycled to reach
    ``episodes`` (each repeat gets its own generator, so a different opening
    attribute is drawn)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no evaluation pairs")
    if episodes is None:
        return pairs
    return [pairs[i % len(pairs)] for i in range(episodes)]

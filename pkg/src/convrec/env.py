"""Multi-round conversational recommendation environment.

A session hides a target item from the agent. Each turn the agent either asks
about one attribute or recommends up to ``K`` items; a rule-based simulated
user answers honestly and the candidate sets are recomputed from scratch.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import Catalog

MAX_TURNS = 15
REC_SIZE = 10


class EnvError(ValueError):
    pass


class OptionKind(str, enum.Enum):
    ASK = "ask"
    REC = "rec"


ACC, REJ = "acc", "rej"


@dataclass(frozen=True)
class RewardConfig:
    rec_acc: float = 1.0
    rec_rej: float = -0.1
    ask_acc: float = 0.01
    ask_rej: float = -0.1
    quit: float = -0.3
    option_pos: float = 1.0
    option_neg: float = -1.0


@dataclass(frozen=True)
class AgentMove:
    option: OptionKind
    payload: object  # attribute id for ask, tuple of item ids for rec

    @staticmethod
    def ask(attribute: int) -> "AgentMove":
        return AgentMove(OptionKind.ASK, int(attribute))

    @staticmethod
    def rec(items: Iterable[int]) -> "AgentMove":
        return AgentMove(OptionKind.REC, tuple(int(v) for v in items))


@dataclass(frozen=True)
class SessionState:
    catalog: Catalog = field(repr=False, compare=False)
    user: int
    target: int
    turn: int
    p_acc: frozenset
    p_rej: frozenset
    v_rej: frozenset
    v_cand: frozenset
    p_cand: frozenset
    history: tuple = ()  # (option, feedback) pairs
    done: bool = False
    success: bool = False
    max_turns: int = MAX_TURNS

    @property
    def target_attributes(self) -> frozenset:
        return self.catalog.item_attributes[self.target]


@dataclass(frozen=True)
class StepOutcome:
    feedback: str
    extrinsic: float
    intrinsic: float
    next_state: SessionState
    done: bool


def candidate_sets(catalog: Catalog, p_acc, p_rej, v_rej) -> tuple[frozenset, frozenset]:
    """Candidate items and attributes implied by the accepted/rejected sets.

    Rejected attributes only leave the attribute pool; items carrying them stay.
    """
    v_cand = catalog.items_with_all_attributes(p_acc) - frozenset(v_rej)
    p_cand = catalog.attributes_of_items(v_cand) - frozenset(p_acc) - frozenset(p_rej)
    return v_cand, p_cand


def reset(catalog: Catalog, user: int, target: int, rng: np.random.Generator, max_turns: int = MAX_TURNS) -> SessionState:
    if not 0 <= user < catalog.n_users:
        raise EnvError(f"user {user} out of range")
    if not 0 <= target < catalog.n_items:
        raise EnvError(f"item {target} out of range")
    attrs = sorted(catalog.item_attributes[target])
    if not attrs:
        raise EnvError(f"target item {target} has no attributes")
    p0 = attrs[int(rng.integers(len(attrs)))]
    p_acc = frozenset([p0])
    v_cand, p_cand = candidate_sets(catalog, p_acc, (), ())
    return SessionState(
        catalog=catalog,
        user=int(user),
        target=int(target),
        turn=0,
        p_acc=p_acc,
        p_rej=frozenset(),
        v_rej=frozenset(),
        v_cand=v_cand,
        p_cand=p_cand,
        max_turns=max_turns,
    )


def validate_move(state: SessionState, move: AgentMove) -> None:
    if move.option is OptionKind.ASK:
        if move.payload not in state.p_cand:
            raise EnvError(f"asked attribute {move.payload} is not a candidate")
    elif move.option is OptionKind.REC:
        items = move.payload
        if not isinstance(items, tuple) or not items:
            raise EnvError("recommendation must be a non-empty tuple of items")
        if len(items) > REC_SIZE:
            raise EnvError(f"recommendation longer than {REC_SIZE}")
        if len(set(items)) != len(items):
            raise EnvError("recommendation contains duplicates")
        if not set(items) <= state.v_cand:
            raise EnvError("recommended item outside the candidate set")
    else:
        raise EnvError(f"unknown option {move.option!r}")


def simulate_user(state: SessionState, move: AgentMove) -> str:
    validate_move(state, move)
    if move.option is OptionKind.ASK:
        return ACC if move.payload in state.target_attributes else REJ
    return ACC if state.target in move.payload else REJ


def apply_transition(state: SessionState, move: AgentMove, feedback: str) -> SessionState:
    if state.done:
        raise EnvError("session already finished")
    if feedback not in (ACC, REJ):
        raise EnvError(f"bad feedback {feedback!r}")
    p_acc, p_rej, v_rej = state.p_acc, state.p_rej, state.v_rej
    success = False
    if move.option is OptionKind.ASK:
        if feedback == ACC:
            p_acc = p_acc | {move.payload}
        else:
            p_rej = p_rej | {move.payload}
    elif feedback == REJ:
        v_rej = v_rej | frozenset(move.payload)
    else:
        success = True
    v_cand, p_cand = candidate_sets(state.catalog, p_acc, p_rej, v_rej)
    turn = state.turn + 1
    return replace(
        state,
        turn=turn,
        p_acc=p_acc,
        p_rej=p_rej,
        v_rej=v_rej,
        v_cand=v_cand,
        p_cand=p_cand,
        history=state.history + ((move.option.value, feedback),),
        done=success or turn >= state.max_turns,
        success=success,
    )


def extrinsic_reward(move: AgentMove, feedback: str, t: int, T: int = MAX_TURNS, rewards: RewardConfig = RewardConfig()) -> float:
    """Reward for the move made at (1-based) turn ``t``; the quit penalty is
    added on top when the final turn passes without success."""
    if move.option is OptionKind.REC:
        r = rewards.rec_acc if feedback == ACC else rewards.rec_rej
    else:
        r = rewards.ask_acc if feedback == ACC else rewards.ask_rej
    success = move.option is OptionKind.REC and feedback == ACC
    if t >= T and not success:
        r += rewards.quit
    return r


def rank_items(scores: dict | Sequence[tuple[int, float]]) -> list[int]:
    """Order items by descending score, ties by ascending id."""
    pairs = scores.items() if isinstance(scores, dict) else scores
    return [v for v, _ in sorted(pairs, key=lambda kv: (-kv[1], kv[0]))]


def intrinsic_reward(taken_option: OptionKind, ranking: Sequence[int], target: int, rewards: RewardConfig = RewardConfig()) -> float:
    """+1 when the option matches what the actor's ranking implies: recommend
    if the target already sits in the top ``REC_SIZE``, ask otherwise."""
    ranking = list(ranking)
    try:
        rank = ranking.index(target) + 1
    except ValueError:
        raise EnvError(f"target {target} missing from the actor's ranking") from None
    correct = OptionKind.REC if rank <= REC_SIZE else OptionKind.ASK
    return rewards.option_pos if OptionKind(taken_option) is correct else rewards.option_neg


def step(state: SessionState, move: AgentMove, ranking: Sequence[int], rewards: RewardConfig = RewardConfig()) -> StepOutcome:
    if state.done:
        raise EnvError("step on finished session")
    feedback = simulate_user(state, move)
    nxt = apply_transition(state, move, feedback)
    r_a = extrinsic_reward(move, feedback, nxt.turn, state.max_turns, rewards)
    r_o = intrinsic_reward(move.option, ranking, state.target, rewards)
    return StepOutcome(feedback, r_a, r_o, nxt, nxt.done)


def check_invariants(state: SessionState) -> list[str]:
    """Every violated session invariant, as human-readable strings."""
    problems = []
    target_attrs = state.target_attributes
    if not state.p_acc <= target_attrs:
        problems.append("accepted attribute not held by target")
    if state.p_rej & target_attrs:
        problems.append("rejected attribute held by target")
    v_cand, p_cand = candidate_sets(state.catalog, state.p_acc, state.p_rej, state.v_rej)
    if v_cand != state.v_cand:
        problems.append("candidate items inconsistent with accepted/rejected sets")
    if p_cand != state.p_cand:
        problems.append("candidate attributes inconsistent with candidate items")
    if (state.p_acc | state.p_rej) & state.p_cand:
        problems.append("asked attribute still a candidate")
    if state.v_rej & state.v_cand:
        problems.append("rejected item still a candidate")
    if not state.done and state.target not in state.v_cand:
        problems.append("target dropped from candidates")
    if len(state.history) != state.turn:
        problems.append("history length differs from turn count")
    if state.turn > state.max_turns:
        problems.append("turn limit exceeded")
    return problems


def trace_row(turn: int, move: AgentMove, outcome: StepOutcome) -> dict:
    payload = move.payload if move.option is OptionKind.ASK else list(move.payload)
    return {
        "turn": turn,
        "option": move.option.value,
        "payload": payload,
        "feedback": outcome.feedback,
        "r_a": outcome.extrinsic,
        "r_o": outcome.intrinsic,
        "n_v_cand": len(outcome.next_state.v_cand),
        "n_p_cand": len(outcome.next_state.p_cand),
    }


def write_trace(rows: Iterable[dict], path) -> None:
    with open(Path(path), "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=False) + "\n")


def read_trace(path) -> list[dict]:
    with open(Path(path)) as fh:
        return [json.loads(line) for line in fh if line.strip()]

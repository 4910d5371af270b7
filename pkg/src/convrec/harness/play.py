"""Terminal mode where a person answers instead of the simulated user.

The person keeps an item in mind, names one of its attributes to open the
conversation, then answers y/n to questions and picks from recommendation
lists. Transitions and rewards follow the environment rules exactly; only
the answers come from outside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..agent import PolicyNetworks, act
from ..catalog import Catalog
from ..env import ACC, MAX_TURNS, REJ, OptionKind, SessionState, apply_transition, candidate_sets, extrinsic_reward

QUIT_WORDS = ("quit", "q", "exit")
YES, NO = ("y", "yes"), ("n", "no")


class PlayAborted(Exception):
    pass


@dataclass
class PlayResult:
    status: str  # success | failed | aborted | no_match
    turns: list[dict] = field(default_factory=list)
    start_attribute: int | None = None
    chosen_item: int | None = None

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"status": self.status, "start_attribute": self.start_attribute, "chosen_item": self.chosen_item}) + "\n")
            for row in self.turns:
                fh.write(json.dumps(row) + "\n")


def _read(input_fn, prompt: str) -> str:
    try:
        text = input_fn(prompt)
    except EOFError:
        raise PlayAborted from None
    text = text.strip().lower()
    if text in QUIT_WORDS:
        raise PlayAborted
    return text


def _pick_attribute(catalog: Catalog, input_fn, print_fn) -> int:
    names = {catalog.attribute_name(p).lower(): p for p in range(catalog.n_attributes)}
    print_fn("Attributes: " + ", ".join(f"{p}={catalog.attribute_name(p)}" for p in range(catalog.n_attributes)))
    while True:
        text = _read(input_fn, "Name one attribute of the item you have in mind (id or name): ")
        p = int(text) if text.isdigit() else names.get(text)
        if p is not None and 0 <= p < catalog.n_attributes and catalog.items_with_all_attributes([p]):
            return p
        print_fn("Not a known attribute, try again.")


def _answer_ask(input_fn, print_fn, name: str) -> str:
    while True:
        text = _read(input_fn, f"Does your item have '{name}'? [y/n] ")
        if text in YES:
            return ACC
        if text in NO:
            return REJ
        print_fn("Please answer y or n.")


def _answer_rec(input_fn, print_fn, items) -> tuple[str, int | None]:
    while True:
        text = _read(input_fn, f"Pick your item (1-{len(items)}) or n if it is not listed: ")
        if text in NO:
            return REJ, None
        if text.isdigit() and 1 <= int(text) <= len(items):
            return ACC, int(text)
        print_fn("Please enter a list position or n.")


def play_session(
    nets: PolicyNetworks,
    catalog: Catalog,
    user: int = 0,
    input_fn: Callable[[str], str] = input,
    print_fn: Callable[[str], None] = print,
    max_turns: int = MAX_TURNS,
    start_attribute: int | None = None,
) -> PlayResult:
    """Run one conversation driven by ``input_fn`` answers; the agent acts greedily.

    ``quit`` or end of input aborts and returns the turns played so far.
    """
    result = PlayResult("aborted")
    try:
        p0 = start_attribute if start_attribute is not None else _pick_attribute(catalog, input_fn, print_fn)
        result.start_attribute = p0
        v_cand, p_cand = candidate_sets(catalog, {p0}, (), ())
        # target is unknown in play mode
        state = SessionState(catalog, int(user), -1, 0, frozenset([p0]), frozenset(), frozenset(), v_cand, p_cand, max_turns=max_turns)
        rng = np.random.default_rng(0)
        while not state.done:
            d = act(nets, state, rng, "greedy")
            move = d.move
            turn = state.turn + 1
            if move.option is OptionKind.ASK:
                print_fn(f"[turn {turn}] question about '{catalog.attribute_name(move.payload)}'")
                feedback, rank = _answer_ask(input_fn, print_fn, catalog.attribute_name(move.payload)), None
            else:
                print_fn(f"[turn {turn}] recommendations:")
                for i, v in enumerate(move.payload, start=1):
                    attrs = ", ".join(catalog.attribute_name(p) for p in sorted(catalog.item_attributes[v]))
                    print_fn(f"  {i}. item {v} ({attrs})")
                feedback, rank = _answer_rec(input_fn, print_fn, move.payload)
            state = apply_transition(state, move, feedback)
            result.turns.append(
                {
                    "turn": turn,
                    "option": move.option.value,
                    "payload": move.payload if move.option is OptionKind.ASK else list(move.payload),
                    "feedback": feedback,
                    "r_a": extrinsic_reward(move, feedback, turn, max_turns),
                    "n_v_cand": len(state.v_cand),
                    "n_p_cand": len(state.p_cand),
                }
            )
            if rank is not None:
                result.status, result.chosen_item = "success", move.payload[rank - 1]
                print_fn(f"Found item {result.chosen_item} in {turn} turns.")
                return result
            if not state.v_cand:
                result.status = "no_match"
                print_fn("No item matches those answers.")
                return result
        result.status = "failed"
        print_fn(f"Out of turns after {max_turns}.")
    except PlayAborted:
        result.status = "aborted"
        print_fn("Session aborted.")
    return result

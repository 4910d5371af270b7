import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.catalog import Catalog
from convrec.env import (
    ACC,
    MAX_TURNS,
    REJ,
    AgentMove,
    EnvError,
    OptionKind,
    apply_transition,
    check_invariants,
    extrinsic_reward,
    intrinsic_reward,
    rank_items,
    read_trace,
    reset,
    simulate_user,
    step,
    trace_row,
    write_trace,
)


@pytest.fixture
def cat():
    # target 0 = {0, 1}; items 1, 2 share attribute 0; item 3 has attribute 2 only
    return Catalog(
        n_users=1,
        n_items=5,
        n_attributes=4,
        item_attributes=[{0, 1}, {0, 2}, {0, 1, 3}, {2}, {3}],
        interactions=[(0, 0)],
    )


def _start(cat, target=0, seed=0):
    return reset(cat, 0, target, np.random.default_rng(seed))


def random_move(state, rng):
    if state.p_cand and rng.random() < 0.5:
        return AgentMove.ask(sorted(state.p_cand)[int(rng.integers(len(state.p_cand)))])
    items = sorted(state.v_cand)
    k = int(rng.integers(1, min(10, len(items)) + 1))
    return AgentMove.rec(rng.choice(items, size=k, replace=False).tolist())


def random_ranking(state, rng):
    return rng.permutation(sorted(state.v_cand)).tolist()


class TestReset:
    def test_single_attribute_target(self, cat):
        s = _start(cat, target=3)
        assert s.p_acc == {2}

    def test_target_is_candidate(self, cat):
        for seed in range(10):
            s = _start(cat, seed=seed)
            assert s.target in s.v_cand and s.turn == 0 and s.history == ()
            assert check_invariants(s) == []

    def test_seeded(self, cat):
        assert _start(cat, seed=4).p_acc == _start(cat, seed=4).p_acc

    def test_bad_ids(self, cat):
        with pytest.raises(EnvError):
            reset(cat, 3, 0, np.random.default_rng(0))
        with pytest.raises(EnvError):
            reset(cat, 0, 9, np.random.default_rng(0))


class TestSimulator:
    def test_ask_rules(self, cat):
        s = _start(cat)
        other = ({0, 1} - s.p_acc).pop()
        assert simulate_user(s, AgentMove.ask(other)) == ACC
        if 3 in s.p_cand:
            assert simulate_user(s, AgentMove.ask(3)) == REJ

    def test_rec_rules(self, cat):
        s = _start(cat)
        others = sorted(s.v_cand - {0})
        assert simulate_user(s, AgentMove.rec(others)) == REJ
        assert simulate_user(s, AgentMove.rec(others + [0])) == ACC

    @pytest.mark.parametrize(
        "move",
        [AgentMove.ask(99), AgentMove.rec([]), AgentMove.rec(range(11)), AgentMove.rec([0, 0])],
    )
    def test_invalid_moves(self, cat, move):
        with pytest.raises(EnvError):
            simulate_user(_start(cat), move)


class TestTransition:
    def _with_p0(self, cat, p0):
        for seed in range(50):
            s = _start(cat, seed=seed)
            if s.p_acc == {p0}:
                return s
        raise AssertionError("seed not found")

    def test_ask_accepted_narrows(self, cat):
        s = self._with_p0(cat, 0)
        assert s.v_cand == {0, 1, 2}
        n = apply_transition(s, AgentMove.ask(1), ACC)
        assert n.p_acc == {0, 1} and n.v_cand == {0, 2} and n.turn == 1

    def test_ask_rejected_keeps_items(self, cat):
        s = self._with_p0(cat, 0)
        n = apply_transition(s, AgentMove.ask(3), REJ)
        assert n.p_acc == s.p_acc and n.v_cand == s.v_cand
        assert 3 not in n.p_cand and n.p_rej == {3}

    def test_rec_rejected_removes_items(self, cat):
        s = self._with_p0(cat, 0)
        n = apply_transition(s, AgentMove.rec([1, 2]), REJ)
        assert n.v_rej == {1, 2} and n.v_cand == {0}
        assert n.history == (("rec", REJ),)

    def test_done_state_rejected(self, cat):
        s = _start(cat)
        n = apply_transition(s, AgentMove.rec([0]), ACC)
        assert n.done and n.success
        with pytest.raises(EnvError):
            apply_transition(n, AgentMove.rec([0]), ACC)


class TestRewards:
    def test_extrinsic_values(self):
        ask, rec = AgentMove.ask(1), AgentMove.rec([1])
        assert extrinsic_reward(rec, ACC, 1) == 1.0
        assert extrinsic_reward(ask, ACC, 1) == 0.01
        assert extrinsic_reward(ask, REJ, 3) == -0.1
        assert extrinsic_reward(rec, REJ, 3) == -0.1
        assert extrinsic_reward(rec, REJ, 15) == pytest.approx(-0.4, abs=1e-15)
        assert extrinsic_reward(rec, ACC, 15) == 1.0

    def test_intrinsic_values(self):
        ranking = [5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]
        assert intrinsic_reward(OptionKind.REC, ranking, 7) == 1.0
        assert intrinsic_reward(OptionKind.ASK, ranking, 7) == -1.0
        assert intrinsic_reward(OptionKind.ASK, ranking, 15) == 1.0
        assert intrinsic_reward(OptionKind.REC, ranking, 14) == 1.0
        with pytest.raises(EnvError):
            intrinsic_reward(OptionKind.ASK, ranking, 99)

    def test_rank_ties_by_id(self):
        assert rank_items({7: 1.0, 3: 1.0, 5: 2.0}) == [5, 3, 7]


class TestStep:
    def test_success(self, cat):
        s = _start(cat)
        s = step(s, AgentMove.ask(sorted(s.p_cand)[0]), sorted(s.v_cand)).next_state
        out = step(s, AgentMove.rec(sorted(s.v_cand)), sorted(s.v_cand))
        assert out.done and out.extrinsic == 1.0 and out.next_state.turn == 2

    def test_quit_penalty_once(self):
        wide = Catalog(n_users=1, n_items=20, n_attributes=1, item_attributes=[{0}] * 20, interactions=[(0, 0)])
        s = reset(wide, 0, 0, np.random.default_rng(0))
        rewards = []
        while not s.done:
            out = step(s, AgentMove.rec([max(s.v_cand)]), sorted(s.v_cand))
            rewards.append(out.extrinsic)
            s = out.next_state
        assert not s.success and s.turn == MAX_TURNS == len(rewards)
        assert rewards[:-1] == [-0.1] * (MAX_TURNS - 1)
        assert rewards[-1] == pytest.approx(-0.4, abs=1e-15)

    def test_step_on_done(self, cat):
        s = apply_transition(_start(cat), AgentMove.rec([0]), ACC)
        with pytest.raises(EnvError):
            step(s, AgentMove.rec([0]), [0])

    def test_trace_round_trip(self, cat, tmp_path):
        s = _start(cat)
        move = AgentMove.rec(sorted(s.v_cand))
        out = step(s, move, sorted(s.v_cand))
        row = trace_row(1, move, out)
        assert set(row) == {"turn", "option", "payload", "feedback", "r_a", "r_o", "n_v_cand", "n_p_cand"}
        write_trace([row, row], tmp_path / "t.jsonl")
        assert read_trace(tmp_path / "t.jsonl") == [row, row]


def run_random_episode(cat, user, target, rng):
    """Play one random-policy episode; return the invariant violations seen."""
    s = reset(cat, user, target, rng)
    problems = check_invariants(s)
    while not s.done:
        out = step(s, random_move(s, rng), random_ranking(s, rng))
        n = out.next_state
        problems += check_invariants(n)
        if not (s.p_acc <= n.p_acc and s.p_rej <= n.p_rej and s.v_rej <= n.v_rej and n.v_cand <= s.v_cand):
            problems.append("sets not monotone")
        if out.intrinsic not in (-1.0, 1.0):
            problems.append("intrinsic reward not +-1")
        if out.done != (n.success or n.turn == MAX_TURNS):
            problems.append("done flag inconsistent")
        s = n
    return problems


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_policy_keeps_invariants(small_data, seed):
    cat, split = small_data
    rng = np.random.default_rng(seed)
    u, v = split.train[int(rng.integers(len(split.train)))]
    assert run_random_episode(cat, u, v, rng) == []


def test_exactly_one_option_is_right(rng):
    for _ in range(200):
        ranking = rng.permutation(30).tolist()
        target = int(rng.integers(30))
        pair = [intrinsic_reward(o, ranking, target) for o in OptionKind]
        assert sorted(pair) == [-1.0, 1.0]

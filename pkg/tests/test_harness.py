import json
import math
import warnings

import numpy as np
import pytest

from convrec.agent import AgentConfig, PolicyNetworks
from convrec.catalog import Catalog, save_catalog, save_split
from convrec.cli import main
from convrec.embed import TransEConfig
from convrec.encoder import EncoderConfig
from convrec.env import REJ, AgentMove, apply_transition, reset
from convrec.harness.checkpoint import CheckpointError, load_checkpoint, restore_trainer, save_checkpoint, snapshot
from convrec.harness.config import ExperimentConfig, TrainConfig, fingerprint, load_config
from convrec.harness.metrics import EpisodeLog, compute_metrics, hdcg_gain
from convrec.harness.play import play_session
from convrec.harness.plots import PlotError, export_plots
from convrec.harness.policies import AbsGreedyPolicy, AgentPolicy, MaxEntropyPolicy, binary_entropy, greedy_scores
from convrec.harness.runner import episode_rng, evaluation_pairs, run_episode, run_many
from convrec.harness.training import CSV_HEADER, evaluate, train

TINY = ExperimentConfig(
    agent=AgentConfig(batch_size=8, head_hidden=12, option_dim=4, encoder=EncoderConfig(embed_dim=8, hidden_dim=6)),
    train=TrainConfig(episodes=6, eval_every=3, eval_episodes=4),
    transe=TransEConfig(epochs=2, dim=8),
)


def _log(turn=None, rank=None):
    if turn is None:
        return EpisodeLog(0, 0, [{}] * 15)
    return EpisodeLog(0, 0, [{}] * turn, True, turn, rank)


class TestMetrics:
    def test_four_episode_fixture(self):
        r = compute_metrics([_log(3, 1), _log(7, 2), _log(), _log()])
        assert r.sr15 == 0.5 and r.at == 10.0
        assert r.sr_at(2) == 0.0 and r.sr_at(3) == 0.25 and r.sr_at(7) == 0.5
        assert r.hdcg == pytest.approx((hdcg_gain(3, 1) + hdcg_gain(7, 2)) / 4, abs=1e-15)

    def test_five_hand_written_logs(self):
        logs = [_log(1, 1), _log(2, 10), _log(15, 3), _log(), _log(4, 1)]
        r = compute_metrics(logs)
        assert r.sr.tolist()[:4] == [0.2, 0.4, 0.4, 0.6]
        assert r.sr15 == 0.8
        assert r.at == (1 + 2 + 15 + 15 + 4) / 5
        assert hdcg_gain(1, 1) == pytest.approx(1.0)
        expect = (1.0 + hdcg_gain(2, 10) + hdcg_gain(15, 3) + hdcg_gain(4, 1)) / 5
        assert r.hdcg == pytest.approx(expect, abs=1e-15)

    def test_all_first_turn(self):
        r = compute_metrics([_log(1, 1)] * 3)
        assert r.sr_at(1) == 1.0 and r.at == 1.0 and r.hdcg == pytest.approx(1.0)

    def test_gain_grid_strictly_decreasing(self):
        for t in range(1, 16):
            for k in range(1, 11):
                if t < 15:
                    assert hdcg_gain(t + 1, k) < hdcg_gain(t, k)
                if k < 10:
                    assert hdcg_gain(t, k + 1) < hdcg_gain(t, k)

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics([])

    def test_log_validation(self):
        _log(3, 2).validate()
        with pytest.raises(ValueError):
            EpisodeLog(0, 0, [{}] * 2, True, 3, 1).validate()
        with pytest.raises(ValueError):
            _log(3, 11).validate()


class TestBaselines:
    def test_abs_greedy_hand_ranking(self):
        # target 9 is the only item with attributes 0 and 1
        attrs = [{0}] * 9 + [{0, 1}]
        cat = Catalog(n_users=1, n_items=10, n_attributes=3, item_attributes=attrs + [], interactions=[(0, 9)])
        s = next(s for s in (reset(cat, 0, 9, np.random.default_rng(i)) for i in range(50)) if s.p_acc == {0})
        assert greedy_scores(s) == {v: 1.0 for v in range(10)}
        s = apply_transition(s, AgentMove.ask(1), REJ)
        assert greedy_scores(s) == {**{v: 1.0 for v in range(9)}, 9: 0.0}
        log = run_episode(AbsGreedyPolicy(), 0, 9, cat, np.random.default_rng(0))
        assert log.success and log.success_turn <= 2

    def test_abs_greedy_never_asks(self, fixture_data):
        cat, split = fixture_data
        for log in run_many(AbsGreedyPolicy(), split.test[:20], cat, seed=2):
            assert all(t["option"] == "rec" for t in log.turns)

    def test_max_entropy_picks_half_coverage(self):
        # candidates 0..3; attribute 1 covers half, attribute 2 covers three quarters
        cat = Catalog(n_users=1, n_items=4, n_attributes=3, item_attributes=[{0, 1, 2}, {0, 1, 2}, {0, 2}, {0}], interactions=[(0, 0)])
        s = reset(cat, 0, 3, np.random.default_rng(0))
        d = MaxEntropyPolicy(rec_prob=0.0).decide(s, np.random.default_rng(0))
        assert d.move == AgentMove.ask(1)

    def test_max_entropy_forced_rec(self):
        cat = Catalog(n_users=1, n_items=2, n_attributes=1, item_attributes=[{0}, {0}], interactions=[(0, 0)])
        s = reset(cat, 0, 0, np.random.default_rng(0))
        assert MaxEntropyPolicy(rec_prob=0.0).decide(s, np.random.default_rng(0)).move.option.value == "rec"

    def test_rec_prob_one_is_abs_greedy(self, fixture_data):
        cat, split = fixture_data
        a = run_many(MaxEntropyPolicy(rec_prob=1.0), split.test[:15], cat, seed=3)
        b = run_many(AbsGreedyPolicy(), split.test[:15], cat, seed=3)
        assert [x.to_dict() for x in a] == [y.to_dict() for y in b]

    def test_deterministic(self, fixture_data):
        cat, split = fixture_data
        a = run_many(MaxEntropyPolicy(), split.test[:15], cat, seed=4)
        b = run_many(MaxEntropyPolicy(), split.test[:15], cat, seed=4)
        assert [x.to_dict() for x in a] == [y.to_dict() for y in b]

    def test_entropy(self):
        assert binary_entropy(0.5) == pytest.approx(math.log(2))
        assert binary_entropy(0.0) == binary_entropy(1.0) == 0.0
        with pytest.raises(ValueError):
            MaxEntropyPolicy(rec_prob=1.5)


class TestRunner:
    def test_turn_count_and_validation(self, fixture_data):
        cat, split = fixture_data
        for log in run_many(MaxEntropyPolicy(), split.test[:20], cat, seed=5):
            log.validate()
            assert len(log.turns) == log.n_turns

    def test_always_wrong_asker_fails(self):
        cat = Catalog(n_users=1, n_items=3, n_attributes=40, item_attributes=[{0}, {0} | set(range(2, 40)), {0, 1}], interactions=[(0, 0)])

        class WrongAsker:
            def decide(self, state, rng, mode="greedy", eps=0.0):
                from convrec.agent import Decision

                p = min(state.p_cand)
                return Decision(AgentMove.ask(p), sorted(state.v_cand), 0, np.eye(2)[0], None)

        log = run_episode(WrongAsker(), 0, 0, cat, np.random.default_rng(0))
        assert not log.success and log.n_turns == 15 and len(log.turns) == 15

    def test_evaluation_pairs(self):
        assert evaluation_pairs([(0, 1), (0, 2)], 5) == [(0, 1), (0, 2), (0, 1), (0, 2), (0, 1)]
        assert evaluation_pairs([(0, 1)], None) == [(0, 1)]
        with pytest.raises(ValueError):
            evaluation_pairs([], 3)

    def test_episode_rng_independent_of_order(self):
        assert episode_rng(1, 5).random() == episode_rng(1, 5).random()
        assert episode_rng(1, 5).random() != episode_rng(1, 6).random()


class TestConfig:
    def test_overrides_and_fingerprint(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"agent": {"tau": 0.7}}))
        cfg = load_config(p, {"train.episodes": 12, "agent.encoder.layers": 1})
        assert cfg.agent.tau == 0.7 and cfg.train.episodes == 12 and cfg.agent.encoder.layers == 1
        assert fingerprint(cfg) == fingerprint(ExperimentConfig.from_dict(cfg.to_dict()))
        assert fingerprint(cfg) != fingerprint(ExperimentConfig())

    def test_invalid(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(None, {"agent.bogus": 1})
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ValueError):
            load_config(bad)


@pytest.fixture(scope="module")
def tiny_run(small_data):
    cat, split = small_data
    return train(TINY, cat, split, seed=3)


class TestTraining:
    def test_csv_shape(self, tiny_run):
        lines = tiny_run.csv_text().splitlines()
        assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 3
        assert tiny_run.env_steps > 0

    def test_repeatable(self, small_data, tiny_run):
        cat, split = small_data
        assert train(TINY, cat, split, seed=3).csv_text() == tiny_run.csv_text()

    def test_no_updates_below_batch(self, small_data):
        cat, split = small_data
        cfg = ExperimentConfig(agent=AgentConfig(**{**TINY.agent.__dict__, "batch_size": 10_000}), train=TINY.train, transe=TINY.transe)
        res = train(cfg, cat, split, seed=3)
        assert res.grad_steps == 0

    def test_evaluate_repeatable(self, small_data, tiny_run):
        cat, split = small_data
        a, _ = evaluate(tiny_run.final, cat, split, 6, seed=2)
        b, _ = evaluate(tiny_run.final, cat, split, 6, seed=2)
        assert a.to_dict() == b.to_dict()
        assert np.all(np.diff(a.sr) >= 0) and 1 <= a.at <= 15


class TestCheckpoint:
    def test_round_trip_bytes(self, tiny_run, tmp_path):
        save_checkpoint(tiny_run.final, tmp_path / "a.ckpt")
        ck = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(ck, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for k, v in tiny_run.final.online.items():
            assert np.array_equal(ck.online[k], v)
        assert ck.counters == tiny_run.final.counters and ck.fingerprint == tiny_run.final.fingerprint

    def test_restore_trainer(self, tiny_run, tmp_path):
        save_checkpoint(tiny_run.final, tmp_path / "a.ckpt")
        tr = restore_trainer(load_checkpoint(tmp_path / "a.ckpt"))
        again = snapshot(tr, tiny_run.final.config, {k: v for k, v in tiny_run.final.counters.items() if k != "grad_steps"})
        save_checkpoint(again, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_truncated(self, tiny_run, tmp_path):
        save_checkpoint(tiny_run.final, tmp_path / "a.ckpt")
        raw = (tmp_path / "a.ckpt").read_bytes()
        for cut in (3, 10, 40, len(raw) - 4):
            (tmp_path / "t.ckpt").write_bytes(raw[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(tmp_path / "t.ckpt")

    def test_bad_magic_and_version(self, tiny_run, tmp_path):
        save_checkpoint(tiny_run.final, tmp_path / "a.ckpt")
        raw = bytearray((tmp_path / "a.ckpt").read_bytes())
        (tmp_path / "m.ckpt").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "m.ckpt")
        raw[4] = 9
        (tmp_path / "v.ckpt").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "v.ckpt")

    def test_fingerprint_warning(self, tiny_run, tmp_path):
        save_checkpoint(tiny_run.final, tmp_path / "a.ckpt")
        with pytest.warns(UserWarning, match="fingerprint"):
            ck = load_checkpoint(tmp_path / "a.ckpt", expected_fingerprint="0" * 16)
        assert ck.online
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            load_checkpoint(tmp_path / "a.ckpt", expected_fingerprint=tiny_run.final.fingerprint)


class TestPlots:
    def _csv(self, path, rows):
        path.write_text(",".join(CSV_HEADER) + "\n" + "".join(f"{i},{i * 10},0.5,9.0,0.2,0.1\n" for i in range(1, rows + 1)))
        return path

    def test_two_rows(self, tmp_path):
        out = export_plots(self._csv(tmp_path / "m.csv", 2), tmp_path / "p")
        svg = (tmp_path / "p" / "sr15.svg").read_text()
        assert svg.startswith("<?xml") and "</svg>" in svg
        assert [p.name for p in out] == ["sr15.svg", "loss.svg", "metrics_tidy.csv"]
        assert len((tmp_path / "p" / "metrics_tidy.csv").read_text().splitlines()) == 1 + 2 * 4

    def test_identical_bytes(self, tmp_path):
        src = self._csv(tmp_path / "m.csv", 3)
        export_plots(src, tmp_path / "a")
        export_plots(src, tmp_path / "b")
        for name in ("sr15.svg", "loss.svg", "metrics_tidy.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_inputs(self, tmp_path):
        (tmp_path / "empty.csv").write_text("")
        (tmp_path / "header.csv").write_text(",".join(CSV_HEADER) + "\n")
        (tmp_path / "cols.csv").write_text("a,b\n1,2\n")
        (tmp_path / "junk.csv").write_text(",".join(CSV_HEADER) + "\n1,x,0.5,9,0.2,0.1\n")
        for name in ("empty.csv", "header.csv", "cols.csv", "junk.csv"):
            with pytest.raises(PlotError):
                export_plots(tmp_path / name, tmp_path / "out")


def _simulated_answers(cat, target, p0):
    """Answers a person holding ``target`` would give, in prompt order."""
    state = {"pending": [str(p0)]}

    def answer(prompt):
        if state["pending"]:
            return state["pending"].pop(0)
        if prompt.startswith("Does your item have"):
            name = prompt.split("'")[1]
            p = [q for q in range(cat.n_attributes) if cat.attribute_name(q) == name][0]
            return "y" if p in cat.item_attributes[target] else "n"
        return state["rec"](prompt)

    return answer, state


class TestPlay:
    def _nets(self, cat):
        emb = np.random.default_rng(0).normal(size=(cat.n_nodes, 8))
        return PolicyNetworks.create(TINY.agent, emb, 1)

    def test_mirrors_simulator(self, fixture_data):
        cat, split = fixture_data
        nets = self._nets(cat)
        for i, (u, v) in enumerate(split.test[:5]):
            log = run_episode(AgentPolicy(nets), u, v, cat, episode_rng(9, i))
            p0 = reset(cat, u, v, episode_rng(9, i)).p_acc
            shown = []
            answer, st = _simulated_answers(cat, v, next(iter(p0)))

            def pick(prompt, shown=shown):
                items = shown[-1]
                return str(items.index(v) + 1) if v in items else "n"

            st["rec"] = pick

            def printer(line, shown=shown):
                if line.startswith("[turn") and "recommendations" in line:
                    shown.append([])
                elif line.startswith("  ") and "item" in line:
                    shown[-1].append(int(line.split("item ")[1].split(" ")[0]))

            res = play_session(nets, cat, u, answer, printer)
            strip = [{k: t[k] for k in ("turn", "option", "payload", "feedback", "n_v_cand", "n_p_cand")} for t in log.turns]
            assert [{k: t[k] for k in strip[0]} for t in res.turns] == strip
            assert res.status == ("success" if log.success else "failed")

    def test_quit_and_reprompt(self, fixture_data, tmp_path):
        cat, _ = fixture_data
        nets = self._nets(cat)
        answers = iter(["banana", "0", "maybe", "quit"])
        lines = []
        res = play_session(nets, cat, 0, lambda _: next(answers), lines.append)
        assert res.status == "aborted" and res.turns == []
        assert any("try again" in line for line in lines)
        assert any("Please" in line for line in lines)
        res.write(tmp_path / "p.jsonl")
        assert json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])["status"] == "aborted"

    def test_end_of_input(self, fixture_data):
        cat, _ = fixture_data

        def eof(_):
            raise EOFError

        assert play_session(self._nets(cat), cat, 0, eof, lambda _: None).status == "aborted"


class TestCli:
    @pytest.fixture
    def data_dir(self, tmp_path, small_data):
        cat, split = small_data
        save_catalog(cat, tmp_path / "data")
        save_split(split, tmp_path / "data")
        return tmp_path / "data"

    def test_gen_data(self, tmp_path, capsys):
        assert main(["gen-data", "--users", "5", "--items", "12", "--attrs", "8", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
        assert main(["gen-data", "--attrs", "4", "--out", str(tmp_path / "e")]) == 2
        assert (tmp_path / "d" / "split.json").exists()

    def test_train_eval_plot(self, tmp_path, data_dir):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(TINY.to_dict()))
        run = tmp_path / "run"
        assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--seed", "2", "--out", str(run)]) == 0
        first = (run / "metrics.csv").read_bytes()
        assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "run2")]) == 0
        assert (tmp_path / "run2" / "metrics.csv").read_bytes() == first
        assert main(["eval", "--data", str(data_dir), "--checkpoint", str(run / "best.ckpt"), "--episodes", "4", "--out", str(tmp_path / "ev")]) == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        assert report["episodes"] == 4
        assert main(["plot", "--in", str(run / "metrics.csv"), "--out", str(tmp_path / "plots")]) == 0

    def test_baseline_eval(self, data_dir, capsys):
        assert main(["eval", "--data", str(data_dir), "--policy", "abs-greedy", "--episodes", "5"]) == 0
        assert "SR@15" in capsys.readouterr().out

    def test_exit_codes(self, tmp_path, data_dir):
        assert main(["eval", "--data", str(tmp_path / "missing"), "--policy", "abs-greedy"]) == 2
        assert main(["eval", "--data", str(data_dir)]) == 2
        (tmp_path / "bad.ckpt").write_bytes(b"nope")
        assert main(["eval", "--data", str(data_dir), "--checkpoint", str(tmp_path / "bad.ckpt")]) == 2
        (tmp_path / "empty.csv").write_text("")
        assert main(["plot", "--in", str(tmp_path / "empty.csv"), "--out", str(tmp_path / "p")]) == 2
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 2

    def test_runtime_error_code(self, tmp_path, data_dir, monkeypatch):
        import convrec.harness.plots as plots

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(plots, "export_plots", boom)
        assert main(["plot", "--in", "x.csv", "--out", str(tmp_path)]) == 1

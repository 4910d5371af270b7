"""Training and evaluation loops."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..agent import PolicyNetworks, Trainer, epsilon_at
from ..catalog import Catalog, DatasetSplit
from ..embed import EmbeddingTable, pretrain_for_catalog
from .checkpoint import Checkpoint, save_checkpoint, snapshot
from .config import ExperimentConfig, fingerprint
from .metrics import MetricsReport, compute_metrics
from .policies import AgentPolicy
from .runner import episode_rng, evaluation_pairs, run_episode

CSV_HEADER = ("epoch", "episodes", "sr15", "at", "hdcg", "loss")


@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)
    best: Checkpoint | None = None
    final: Checkpoint | None = None
    best_sr: float = -1.0
    env_steps: int = 0
    grad_steps: int = 0
    seconds: float = 0.0

    def csv_text(self) -> str:
        return metrics_csv(self.rows)


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    return buf.getvalue()


def evaluate_policy(policy, catalog: Catalog, pairs, episodes: int | None, seed: int, fp: str = "", rewards=None):
    from ..env import RewardConfig

    pairs = evaluation_pairs(pairs, episodes)
    logs = [run_episode(policy, u, v, catalog, episode_rng(seed, i), "greedy", rewards=rewards or RewardConfig()) for i, (u, v) in enumerate(pairs)]
    return compute_metrics(logs, fingerprint=fp), logs


def train(
    config: ExperimentConfig,
    catalog: Catalog,
    split: DatasetSplit,
    seed: int | None = None,
    embeddings: EmbeddingTable | None = None,
    out_dir=None,
    log=None,
) -> TrainResult:
    """Interleave episodes with gradient steps and log one row per epoch.

    An epoch is ``train.eval_every`` training episodes followed by a greedy
    evaluation on the validation pairs.
    """
    if seed is not None:
        config = replace(config, train=replace(config.train, seed=seed))
    config.validate()
    tc, ac = config.train, config.agent
    seed = tc.seed
    fp = fingerprint(config)
    if not split.train:
        raise ValueError("no training pairs")
    if embeddings is None:
        embeddings = pretrain_for_catalog(catalog, split, config.transe, seed)
    if embeddings.entities.shape != (catalog.n_nodes, ac.encoder.embed_dim):
        raise ValueError(f"embedding table {embeddings.entities.shape} does not fit the catalog/config")
    nets = PolicyNetworks.create(ac, embeddings.entities, seed)
    trainer = Trainer.create(nets, seed + 1)
    policy = AgentPolicy(nets)
    rng = np.random.default_rng(seed + 2)
    valid = list(split.valid) or list(split.test)
    order = rng.permutation(len(split.train))
    res = TrainResult()
    started = time.perf_counter()
    counter = {"env": 0}
    losses: list[float] = []

    def on_transition(rec):
        trainer.buffer.push(rec)
        counter["env"] += 1
        if counter["env"] % tc.train_every == 0:
            loss = trainer.train_step()
            if loss is not None:
                losses.append(loss)

    def eps_now():
        return epsilon_at(counter["env"], ac)

    episodes_done = 0
    epoch = 0
    while episodes_done < tc.episodes:
        n = min(tc.eval_every, tc.episodes - episodes_done)
        for _ in range(n):
            u, v = split.train[order[episodes_done % len(order)]]
            run_episode(policy, u, v, catalog, rng, "train", eps_now, on_transition, config.rewards)
            episodes_done += 1
        epoch += 1
        report, _ = evaluate_policy(policy, catalog, valid, tc.eval_episodes, seed + 1000 * epoch, fp, config.rewards)
        row = {
            "epoch": epoch,
            "episodes": episodes_done,
            "sr15": report.sr15,
            "at": report.at,
            "hdcg": report.hdcg,
            "loss": float(np.mean(losses)) if losses else 0.0,
        }
        losses.clear()
        res.rows.append(row)
        counters = {"env_steps": counter["env"], "episodes": episodes_done, "epoch": epoch}
        if report.sr15 > res.best_sr:
            res.best_sr = report.sr15
            res.best = snapshot(trainer, config, counters)
        if log is not None:
            log(f"epoch {epoch} episodes {episodes_done} sr15 {report.sr15:.3f} at {report.at:.2f} loss {row['loss']:.4f} eps {eps_now():.3f}")
    res.final = snapshot(trainer, config, {"env_steps": counter["env"], "episodes": episodes_done, "epoch": epoch})
    if res.best is None:
        res.best = res.final
    res.env_steps, res.grad_steps = counter["env"], trainer.grad_steps
    res.seconds = time.perf_counter() - started
    if out_dir is not None:
        write_outputs(res, out_dir, config)
    return res


def write_outputs(res: TrainResult, out_dir, config: ExperimentConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(res.csv_text())
    save_checkpoint(res.final, out / "final.ckpt")
    save_checkpoint(res.best, out / "best.ckpt")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def evaluate(ck: Checkpoint, catalog: Catalog, split: DatasetSplit, episodes: int | None, seed: int) -> tuple[MetricsReport, list]:
    """Greedy episodes over the test pairs."""
    nets = ck.networks()
    if nets.emb.shape[0] != catalog.n_nodes:
        raise ValueError("checkpoint embeddings do not match the catalog")
    return evaluate_policy(AgentPolicy(nets), catalog, split.test, episodes, seed, ck.fingerprint, ck.config.rewards)


def write_episode_logs(logs, path) -> None:
    with open(path, "w") as fh:
        for log in logs:
            fh.write(json.dumps(log.to_dict()) + "\n")

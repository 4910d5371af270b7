"""Command line: gen-data, pretrain, train, eval, play, plot.

Exit codes: 0 success, 2 bad input (arguments, config, data, checkpoint), 1
anything else.
"""

from __future__ import annotations

import os

# Single-threaded BLAS keeps float reductions, and so every output, reproducible.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_gen_data(args) -> int:
    from .catalog import SyntheticConfig, generate_synthetic, save_catalog, save_split

    cfg = SyntheticConfig(users=args.users, items=args.items, attributes=args.attrs)
    catalog, split = generate_synthetic(cfg, args.seed)
    save_catalog(catalog, args.out)
    save_split(split, args.out)
    print(f"wrote {catalog.n_users} users, {catalog.n_items} items, {catalog.n_attributes} attributes to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from dataclasses import replace

    from .catalog import load_dataset
    from .embed import pretrain_for_catalog, save_embeddings
    from .harness.config import load_config

    catalog, split = load_dataset(args.data)
    cfg = load_config(args.config).transe
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    cfg.validate()
    table = pretrain_for_catalog(catalog, split, cfg, args.seed)
    save_embeddings(table, args.out)
    last = table.loss_history[-1] if table.loss_history else float("nan")
    print(f"pretrained {table.entities.shape[0]} entities, final loss {last:.4f} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .catalog import load_dataset
    from .embed import load_embeddings
    from .harness.config import load_config
    from .harness.training import train

    overrides = _overrides(args.set)
    if args.episodes is not None:
        overrides["train.episodes"] = args.episodes
    config = load_config(args.config, overrides)
    catalog, split = load_dataset(args.data)
    emb = load_embeddings(args.embeddings) if args.embeddings else None
    res = train(config, catalog, split, seed=args.seed, embeddings=emb, out_dir=args.out, log=lambda m: print(m, file=sys.stderr))
    print(f"trained {res.env_steps} steps / {res.grad_steps} updates in {res.seconds:.1f}s; best valid SR@15 {res.best_sr:.3f}; outputs in {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .catalog import load_dataset
    from .harness.checkpoint import load_checkpoint
    from .harness.policies import AbsGreedyPolicy, MaxEntropyPolicy
    from .harness.training import evaluate, evaluate_policy, write_episode_logs

    catalog, split = load_dataset(args.data)
    if args.policy == "agent":
        if not args.checkpoint:
            raise ValueError("--checkpoint is required for the agent policy")
        report, logs = evaluate(load_checkpoint(args.checkpoint), catalog, split, args.episodes, args.seed)
    else:
        policy = AbsGreedyPolicy() if args.policy == "abs-greedy" else MaxEntropyPolicy(args.rec_prob)
        report, logs = evaluate_policy(policy, catalog, split.test, args.episodes, args.seed)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text)
        write_episode_logs(logs, out / "episodes.jsonl")
    print(f"{args.policy}: SR@15 {report.sr15:.3f}  AT {report.at:.2f}  hDCG {report.hdcg:.4f}  ({report.episodes} episodes)")
    return 0


def cmd_play(args) -> int:
    from .catalog import load_dataset
    from .harness.checkpoint import load_checkpoint
    from .harness.play import play_session

    catalog, _ = load_dataset(args.data)
    nets = load_checkpoint(args.checkpoint).networks()
    result = play_session(nets, catalog, user=args.user)
    if args.log:
        result.write(args.log)
    return 0


def cmd_plot(args) -> int:
    from .harness.plots import export_plots

    for path in export_plots(args.inputs, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic catalog and split")
    g.add_argument("--users", type=int, default=50)
    g.add_argument("--items", type=int, default=200)
    g.add_argument("--attrs", type=int, default=20)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("pretrain", help="TransE embeddings for a dataset")
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--epochs", type=int)
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=1)
    g.set_defaults(func=cmd_pretrain)

    g = sub.add_parser("train", help="train the agent")
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int)
    g.add_argument("--embeddings", help="pretrained table; pretrains on the fly when omitted")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, e.g. agent.tau=0.7")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="greedy evaluation on the test split")
    g.add_argument("--data", required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--policy", choices=("agent", "abs-greedy", "max-entropy"), default="agent")
    g.add_argument("--rec-prob", type=float, default=0.2)
    g.add_argument("--episodes", type=int)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("play", help="answer the agent's questions yourself")
    g.add_argument("--data", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--user", type=int, default=0)
    g.add_argument("--log")
    g.set_defaults(func=cmd_play)

    g = sub.add_parser("plot", help="SVG curves from metrics CSVs")
    g.add_argument("--in", dest="inputs", nargs="+", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

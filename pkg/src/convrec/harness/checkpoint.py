"""Binary checkpoints.

Layout: ``b"DAHC"``, u32 LE format version, u32 LE manifest length, UTF-8
JSON manifest, then raw little-endian float32 blocks in manifest order.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import PolicyNetworks, Trainer
from ..numcore import AdamState, Tensor
from .config import ExperimentConfig, fingerprint

MAGIC = b"DAHC"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    online: dict[str, np.ndarray]
    target: dict[str, np.ndarray]
    emb: np.ndarray
    adam: AdamState
    counters: dict = field(default_factory=dict)
    fingerprint: str = ""

    def networks(self) -> PolicyNetworks:
        online = {k: Tensor(v.copy(), requires_grad=True) for k, v in self.online.items()}
        target = {k: Tensor(v.copy(), requires_grad=True) for k, v in self.target.items()}
        return PolicyNetworks(online, target, self.config.agent, self.emb.copy())


def snapshot(trainer: Trainer, config: ExperimentConfig, counters: dict | None = None) -> Checkpoint:
    nets = trainer.nets
    return Checkpoint(
        config=config,
        online={k: v.data.copy() for k, v in nets.online.items()},
        target={k: v.data.copy() for k, v in nets.target.items()},
        emb=np.array(nets.emb, copy=True),
        adam=_copy_adam(trainer.optimizer),
        counters=dict(counters or {}, grad_steps=trainer.grad_steps),
        fingerprint=fingerprint(config),
    )


def _copy_adam(a: AdamState) -> AdamState:
    return AdamState(
        a.lr, a.beta1, a.beta2, a.eps, a.weight_decay, a.step,
        {k: v.copy() for k, v in a.m.items()},
        {k: v.copy() for k, v in a.v.items()},
        dict(a.counts),
    )


def _blocks(ck: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [(f"online/{k}", v) for k, v in ck.online.items()]
    out += [(f"target/{k}", v) for k, v in ck.target.items()]
    out.append(("emb", ck.emb))
    for k in sorted(ck.adam.m):
        out.append((f"adam_m/{k}", ck.adam.m[k]))
        out.append((f"adam_v/{k}", ck.adam.v[k]))
    return out


def save_checkpoint(ck: Checkpoint, path) -> None:
    blocks = _blocks(ck)
    a = ck.adam
    manifest = {
        "config": ck.config.to_dict(),
        "fingerprint": ck.fingerprint or fingerprint(ck.config),
        "counters": ck.counters,
        "adam": {
            "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps,
            "weight_decay": a.weight_decay, "step": a.step, "counts": a.counts,
        },
        "blocks": [{"name": n, "shape": list(v.shape)} for n, v in blocks],
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for _, v in blocks:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path, expected_fingerprint: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, n_head = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if len(raw) < 12 + n_head:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[12 : 12 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    body = raw[12 + n_head :]
    need = sum(4 * int(np.prod(b["shape"], dtype=np.int64)) for b in manifest["blocks"])
    if len(body) != need:
        raise CheckpointError(f"{path}: expected {need} payload bytes, found {len(body)}")
    arrays, off = {}, 0
    for b in manifest["blocks"]:
        n = int(np.prod(b["shape"], dtype=np.int64))
        arrays[b["name"]] = np.frombuffer(body, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(b["shape"])
        off += 4 * n
    config = ExperimentConfig.from_dict(manifest["config"])
    fp = manifest["fingerprint"]
    if expected_fingerprint is not None and fp != expected_fingerprint:
        warnings.warn(f"checkpoint fingerprint {fp} differs from {expected_fingerprint}", stacklevel=2)
    ad = manifest["adam"]
    adam = AdamState(
        ad["lr"], ad["beta1"], ad["beta2"], ad["eps"], ad["weight_decay"], ad["step"],
        {k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        {k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")},
        {k: int(c) for k, c in ad["counts"].items()},
    )
    return Checkpoint(
        config=config,
        online={k[len("online/"):]: v for k, v in arrays.items() if k.startswith("online/")},
        target={k[len("target/"):]: v for k, v in arrays.items() if k.startswith("target/")},
        emb=arrays["emb"],
        adam=adam,
        counters=manifest["counters"],
        fingerprint=fp,
    )


def restore_trainer(ck: Checkpoint, seed: int = 0) -> Trainer:
    nets = ck.networks()
    tr = Trainer.create(nets, seed)
    tr.optimizer = _copy_adam(ck.adam)
    tr.grad_steps = int(ck.counters.get("grad_steps", 0))
    return tr

"""TransE pretraining of node embeddings over the training-split graph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import HAS_ATTRIBUTE, INTERACT, Catalog, DatasetSplit, KgTriple

EMB_MAGIC = b"DAHCR-EMB v1\n"


@dataclass(frozen=True)
class TransEConfig:
    margin: float = 1.0
    epochs: int = 100
    batch_size: int = 512
    lr: float = 1e-2
    negatives: int = 1
    norm: str = "L2"
    dim: int = 64

    def validate(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1 or self.negatives < 1 or self.dim < 1:
            raise ValueError("batch_size, negatives and dim must be positive")
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass
class EmbeddingTable:
    entities: np.ndarray
    relations: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return np.array_equal(self.entities, other.entities) and np.array_equal(self.relations, other.relations)


def kg_relations(catalog: Catalog) -> tuple[str, ...]:
    rels = list(catalog.relations)
    for name in (INTERACT, HAS_ATTRIBUTE):
        if name not in rels:
            rels.append(name)
    return tuple(rels)


def build_kg_triples(catalog: Catalog, split: DatasetSplit) -> list[KgTriple]:
    """Training graph: train interactions, every item-attribute link, and any
    extra relations shipped with the catalog. Interaction triples from the
    catalog's own graph are never used, so valid/test pairs cannot leak in."""
    rels = kg_relations(catalog)
    interact, has_attr = rels.index(INTERACT), rels.index(HAS_ATTRIBUTE)
    triples = [KgTriple(catalog.user_node(u), interact, catalog.item_node(v)) for u, v in split.train]
    for v, ps in enumerate(catalog.item_attributes):
        triples.extend(KgTriple(catalog.item_node(v), has_attr, catalog.attribute_node(p)) for p in sorted(ps))
    triples.extend(t for t in catalog.kg if catalog.relations[t.relation] not in (INTERACT, HAS_ATTRIBUTE))
    return triples


def _distance(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def transe_score(table: EmbeddingTable, triple: KgTriple, norm: str = "L2") -> float:
    """``-||e_h + e_r - e_t||``; zero is the best possible score."""
    n_ent, n_rel = len(table.entities), len(table.relations)
    if not (0 <= triple.head < n_ent and 0 <= triple.tail < n_ent and 0 <= triple.relation < n_rel):
        raise IndexError(f"triple {triple} outside table of {n_ent} entities / {n_rel} relations")
    diff = table.entities[triple.head] + table.relations[triple.relation] - table.entities[triple.tail]
    return -float(_distance(diff, norm))


def score_triples(table: EmbeddingTable, heads, rels, tails, norm: str = "L2") -> np.ndarray:
    diff = table.entities[heads] + table.relations[rels] - table.entities[tails]
    return -_distance(diff, norm)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(n, 1e-12)


def random_table(n_entities: int, n_relations: int, dim: int = 64, seed: int = 0) -> EmbeddingTable:
    """Seeded unit-norm initialization, also the fallback when no graph exists."""
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(dim)
    ent = _normalize_rows(rng.uniform(-bound, bound, size=(n_entities, dim)))
    rel = _normalize_rows(rng.uniform(-bound, bound, size=(max(n_relations, 1), dim)))
    return EmbeddingTable(ent, rel)


def transe_train(
    triples: list[KgTriple],
    config: TransEConfig,
    seed: int,
    n_entities: int,
    n_relations: int,
) -> EmbeddingTable:
    """Margin-ranking TransE with SGD.

    Each positive gets ``config.negatives`` corruptions that replace the head or
    the tail (probability 1/2 each) with a uniformly drawn entity. Entity rows
    are renormalized to unit length after every update.
    """
    config.validate()
    table = random_table(n_entities, n_relations, config.dim, seed)
    if config.epochs == 0:
        return table
    if not triples:
        raise ValueError("cannot train TransE on an empty triple list")
    rng = np.random.default_rng(seed + 1)
    H = np.array([t.head for t in triples])
    R = np.array([t.relation for t in triples])
    T = np.array([t.tail for t in triples])
    ent, rel = table.entities, table.relations
    for _ in range(config.epochs):
        order = rng.permutation(len(triples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = np.repeat(order[start : start + config.batch_size], config.negatives)
            h, r, t = H[idx], R[idx], T[idx]
            corrupt_head = rng.random(len(idx)) < 0.5
            rand = rng.integers(n_entities, size=len(idx))
            nh = np.where(corrupt_head, rand, h)
            nt = np.where(corrupt_head, t, rand)

            pos = ent[h] + rel[r] - ent[t]
            neg = ent[nh] + rel[r] - ent[nt]
            dp, dn = _distance(pos, config.norm), _distance(neg, config.norm)
            losses = np.maximum(0.0, config.margin + dp - dn)
            assert np.all(losses >= 0)
            epoch_loss += float(losses.sum())
            active = losses > 0
            if not active.any():
                continue
            if config.norm == "L1":
                gp, gn = np.sign(pos), np.sign(neg)
            else:
                gp = pos / np.maximum(dp, 1e-12)[:, None]
                gn = neg / np.maximum(dn, 1e-12)[:, None]
            gp, gn = gp * active[:, None], gn * active[:, None]
            g_ent = np.zeros_like(ent)
            g_rel = np.zeros_like(rel)
            np.add.at(g_ent, h, gp)
            np.add.at(g_ent, t, -gp)
            np.add.at(g_ent, nh, -gn)
            np.add.at(g_ent, nt, gn)
            np.add.at(g_rel, r, gp - gn)
            ent -= config.lr * g_ent
            rel -= config.lr * g_rel
            ent[:] = _normalize_rows(ent)
        table.loss_history.append(epoch_loss)
    return table


def pretrain_for_catalog(
    catalog: Catalog,
    split: DatasetSplit,
    config: TransEConfig | None = None,
    seed: int = 0,
) -> EmbeddingTable:
    config = config or TransEConfig()
    triples = build_kg_triples(catalog, split)
    n_rel = len(kg_relations(catalog))
    if not triples:
        return random_table(catalog.n_nodes, n_rel, config.dim, seed)
    return transe_train(triples, config, seed, catalog.n_nodes, n_rel)


def save_embeddings(table: EmbeddingTable, path) -> None:
    n_ent, dim = table.entities.shape
    n_rel = table.relations.shape[0]
    with open(Path(path), "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(f"{n_ent} {n_rel} {dim}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(table.entities, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(table.relations, dtype="<f4").tobytes())


def load_embeddings(path) -> EmbeddingTable:
    raw = Path(path).read_bytes()
    if not raw.startswith(EMB_MAGIC):
        raise ValueError(f"{path}: not an embedding file")
    rest = raw[len(EMB_MAGIC) :]
    line, _, body = rest.partition(b"\n")
    try:
        n_ent, n_rel, dim = (int(x) for x in line.split())
    except ValueError:
        raise ValueError(f"{path}: malformed embedding header") from None
    expected = 4 * dim * (n_ent + n_rel)
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    floats = np.frombuffer(body, dtype="<f4").astype(np.float64)
    ent = floats[: n_ent * dim].reshape(n_ent, dim)
    rel = floats[n_ent * dim :].reshape(n_rel, dim)
    return EmbeddingTable(ent.copy(), rel.copy())

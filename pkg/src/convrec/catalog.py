"""Static recommendation universe: users, items, attributes and their links.

Global node ids put every entity in one table: users first, then items offset
by the user count, then attributes offset by users + items.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

INTERACT = "interact"
HAS_ATTRIBUTE = "has_attribute"

ITEMS_FILE = "items.jsonl"
INTERACTIONS_FILE = "interactions.jsonl"
KG_FILE = "kg.jsonl"
META_FILE = "meta.json"
SPLIT_FILE = "split.json"


class CatalogError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class KgTriple:
    head: int
    relation: int
    tail: int

    def __post_init__(self):
        if self.head == self.tail:
            raise CatalogError(f"self-loop triple on node {self.head}")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[tuple[int, int], ...]
    valid: tuple[tuple[int, int], ...]
    test: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            object.__setattr__(self, name, tuple((int(u), int(v)) for u, v in getattr(self, name)))
        a, b, c = set(self.train), set(self.valid), set(self.test)
        if a & b or a & c or b & c:
            raise CatalogError("dataset splits overlap")

    def validate(self, catalog: "Catalog") -> None:
        known = set(catalog.interactions)
        for name in ("train", "valid", "test"):
            for pair in getattr(self, name):
                if pair not in known:
                    raise CatalogError(f"{name} split pair {pair} is not an interaction")


@dataclass(frozen=True, eq=False)
class Catalog:
    n_users: int
    n_items: int
    n_attributes: int
    item_attributes: tuple[frozenset, ...]
    interactions: tuple[tuple[int, int], ...]
    relations: tuple[str, ...] = (INTERACT, HAS_ATTRIBUTE)
    kg: tuple[KgTriple, ...] = ()
    attribute_names: tuple[str, ...] | None = None
    _membership: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        attrs = tuple(frozenset(int(p) for p in s) for s in self.item_attributes)
        object.__setattr__(self, "item_attributes", attrs)
        object.__setattr__(self, "interactions", tuple(sorted({(int(u), int(v)) for u, v in self.interactions})))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "kg", tuple(self.kg))
        if self.attribute_names is not None:
            object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        self._validate()
        membership = np.zeros((self.n_items, self.n_attributes), dtype=bool)
        for v, ps in enumerate(attrs):
            membership[v, sorted(ps)] = True
        membership.setflags(write=False)
        object.__setattr__(self, "_membership", membership)

    def _validate(self) -> None:
        if min(self.n_users, self.n_items, self.n_attributes) < 1:
            raise CatalogError("users, items and attributes must all be non-empty")
        if len(self.item_attributes) != self.n_items:
            raise CatalogError(f"{len(self.item_attributes)} attribute sets for {self.n_items} items")
        for v, ps in enumerate(self.item_attributes):
            if not ps:
                raise CatalogError(f"item {v} has an empty attribute set")
            bad = [p for p in ps if not 0 <= p < self.n_attributes]
            if bad:
                raise CatalogError(f"item {v} references unknown attribute {min(bad)}")
        for u, v in self.interactions:
            if not 0 <= u < self.n_users:
                raise CatalogError(f"interaction references unknown user {u}")
            if not 0 <= v < self.n_items:
                raise CatalogError(f"interaction references unknown item {v}")
        n_nodes = self.n_nodes
        for t in self.kg:
            if not (0 <= t.head < n_nodes and 0 <= t.tail < n_nodes):
                raise CatalogError(f"triple {t} references an unknown node")
            if not 0 <= t.relation < len(self.relations):
                raise CatalogError(f"triple {t} uses unknown relation {t.relation}")
        if self.attribute_names is not None and len(self.attribute_names) != self.n_attributes:
            raise CatalogError("attribute_names length does not match attribute count")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and self.n_attributes == other.n_attributes
            and self.item_attributes == other.item_attributes
            and self.interactions == other.interactions
            and self.relations == other.relations
            and self.kg == other.kg
            and self.attribute_names == other.attribute_names
        )

    __hash__ = None

    # -- global node layout ------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_attributes

    def user_node(self, u: int) -> int:
        return int(u)

    def item_node(self, v: int) -> int:
        return self.n_users + int(v)

    def attribute_node(self, p: int) -> int:
        return self.n_users + self.n_items + int(p)

    @property
    def membership(self) -> np.ndarray:
        """Read-only ``(items, attributes)`` boolean matrix."""
        return self._membership

    def attribute_name(self, p: int) -> str:
        if self.attribute_names is not None:
            return self.attribute_names[p]
        return f"attribute-{p}"

    def relation_id(self, name: str) -> int:
        return self.relations.index(name)

    # -- set queries -------------------------------------------------------

    def items_with_all_attributes(self, attrs: Iterable[int]) -> frozenset:
        cols = sorted(set(int(p) for p in attrs))
        if any(not 0 <= p < self.n_attributes for p in cols):
            raise CatalogError(f"invalid attribute id in {cols}")
        if not cols:
            return frozenset(range(self.n_items))
        hit = self._membership[:, cols].all(axis=1)
        return frozenset(np.flatnonzero(hit).tolist())

    def attributes_of_items(self, items: Iterable[int]) -> frozenset:
        rows = sorted(set(int(v) for v in items))
        if any(not 0 <= v < self.n_items for v in rows):
            raise CatalogError(f"invalid item id in {rows}")
        if not rows:
            return frozenset()
        return frozenset(np.flatnonzero(self._membership[rows].any(axis=0)).tolist())


def items_with_all_attributes(catalog: Catalog, attrs: Iterable[int]) -> frozenset:
    return catalog.items_with_all_attributes(attrs)


def attributes_of_items(catalog: Catalog, items: Iterable[int]) -> frozenset:
    return catalog.attributes_of_items(items)


# --------------------------------------------------------------------------
# file format


def _write_lines(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(", ", ": ")))
            fh.write("\n")


def save_catalog(catalog: Catalog, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_lines(
        path / ITEMS_FILE,
        ({"item": v, "attributes": sorted(ps)} for v, ps in enumerate(catalog.item_attributes)),
    )
    _write_lines(path / INTERACTIONS_FILE, ({"user": u, "item": v} for u, v in catalog.interactions))
    _write_lines(path / KG_FILE, ({"head": t.head, "relation": t.relation, "tail": t.tail} for t in catalog.kg))
    meta = {
        "users": catalog.n_users,
        "items": catalog.n_items,
        "attributes": catalog.n_attributes,
        "relations": list(catalog.relations),
    }
    if catalog.attribute_names is not None:
        meta["attribute_names"] = list(catalog.attribute_names)
    with open(path / META_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def save_split(split: DatasetSplit, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = {name: [list(p) for p in getattr(split, name)] for name in ("train", "valid", "test")}
    with open(path / SPLIT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def _read_lines(path: Path, required: tuple[str, ...]) -> list[dict]:
    if not path.exists():
        raise CatalogError(f"missing dataset file {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or any(k not in rec for k in required):
                raise CatalogError(f"{path.name}:{lineno}: expected keys {list(required)}")
            for k in required:
                val = rec[k]
                if k == "attributes":
                    ok = isinstance(val, list) and all(type(x) is int for x in val)
                else:
                    ok = type(val) is int
                if not ok:
                    raise CatalogError(f"{path.name}:{lineno}: bad value for {k!r}")
            rec["_line"] = lineno
            out.append(rec)
    return out


def load_catalog(path) -> Catalog:
    """Read a dataset directory written by :func:`save_catalog`.

    Ids in every file must already be dense (``0..count-1``); anything outside
    the counts declared in ``meta.json`` is rejected as a dangling reference.
    """
    path = Path(path)
    meta_path = path / META_FILE
    if not meta_path.exists():
        raise CatalogError(f"missing dataset file {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        n_users, n_items, n_attrs = int(meta["users"]), int(meta["items"]), int(meta["attributes"])
        relations = tuple(meta.get("relations", [INTERACT, HAS_ATTRIBUTE]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CatalogError(f"{META_FILE}: malformed metadata ({exc})") from None

    item_sets: list[frozenset | None] = [None] * n_items
    for rec in _read_lines(path / ITEMS_FILE, ("item", "attributes")):
        v, line = rec["item"], rec["_line"]
        if not 0 <= v < n_items:
            raise CatalogError(f"{ITEMS_FILE}:{line}: item {v} outside declared range 0..{n_items - 1}")
        if item_sets[v] is not None:
            raise CatalogError(f"{ITEMS_FILE}:{line}: duplicate item {v}")
        for p in rec["attributes"]:
            if not 0 <= p < n_attrs:
                raise CatalogError(f"{ITEMS_FILE}:{line}: dangling attribute id {p}")
        if not rec["attributes"]:
            raise CatalogError(f"{ITEMS_FILE}:{line}: item {v} has an empty attribute set")
        item_sets[v] = frozenset(rec["attributes"])
    missing = [v for v, s in enumerate(item_sets) if s is None]
    if missing:
        raise CatalogError(f"{ITEMS_FILE}: no attribute set for item {missing[0]}")

    interactions = []
    for rec in _read_lines(path / INTERACTIONS_FILE, ("user", "item")):
        u, v, line = rec["user"], rec["item"], rec["_line"]
        if not 0 <= u < n_users:
            raise CatalogError(f"{INTERACTIONS_FILE}:{line}: dangling user id {u}")
        if not 0 <= v < n_items:
            raise CatalogError(f"{INTERACTIONS_FILE}:{line}: dangling item id {v}")
        interactions.append((u, v))

    kg = []
    if (path / KG_FILE).exists():
        n_nodes = n_users + n_items + n_attrs
        for rec in _read_lines(path / KG_FILE, ("head", "relation", "tail")):
            line = rec["_line"]
            if not (0 <= rec["head"] < n_nodes and 0 <= rec["tail"] < n_nodes):
                raise CatalogError(f"{KG_FILE}:{line}: dangling node id")
            if not 0 <= rec["relation"] < len(relations):
                raise CatalogError(f"{KG_FILE}:{line}: dangling relation id {rec['relation']}")
            try:
                kg.append(KgTriple(rec["head"], rec["relation"], rec["tail"]))
            except CatalogError as exc:
                raise CatalogError(f"{KG_FILE}:{line}: {exc}") from None

    return Catalog(
        n_users=n_users,
        n_items=n_items,
        n_attributes=n_attrs,
        item_attributes=tuple(item_sets),
        interactions=tuple(interactions),
        relations=relations,
        kg=tuple(kg),
        attribute_names=meta.get("attribute_names"),
    )


def load_split(path) -> DatasetSplit | None:
    split_path = Path(path) / SPLIT_FILE
    if not split_path.exists():
        return None
    try:
        raw = json.loads(split_path.read_text(encoding="utf-8"))
        return DatasetSplit(
            train=tuple(tuple(p) for p in raw["train"]),
            valid=tuple(tuple(p) for p in raw["valid"]),
            test=tuple(tuple(p) for p in raw["test"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CatalogError):
            raise
        raise CatalogError(f"{SPLIT_FILE}: malformed split ({exc})") from None


def load_dataset(path) -> tuple[Catalog, DatasetSplit]:
    """Catalog plus split; without ``split.json`` a deterministic 70/10/20 split is derived."""
    catalog = load_catalog(path)
    split = load_split(path)
    if split is None:
        split = split_interactions(catalog.interactions, np.random.default_rng(0))
    split.validate(catalog)
    return catalog, split


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    users: int = 50
    items: int = 200
    attributes: int = 20
    attrs_per_item: tuple[int, int] = (2, 5)
    interactions_per_user: tuple[int, int] = (5, 15)
    taste_size: tuple[int, int] = (1, 3)

    def validate(self) -> None:
        if min(self.users, self.items, self.attributes) < 1:
            raise CatalogError("users, items and attributes must be positive")
        for name in ("attrs_per_item", "interactions_per_user", "taste_size"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise CatalogError(f"{name} range {lo}-{hi} is degenerate")
        if self.attrs_per_item[1] > self.attributes:
            raise CatalogError(
                f"infeasible config: up to {self.attrs_per_item[1]} attributes per item but only {self.attributes} exist"
            )


def split_interactions(pairs, rng: np.random.Generator, fractions=(0.7, 0.1)) -> DatasetSplit:
    pairs = sorted(set(tuple(p) for p in pairs))
    order = rng.permutation(len(pairs))
    n_train = int(round(fractions[0] * len(pairs)))
    n_valid = int(round(fractions[1] * len(pairs)))
    shuffled = [pairs[i] for i in order]
    return DatasetSplit(
        train=tuple(sorted(shuffled[:n_train])),
        valid=tuple(sorted(shuffled[n_train : n_train + n_valid])),
        test=tuple(sorted(shuffled[n_train + n_valid :])),
    )


def generate_synthetic(config: SyntheticConfig | None = None, seed: int = 0) -> tuple[Catalog, DatasetSplit]:
    """Reproducible synthetic catalog and its 70/10/20 interaction split.

    Each item gets a uniformly random attribute subset whose size is uniform in
    ``attrs_per_item``. Each user gets a taste subset anchored on one attribute
    of a random item, and interacts only with items sharing at least one taste
    attribute, so every user has at least one reachable item.
    """
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    P = cfg.attributes

    item_sets = []
    for _ in range(cfg.items):
        k = int(rng.integers(cfg.attrs_per_item[0], cfg.attrs_per_item[1] + 1))
        item_sets.append(frozenset(int(p) for p in rng.choice(P, size=k, replace=False)))
    membership = np.zeros((cfg.items, P), dtype=bool)
    for v, ps in enumerate(item_sets):
        membership[v, sorted(ps)] = True

    interactions = []
    for u in range(cfg.users):
        anchor = int(rng.integers(cfg.items))
        taste = {int(rng.choice(sorted(item_sets[anchor])))}
        size = int(rng.integers(cfg.taste_size[0], cfg.taste_size[1] + 1))
        extra = [int(p) for p in rng.permutation(P) if p not in taste][: size - 1]
        taste.update(extra)
        eligible = np.flatnonzero(membership[:, sorted(taste)].any(axis=1))
        n = int(rng.integers(cfg.interactions_per_user[0], cfg.interactions_per_user[1] + 1))
        chosen = rng.choice(eligible, size=min(n, len(eligible)), replace=False)
        interactions.extend((u, int(v)) for v in chosen)

    interactions = sorted(set(interactions))
    interact, has_attr = 0, 1
    kg = [KgTriple(u, interact, cfg.users + v) for u, v in interactions]
    kg += [
        KgTriple(cfg.users + v, has_attr, cfg.users + cfg.items + p)
        for v, ps in enumerate(item_sets)
        for p in sorted(ps)
    ]
    catalog = Catalog(
        n_users=cfg.users,
        n_items=cfg.items,
        n_attributes=P,
        item_attributes=tuple(item_sets),
        interactions=tuple(interactions),
        relations=(INTERACT, HAS_ATTRIBUTE),
        kg=tuple(kg),
    )
    split = split_interactions(interactions, rng)
    return catalog, split

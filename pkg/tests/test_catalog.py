import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.catalog import (
    Catalog,
    CatalogError,
    DatasetSplit,
    KgTriple,
    SyntheticConfig,
    attributes_of_items,
    generate_synthetic,
    items_with_all_attributes,
    load_catalog,
    load_dataset,
    save_catalog,
    save_split,
)


def tiny_catalog():
    return Catalog(
        n_users=2,
        n_items=4,
        n_attributes=3,
        item_attributes=(frozenset({0}), frozenset({0, 1}), frozenset({1, 2}), frozenset({0, 2})),
        interactions=((0, 1), (1, 2)),
    )


def test_set_queries():
    c = tiny_catalog()
    assert items_with_all_attributes(c, {0}) == {0, 1, 3}
    assert items_with_all_attributes(c, {0, 2}) == {3}
    assert items_with_all_attributes(c, set()) == {0, 1, 2, 3}
    assert attributes_of_items(c, {0, 2}) == {0, 1, 2}
    assert attributes_of_items(c, set()) == frozenset()


def test_node_layout():
    c = tiny_catalog()
    assert (c.user_node(1), c.item_node(0), c.attribute_node(0)) == (1, 2, 6)
    assert c.n_nodes == 9


def test_invariants_enforced():
    with pytest.raises(CatalogError):
        Catalog(1, 1, 1, (frozenset(),), ())
    with pytest.raises(CatalogError):
        Catalog(1, 1, 1, (frozenset({5}),), ())
    with pytest.raises(CatalogError):
        Catalog(1, 1, 1, (frozenset({0}),), ((3, 0),))
    with pytest.raises(ValueError):
        KgTriple(1, 0, 1)


def test_split_disjoint():
    with pytest.raises(ValueError):
        DatasetSplit(train=((0, 1),), valid=((0, 1),), test=())


def test_roundtrip_and_four_files(tmp_path):
    c = Catalog(1, 1, 1, (frozenset({0}),), ((0, 0),))
    save_catalog(c, tmp_path)
    assert sorted(os.listdir(tmp_path)) == ["interactions.jsonl", "items.jsonl", "kg.jsonl", "meta.json"]
    loaded = load_catalog(tmp_path)
    assert loaded == c and (loaded.n_items, loaded.n_users, loaded.n_attributes) == (1, 1, 1)


def test_dangling_attribute_reports_line(tmp_path):
    save_catalog(Catalog(1, 1, 1, (frozenset({0}),), ((0, 0),)), tmp_path)
    (tmp_path / "items.jsonl").write_text(json.dumps({"item": 0, "attributes": [99]}) + "\n")
    with pytest.raises(CatalogError, match="items.jsonl"):
        load_catalog(tmp_path)


def test_malformed_line_reports_position(tmp_path):
    save_catalog(tiny_catalog(), tmp_path)
    with open(tmp_path / "interactions.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(CatalogError, match=r"interactions.jsonl:3"):
        load_catalog(tmp_path)


def test_missing_file(tmp_path):
    with pytest.raises(CatalogError):
        load_catalog(tmp_path)


def test_synthetic_determinism(tmp_path):
    a, sa = generate_synthetic(SyntheticConfig(), 7)
    b, sb = generate_synthetic(SyntheticConfig(), 7)
    assert a == b and sa == sb
    save_catalog(a, tmp_path / "x")
    save_catalog(b, tmp_path / "y")
    for name in os.listdir(tmp_path / "x"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_synthetic_single_item():
    c, _ = generate_synthetic(SyntheticConfig(users=1, items=1, attributes=1, attrs_per_item=(1, 1), interactions_per_user=(1, 1)), 0)
    assert c.n_items == 1 and c.item_attributes[0] == {0}


def test_infeasible_config():
    with pytest.raises(CatalogError):
        generate_synthetic(SyntheticConfig(attrs_per_item=(30, 30)), 0)


def test_split_proportions(fixture_data):
    c, s = fixture_data
    n = len(c.interactions)
    assert len(s.train) + len(s.valid) + len(s.test) == n
    assert abs(len(s.train) - 0.7 * n) <= 1 and abs(len(s.valid) - 0.1 * n) <= 1
    s.validate(c)


def test_load_dataset_with_split(tmp_path, small_data):
    c, s = small_data
    save_catalog(c, tmp_path)
    save_split(s, tmp_path)
    c2, s2 = load_dataset(tmp_path)
    assert c2 == c and s2 == s


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 6))
def test_save_load_identity(tmp_path_factory, seed, items, attrs):
    cfg = SyntheticConfig(users=3, items=items, attributes=attrs, attrs_per_item=(1, attrs), interactions_per_user=(1, 3), taste_size=(1, 1))
    c, _ = generate_synthetic(cfg, seed)
    d = tmp_path_factory.mktemp("cat")
    save_catalog(c, d)
    assert load_catalog(d) == c


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_set_queries_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    c, _ = generate_synthetic(SyntheticConfig(users=2, items=15, attributes=6, attrs_per_item=(1, 4), interactions_per_user=(1, 2)), seed)
    attrs = set(rng.choice(6, size=rng.integers(0, 3), replace=False).tolist())
    expect = {v for v in range(15) if attrs <= c.item_attributes[v]}
    assert items_with_all_attributes(c, attrs) == expect
    items = set(rng.choice(15, size=rng.integers(0, 5), replace=False).tolist())
    assert attributes_of_items(c, items) == set().union(*[c.item_attributes[v] for v in items]) if items else True

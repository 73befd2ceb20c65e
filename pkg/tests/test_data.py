import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrec_sim.data import (
    DataFormatError,
    RawInteraction,
    build_dataset,
    leave_one_out,
    load_interactions,
    load_split,
    public_count,
    sample_public,
    save_split,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_movielens_line(tmp_path):
    p = write(tmp_path, "u.data", "1\t50\t5\t887431883\n")
    assert load_interactions(p, "movielens_tab") == [RawInteraction("1", "50", 5.0)]


def test_empty_file(tmp_path):
    assert load_interactions(write(tmp_path, "e.csv", ""), "csv") == []


def test_csv_too_many_fields_reports_line(tmp_path):
    p = write(tmp_path, "bad.csv", "u1,i1\na,b,c,d,e\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_interactions(p, "csv")


def test_csv_header_is_optional(tmp_path):
    with_header = write(tmp_path, "h.csv", "user,item,weight\nu1,i1,2.5\nu2,i1\n")
    without = write(tmp_path, "n.csv", "u1,i1,2.5\nu2,i1\n")
    assert load_interactions(with_header, "csv") == load_interactions(without, "csv")
    assert load_interactions(without, "csv")[1] == RawInteraction("u2", "i1", None)


def test_non_numeric_weight(tmp_path):
    with pytest.raises(DataFormatError, match="line 1"):
        load_interactions(write(tmp_path, "w.csv", "u,i,high\n"), "csv")


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_interactions(tmp_path / "nope.data")


def test_build_dataset_dedupes():
    raw = [RawInteraction("u1", "i1"), RawInteraction("u1", "i1"), RawInteraction("u2", "i1")]
    ds = build_dataset(raw)
    assert (ds.n_users, ds.n_items, len(ds)) == (2, 1, 2)


def test_build_dataset_empty():
    with pytest.raises(ValueError):
        build_dataset([])


def test_reindex_by_first_appearance_is_bijective():
    raw = [RawInteraction(u, i) for u, i in [("b", "y"), ("a", "x"), ("b", "x"), ("c", "z")]]
    ds = build_dataset(raw)
    assert ds.user_map == ["b", "a", "c"]
    assert ds.item_map == ["y", "x", "z"]
    decoded = {(ds.user_map[u], ds.item_map[i]) for u, i in ds.pairs()}
    assert decoded == {(r.user, r.item) for r in raw}
    assert build_dataset([RawInteraction(*p) for p in sorted(decoded)]).pair_set() != set()


def toy_dataset(rng, n_users=12, n_items=15):
    raw = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=int(rng.integers(1, 8)), replace=False):
            raw.append(RawInteraction(f"u{u}", f"i{i}"))
    return build_dataset(raw)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_leave_one_out_partitions(seed):
    rng = np.random.default_rng(seed)
    ds = toy_dataset(rng)
    split = leave_one_out(ds, seed)
    train = split.train.pair_set()
    test = set(split.test.items())
    assert not train & test
    assert train | test == ds.pair_set()
    for u, pos in enumerate(ds.positives):
        assert (u in split.test) == (pos.size >= 2)
        assert split.train.positives[u].size == pos.size - (pos.size >= 2)


def test_leave_one_out_single_interaction_user():
    ds = build_dataset([RawInteraction("a", "x"), RawInteraction("b", "x"), RawInteraction("b", "y"),
                        RawInteraction("b", "z")])
    split = leave_one_out(ds, 0)
    assert 0 not in split.test and split.train.positives[0].tolist() == [0]
    assert split.test[1] in {0, 1, 2} and split.train.positives[1].size == 2


def test_leave_one_out_deterministic():
    ds = toy_dataset(np.random.default_rng(5))
    assert leave_one_out(ds, 7).test == leave_one_out(ds, 7).test


@pytest.mark.parametrize("n,xi,expected", [(106, 0.01, 1), (49, 0.01, 0), (50, 0.01, 1), (10, 0.25, 3), (3, 0.0, 0)])
def test_public_count_rounds_half_up(n, xi, expected):
    assert public_count(n, xi) == expected


def test_sample_public_extremes():
    ds = toy_dataset(np.random.default_rng(2))
    assert len(sample_public(ds, 0.0, 1)) == 0
    assert sample_public(ds, 1.0, 1).pair_set() == ds.pair_set()
    with pytest.raises(ValueError):
        sample_public(ds, 1.5, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_sample_public_monotone_and_bounded(seed, a, b):
    lo, hi = sorted((a, b))
    ds = toy_dataset(np.random.default_rng(seed))
    small, big = sample_public(ds, lo, seed), sample_public(ds, hi, seed)
    assert small.pair_set() <= big.pair_set() <= ds.pair_set()
    assert len(big) <= hi * len(ds) + ds.n_users


def test_split_sidecar_roundtrip(tmp_path):
    ds = toy_dataset(np.random.default_rng(9))
    split = leave_one_out(ds, 4)
    path = tmp_path / "split.json"
    save_split(split, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"seed", "test", "user_map", "item_map"}
    again = load_split(ds, path)
    assert again.test == split.test and again.seed == 4
    assert again.train.pair_set() == split.train.pair_set()

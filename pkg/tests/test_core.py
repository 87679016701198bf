import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabgraph.core import (
    TOL,
    BinaryAdjacency,
    Dataset,
    SeededRng,
    WeightedAdjacency,
    cholesky,
    derive_seed,
    invert_spd,
    load_dataset,
    save_dataset,
    symmetrize,
)
from tabgraph.errors import NotPositiveDefinite


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_2x2():
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_cholesky_round_trip(p, seed):
    g = np.random.default_rng(seed)
    L = np.tril(g.normal(size=(p, p)), -1) + np.diag(g.uniform(0.5, 2.0, p))
    m = L @ L.T
    got = cholesky(m)
    assert np.linalg.norm(got - L) / np.linalg.norm(L) < TOL.reconstruction
    assert np.linalg.norm(got @ got.T - m) / np.linalg.norm(m) < TOL.reconstruction


def test_invert_spd_examples():
    assert np.allclose(invert_spd(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(invert_spd(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    np.testing.assert_allclose(invert_spd([[2.0, 1.0], [1.0, 2.0]]), [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]])


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_invert_spd_involution(p, seed):
    g = np.random.default_rng(seed)
    a = g.normal(size=(p, p))
    m = a @ a.T + p * np.eye(p)
    inv = invert_spd(m)
    assert np.array_equal(inv, inv.T)
    assert np.abs(m @ inv - np.eye(p)).max() < 1e-8
    np.testing.assert_allclose(invert_spd(inv), m, rtol=1e-8, atol=1e-8)


def test_symmetrize_examples():
    z = BinaryAdjacency(np.zeros((3, 3), int))
    assert np.array_equal(symmetrize(z).entries, z.entries)
    one = BinaryAdjacency([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert symmetrize(one).edges() == [(0, 1), (1, 0)]


@given(st.integers(2, 7).flatmap(lambda p: st.lists(st.integers(0, 1), min_size=p * p, max_size=p * p)))
def test_symmetrize_idempotent(flat):
    p = int(round(len(flat) ** 0.5))
    m = np.array(flat).reshape(p, p)
    np.fill_diagonal(m, 0)
    s = symmetrize(BinaryAdjacency(m))
    assert s.is_symmetric
    assert np.array_equal(symmetrize(s).entries, s.entries)


@pytest.mark.parametrize("bad", [[[1, 0], [0, 0]], [[0, 2], [0, 0]], [[0, 1, 0], [1, 0, 0]]])
def test_binary_adjacency_validation(bad):
    with pytest.raises(ValueError):
        BinaryAdjacency(bad)


def test_weighted_adjacency_validation():
    WeightedAdjacency([[0.0, 1.0], [0.5, 0.0]])
    with pytest.raises(ValueError):
        WeightedAdjacency([[0.0, 1.5], [0.5, 0.0]])
    with pytest.raises(ValueError):
        WeightedAdjacency([[0.1, 0.5], [0.5, 0.0]])


def test_dataset_validation():
    truth = BinaryAdjacency(np.zeros((3, 3), int))
    with pytest.raises(ValueError):
        Dataset(np.zeros((4, 3)), 3, truth, {})
    with pytest.raises(ValueError):
        Dataset(np.full((4, 3), np.nan), 0, truth, {})
    with pytest.raises(ValueError):
        Dataset(np.zeros((4, 2)), 0, truth, {})


def test_seeded_rng_streams():
    a = SeededRng(42).generator().random(5)
    b = SeededRng(42).generator().random(5)
    assert np.array_equal(a, b)
    c = SeededRng(42).child("x").generator().random(5)
    d = SeededRng(42).child("y").generator().random(5)
    assert not np.array_equal(c, d)
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2) != derive_seed(1, "a", 3)


def test_dataset_round_trip(tmp_path, mvn_ds):
    csv_path, json_path = save_dataset(mvn_ds, tmp_path)
    assert csv_path.read_text().splitlines()[0] == ",".join(f"f{j}" for j in range(10))
    side = json.loads(json_path.read_text())
    assert {"p", "n", "target_index", "seed", "generator", "adjacency", "params"} <= set(side)
    back = load_dataset(tmp_path)
    assert np.array_equal(back.values, mvn_ds.values)
    assert back.target_index == mvn_ds.target_index
    assert np.array_equal(back.truth.entries, mvn_ds.truth.entries)
